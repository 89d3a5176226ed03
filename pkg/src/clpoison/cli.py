"""Command-line orchestrator.

Batch pipeline stages driven by an INI config: pretrain, poison, train,
probe, defend-train, sweep, report, visualize. Config defaults equal the
full-scale reference values; a single `scale` knob shrinks epochs,
iterations, dataset size, and queue capacity for desk-scale runs. Exit
codes: 0 success, 2 validation failure, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import configparser
import json
import os
import sys
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .datasets import (
    DatasetBundle,
    load_cifar10_binary,
    make_bundle,
    read_poison_file,
    write_poison_file,
    apply_perturbations,
    split_dataset,
)
from .defenses import DEFENSE_KINDS, DefenseTransform
from .errors import ConfigError
from .eval_analysis import (
    AttackSpec,
    DefenseSpec,
    VictimSpec,
    generate_poison,
    load_results,
    pivot_report,
    render_noise_grid,
    run_cell,
    save_grid_png,
    sweep as run_sweep,
)
from .frameworks.models import load_checkpoint, save_checkpoint
from .frameworks.probe import linear_probe
from .frameworks.train import FRAMEWORKS, FrameworkConfig, train_encoder
from .poison.attacks import (
    ATTACK_SCHEDULES,
    ATTACK_TYPES,
    AttackSchedule,
    ClassifierConfig,
)
from .poison.pgd import PgdConfig
from .utils import derive_seed

DATA_DIR_ENV = "CLPOISON_DATA_DIR"

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3


def _parse_float(text: str) -> float:
    """Floats, with 'a/b' fraction support so configs can say 8/255."""
    text = text.strip()
    if "/" in text:
        num, den = text.split("/", 1)
        return float(num) / float(den)
    return float(text)


def _parse_int(text: str) -> int:
    return int(text.strip())


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_str(text: str) -> str:
    return text.strip()


def _parse_ints(text: str) -> tuple[int, ...]:
    return tuple(int(p) for p in text.split(",") if p.strip())


def _parse_floats(text: str) -> tuple[float, ...]:
    return tuple(_parse_float(p) for p in text.split(",") if p.strip())


def _auto(parser):
    def parse(text: str):
        if text.strip().lower() == "auto":
            return None
        return parser(text)

    return parse


# key -> (parser, default). "auto" defers to per-framework / per-attack defaults.
CONFIG_SCHEMA: dict[str, dict] = {
    "dataset": {
        "kind": (_parse_str, "synthetic"),
        "classes": (_parse_int, 10),
        "per_class": (_parse_int, 5000),
        "height": (_parse_int, 32),
        "width": (_parse_int, 32),
        "channels": (_parse_int, 3),
        "seed": (_parse_int, 0),
        "downstream_fraction": (_parse_float, 1.0 / 3.0),
        "root": (_parse_str, ""),
    },
    "victim": {
        "framework": (_parse_str, "simclr"),
        "temperature": (_auto(_parse_float), None),
        "learning_rate": (_auto(_parse_float), None),
        "weight_decay": (_parse_float, 1e-4),
        "sgd_momentum": (_parse_float, 0.9),
        "encoder_momentum": (_auto(_parse_float), None),
        "epochs": (_parse_int, 1000),
        "batch_size": (_parse_int, 512),
        "queue_size": (_parse_int, 4096),
        "feature_dim": (_parse_int, 64),
        "proj_hidden": (_parse_int, 128),
        "proj_dim": (_parse_int, 128),
        "arch": (_parse_str, "conv"),
        "conv_widths": (_parse_ints, (16, 32, 64)),
    },
    "attack": {
        "type": (_parse_str, "emp-cl-s"),
        "framework": (_parse_str, "simclr"),
        "epsilon": (_parse_float, 8.0 / 255.0),
        "alpha": (_auto(_parse_float), None),
        "iterations": (_auto(_parse_int), None),
        "pgd_steps": (_auto(_parse_int), None),
        "data_fraction": (_auto(_parse_float), None),
        "branch_mode": (_parse_str, "dual"),
        "model_passes": (_parse_int, 1),
        "pretrain_epochs": (_auto(_parse_int), None),
    },
    "defense": {
        "kind": (_parse_str, "none"),
        "sigma": (_parse_float, 8.0 / 255.0),
        "kernel_size": (_parse_int, 3),
        "hole_size": (_parse_int, 16),
        "drop_prob": (_parse_float, 0.25),
        "clip_fraction": (_parse_float, 0.5),
    },
    "probe": {
        "epochs": (_parse_int, 100),
        "test_fraction": (_parse_float, 0.2),
        "learning_rate": (_parse_float, 0.01),
    },
    "run": {
        "seed": (_parse_int, 0),
        "scale": (_parse_float, 1.0),
        "out": (_parse_str, "runs"),
        "poison_fraction": (_parse_float, 1.0),
        "deterministic": (_parse_bool, True),
    },
    "sweep": {
        "axis": (_parse_str, "poison_fraction"),
        "values": (_parse_str, "0,0.5,1.0"),
    },
}


def parse_config_file(path: str | Path | None) -> tuple[dict, list[str]]:
    """Read the INI file into {section: {key: typed value}}, collecting all
    violations (unknown sections/keys, unparsable values) instead of stopping
    at the first."""
    values = {s: {k: d for k, (_, d) in keys.items()} for s, keys in CONFIG_SCHEMA.items()}
    problems: list[str] = []
    if path is None:
        return values, problems
    path = Path(path)
    if not path.exists():
        return values, [f"config file {path} does not exist"]
    parser = configparser.ConfigParser()
    try:
        parser.read(path)
    except configparser.Error as exc:
        return values, [f"config file {path} cannot be parsed: {exc}"]
    for section in parser.sections():
        if section not in CONFIG_SCHEMA:
            problems.append(f"unknown config section [{section}]")
            continue
        for key, raw in parser.items(section):
            if key not in CONFIG_SCHEMA[section]:
                problems.append(f"unknown config key {section}.{key}")
                continue
            parse_fn = CONFIG_SCHEMA[section][key][0]
            try:
                values[section][key] = parse_fn(raw)
            except (ValueError, ZeroDivisionError) as exc:
                problems.append(f"config key {section}.{key}={raw!r} is invalid: {exc}")
    return values, problems


@dataclass
class ResolvedConfig:
    """Typed experiment plan built from a validated config."""

    echo: dict
    dataset: dict
    victim_cfg: FrameworkConfig
    attacker_cfg: FrameworkConfig | None
    classifier_cfg: ClassifierConfig
    attack_type: str
    schedule: AttackSchedule
    pgd: PgdConfig
    pretrain_epochs: int
    defense: DefenseTransform
    probe: dict
    seed: int
    scale: float
    out_dir: Path
    poison_fraction: float
    deterministic: bool
    sweep_axis: str
    sweep_values: list


def _scaled_epochs(epochs: int, scale: float) -> int:
    return max(1, round(epochs * scale))


def resolve_config(values: dict, overrides: dict | None = None) -> tuple[ResolvedConfig | None, list[str]]:
    problems: list[str] = []
    values = {s: dict(kv) for s, kv in values.items()}
    for key, val in (overrides or {}).items():
        if val is not None:
            values["run"][key] = val

    run = values["run"]
    scale = run["scale"]
    if not 0.0 < scale <= 1.0:
        problems.append(f"run.scale must lie in (0, 1], got {scale}")
        scale = 1.0
    if not 0.0 <= run["poison_fraction"] <= 1.0:
        problems.append(f"run.poison_fraction must lie in [0, 1], got {run['poison_fraction']}")

    ds = dict(values["dataset"])
    if ds["kind"] == "synthetic":
        ds["per_class"] = max(2, round(ds["per_class"] * scale))
        if ds["classes"] < 2:
            problems.append("dataset.classes must be >= 2")
    elif ds["kind"] == "cifar10-bin":
        if not ds["root"]:
            ds["root"] = os.environ.get(DATA_DIR_ENV, "")
        if not ds["root"]:
            problems.append(
                f"dataset.root (or ${DATA_DIR_ENV}) is required for kind=cifar10-bin"
            )
        elif not Path(ds["root"]).exists():
            problems.append(f"dataset.root {ds['root']} does not exist")
    else:
        problems.append(f"dataset.kind must be synthetic or cifar10-bin, got {ds['kind']!r}")
    if not 0.0 < ds["downstream_fraction"] < 1.0:
        problems.append("dataset.downstream_fraction must lie in (0, 1)")

    vic = values["victim"]
    dataset_size = None
    if ds["kind"] == "synthetic":
        # pretrain split size after the downstream holdout
        dataset_size = round((1.0 - ds["downstream_fraction"]) * ds["classes"] * ds["per_class"])
    victim_cfg = None
    try:
        overrides_v = {
            k: vic[k]
            for k in (
                "weight_decay", "sgd_momentum", "feature_dim",
                "proj_hidden", "proj_dim", "arch", "conv_widths",
            )
        }
        if vic["temperature"] is not None:
            overrides_v["temperature"] = vic["temperature"]
        if vic["learning_rate"] is not None:
            overrides_v["learning_rate"] = vic["learning_rate"]
        if vic["encoder_momentum"] is not None:
            overrides_v["encoder_momentum"] = vic["encoder_momentum"]
        batch = vic["batch_size"]
        if dataset_size is not None and batch > dataset_size:
            batch = max(2, dataset_size)  # desk-scale clamp, documented
        victim_cfg = FrameworkConfig.defaults(
            vic["framework"],
            epochs=_scaled_epochs(vic["epochs"], scale),
            batch_size=batch,
            queue_size=max(64, round(vic["queue_size"] * scale)),
            **overrides_v,
        )
    except (ConfigError, ValueError) as exc:
        problems.append(f"victim config invalid: {exc}")

    atk = values["attack"]
    attack_type = atk["type"]
    schedule = None
    pgd = None
    attacker_cfg = None
    classifier_cfg = ClassifierConfig(
        epochs=_scaled_epochs(30, scale) if scale != 1.0 else 30,
        batch_size=victim_cfg.batch_size if victim_cfg else 128,
    )
    if attack_type not in ATTACK_TYPES:
        problems.append(f"attack.type must be one of {ATTACK_TYPES}, got {attack_type!r}")
    else:
        if attack_type != "none":
            base = ATTACK_SCHEDULES[attack_type]
            iters = atk["iterations"] if atk["iterations"] is not None else base.iterations
            steps = atk["pgd_steps"] if atk["pgd_steps"] is not None else base.pgd_steps
            frac = atk["data_fraction"] if atk["data_fraction"] is not None else base.data_fraction
            if attack_type in ("ap-cl", "ap-sup"):
                steps = max(1, round(steps * scale))
            else:
                iters = max(1, round(iters * scale))
            try:
                schedule = AttackSchedule(
                    iterations=iters, pgd_steps=steps, data_fraction=frac,
                    branch_mode=atk["branch_mode"], model_passes=atk["model_passes"],
                )
            except ValueError as exc:
                problems.append(f"attack schedule invalid: {exc}")
        try:
            pgd = PgdConfig(epsilon=atk["epsilon"], alpha=atk["alpha"])
        except ValueError as exc:
            problems.append(f"attack PGD settings invalid (PgdConfig invariant): {exc}")
        if attack_type in ("ap-cl", "emp-cl-s", "emp-cl-c"):
            if atk["framework"] not in FRAMEWORKS:
                problems.append(
                    f"attack.framework must be one of {FRAMEWORKS}, got {atk['framework']!r}"
                )
            elif victim_cfg is not None:
                attacker_cfg = FrameworkConfig.defaults(
                    atk["framework"],
                    epochs=victim_cfg.epochs,
                    batch_size=victim_cfg.batch_size,
                    queue_size=victim_cfg.queue_size,
                    weight_decay=victim_cfg.weight_decay,
                    sgd_momentum=victim_cfg.sgd_momentum,
                    feature_dim=victim_cfg.feature_dim,
                    proj_hidden=victim_cfg.proj_hidden,
                    proj_dim=victim_cfg.proj_dim,
                    arch=victim_cfg.arch,
                    conv_widths=victim_cfg.conv_widths,
                )

    defense = None
    dfn = values["defense"]
    try:
        defense = DefenseTransform(
            kind=dfn["kind"], sigma=dfn["sigma"], kernel_size=dfn["kernel_size"],
            hole_size=dfn["hole_size"], drop_prob=dfn["drop_prob"],
            clip_fraction=dfn["clip_fraction"],
        )
    except ValueError as exc:
        problems.append(f"defense config invalid: {exc}")

    prb = values["probe"]
    if prb["epochs"] < 1:
        problems.append("probe.epochs must be >= 1")
    if not 0.0 < prb["test_fraction"] < 1.0:
        problems.append("probe.test_fraction must lie in (0, 1)")

    swp = values["sweep"]
    sweep_values: list = []
    if swp["axis"] == "poison_fraction":
        try:
            sweep_values = list(_parse_floats(swp["values"]))
        except ValueError as exc:
            problems.append(f"sweep.values invalid: {exc}")
    else:
        sweep_values = [v.strip() for v in swp["values"].split(",") if v.strip()]
    if swp["axis"] not in ("poison_fraction", "branch_mode", "defense", "victim_framework"):
        problems.append(f"sweep.axis {swp['axis']!r} is not a sweepable axis")

    if problems:
        return None, problems

    pretrain_epochs = (
        atk["pretrain_epochs"]
        if atk["pretrain_epochs"] is not None
        else victim_cfg.epochs
    )
    echo = {s: {k: _echo_value(v) for k, v in kv.items()} for s, kv in values.items()}
    resolved = ResolvedConfig(
        echo=echo,
        dataset=ds,
        victim_cfg=victim_cfg,
        attacker_cfg=attacker_cfg,
        classifier_cfg=classifier_cfg,
        attack_type=attack_type,
        schedule=schedule if schedule is not None else AttackSchedule(),
        pgd=pgd,
        pretrain_epochs=pretrain_epochs,
        defense=defense,
        probe=prb,
        seed=run["seed"],
        scale=scale,
        out_dir=Path(run["out"]),
        poison_fraction=run["poison_fraction"],
        deterministic=run["deterministic"],
        sweep_axis=swp["axis"],
        sweep_values=sweep_values,
    )
    return resolved, []


def _echo_value(v):
    if isinstance(v, tuple):
        return list(v)
    if isinstance(v, Path):
        return str(v)
    return v


def _build_bundle(cfg: ResolvedConfig) -> DatasetBundle:
    ds = cfg.dataset
    if ds["kind"] == "synthetic":
        return make_bundle(
            ds["classes"], ds["per_class"], ds["height"], ds["width"], ds["seed"],
            downstream_fraction=ds["downstream_fraction"], channels=ds["channels"],
        )
    full = load_cifar10_binary(ds["root"])
    pretrain, downstream = split_dataset(full, 1.0 - ds["downstream_fraction"], ds["seed"] + 1)
    return DatasetBundle(pretrain=pretrain, downstream=downstream)


def _attack_spec(cfg: ResolvedConfig, poison_path: str | None = None) -> AttackSpec:
    return AttackSpec(
        attack_type=cfg.attack_type,
        framework_config=cfg.attacker_cfg,
        classifier_config=cfg.classifier_cfg,
        schedule=cfg.schedule,
        pgd=cfg.pgd,
        poison_path=poison_path,
    )


def _manifest(cfg: ResolvedConfig, command: str, outputs: dict, status: str) -> dict:
    return {
        "command": command,
        "status": status,
        "config": cfg.echo,
        "seed": cfg.seed,
        "scale": cfg.scale,
        "versions": {
            "clpoison": __version__,
            "torch": torch.__version__,
            "numpy": np.__version__,
            "python": sys.version.split()[0],
        },
        "outputs": {k: str(v) for k, v in outputs.items()},
    }


def _write_manifest(cfg: ResolvedConfig, command: str, outputs: dict, status: str) -> Path:
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    path = cfg.out_dir / f"manifest-{command}.json"
    path.write_text(json.dumps(_manifest(cfg, command, outputs, status), indent=2, sort_keys=True))
    return path


def _apply_determinism(cfg: ResolvedConfig) -> None:
    if cfg.deterministic:
        torch.set_num_threads(1)


def cmd_pretrain(cfg: ResolvedConfig) -> int:
    _apply_determinism(cfg)
    _write_manifest(cfg, "pretrain", {}, "incomplete")
    bundle = _build_bundle(cfg)
    train_cfg = cfg.attacker_cfg if cfg.attacker_cfg is not None else cfg.victim_cfg
    train_cfg = replace(train_cfg, epochs=cfg.pretrain_epochs)
    state = train_encoder(
        bundle.pretrain, train_cfg, seed=derive_seed(cfg.seed, "pretrain"),
        log_path=cfg.out_dir / "pretrain_log.jsonl",
    )
    ckpt = cfg.out_dir / "pretrain.ckpt"
    save_checkpoint(state, train_cfg, bundle.pretrain.image_shape, ckpt)
    _write_manifest(cfg, "pretrain", {"checkpoint": ckpt}, "complete")
    print(str(ckpt))
    return EXIT_OK


def cmd_poison(cfg: ResolvedConfig) -> int:
    if cfg.attack_type == "none":
        print("attack.type is 'none'; nothing to generate", file=sys.stderr)
        return EXIT_VALIDATION
    _apply_determinism(cfg)
    _write_manifest(cfg, "poison", {}, "incomplete")
    bundle = _build_bundle(cfg)
    trace = cfg.out_dir / "attack_trace.jsonl"
    ps = generate_poison(
        bundle.pretrain, _attack_spec(cfg), derive_seed(cfg.seed, "attack"), log_path=trace
    )
    poison_path = write_poison_file(ps, cfg.out_dir / "poison.clpn")
    sidecar = {
        "attack": cfg.attack_type,
        "framework": cfg.attacker_cfg.framework if cfg.attacker_cfg else "supervised",
        "branch_mode": cfg.schedule.branch_mode,
        "epsilon": cfg.pgd.epsilon,
        "alpha": cfg.pgd.alpha,
        "schedule": asdict(cfg.schedule),
        "seed": cfg.seed,
        "loss_trace_path": str(trace),
    }
    (cfg.out_dir / "poison_manifest.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))
    _write_manifest(cfg, "poison", {"poison": poison_path, "sidecar": cfg.out_dir / "poison_manifest.json"}, "complete")
    print(str(poison_path))
    return EXIT_OK


def _train_victim(cfg: ResolvedConfig, poison_path: str | None, with_defense: bool) -> int:
    command = "defend-train" if with_defense else "train"
    _apply_determinism(cfg)
    _write_manifest(cfg, command, {}, "incomplete")
    bundle = _build_bundle(cfg)
    train_set = bundle.pretrain
    if poison_path is not None:
        ps = read_poison_file(poison_path)
        train_set, _ = apply_perturbations(
            bundle.pretrain, ps, cfg.poison_fraction, derive_seed(cfg.seed, "selection")
        )
    defense = cfg.defense if with_defense else None
    state = train_encoder(
        train_set, cfg.victim_cfg, seed=derive_seed(cfg.seed, "victim"),
        defense=defense, log_path=cfg.out_dir / "train_log.jsonl",
    )
    ckpt = cfg.out_dir / "victim.ckpt"
    save_checkpoint(state, cfg.victim_cfg, train_set.image_shape, ckpt)
    _write_manifest(cfg, command, {"checkpoint": ckpt}, "complete")
    print(str(ckpt))
    return EXIT_OK


def cmd_train(cfg: ResolvedConfig, poison_path: str | None) -> int:
    return _train_victim(cfg, poison_path, with_defense=False)


def cmd_defend_train(cfg: ResolvedConfig, poison_path: str | None) -> int:
    if cfg.defense.kind == "none":
        print("defend-train requires defense.kind != none", file=sys.stderr)
        return EXIT_VALIDATION
    return _train_victim(cfg, poison_path, with_defense=True)


def cmd_probe(cfg: ResolvedConfig, checkpoint: str) -> int:
    _apply_determinism(cfg)
    _write_manifest(cfg, "probe", {}, "incomplete")
    bundle = _build_bundle(cfg)
    state, _, _ = load_checkpoint(checkpoint)
    accuracy = linear_probe(
        state, bundle.downstream,
        epochs=cfg.probe["epochs"], seed=derive_seed(cfg.seed, "probe"),
        test_fraction=cfg.probe["test_fraction"], lr=cfg.probe["learning_rate"],
    )
    out = cfg.out_dir / "probe_result.json"
    out.write_text(json.dumps({"probe_accuracy": accuracy, "checkpoint": str(checkpoint)}))
    _write_manifest(cfg, "probe", {"result": out}, "complete")
    print(f"probe_accuracy={accuracy:.4f}")
    return EXIT_OK


def cmd_sweep(cfg: ResolvedConfig) -> int:
    _apply_determinism(cfg)
    _write_manifest(cfg, "sweep", {}, "incomplete")
    bundle = _build_bundle(cfg)
    results_path = cfg.out_dir / "results.jsonl"
    results = run_sweep(
        cfg.sweep_axis, cfg.sweep_values, bundle,
        _attack_spec(cfg),
        VictimSpec(config=cfg.victim_cfg, probe_epochs=cfg.probe["epochs"]),
        DefenseSpec(transform=cfg.defense),
        cfg.poison_fraction, cfg.seed, results_path=results_path,
    )
    report_path = cfg.out_dir / "sweep_report.csv"
    if cfg.sweep_axis == "poison_fraction":
        rows = "poison_fraction"
    elif cfg.sweep_axis == "victim_framework":
        rows = "victim_algorithm"
    else:
        rows = cfg.sweep_axis
    report_path.write_text(pivot_report(results, rows, "attack_type"))
    _write_manifest(cfg, "sweep", {"results": results_path, "report": report_path}, "complete")
    for r in results:
        print(r.to_json_line())
    return EXIT_OK


def cmd_report(cfg: ResolvedConfig, results_path: str, rows: str, cols: str) -> int:
    results = load_results(results_path)
    csv_text = pivot_report(results, rows, cols)
    out = cfg.out_dir / "report.csv"
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    out.write_text(csv_text)
    print(csv_text, end="")
    return EXIT_OK


def cmd_visualize(cfg: ResolvedConfig, poison_path: str) -> int:
    _apply_determinism(cfg)
    ps = read_poison_file(poison_path)
    labels = None
    if ps.mode == "sample-wise":
        bundle = _build_bundle(cfg)
        if bundle.pretrain.fingerprint == ps.dataset_fingerprint:
            labels = bundle.pretrain.labels
    grid = render_noise_grid(ps, labels, seed=cfg.seed)
    out = save_grid_png(grid, cfg.out_dir / "noise_grid.png")
    _write_manifest(cfg, "visualize", {"grid": out}, "complete")
    print(str(out))
    return EXIT_OK


def build_arg_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="clpoison",
        description="Data-poisoning attacks and defenses for contrastive learning",
    )
    parser.add_argument("--config", help="INI experiment config")
    parser.add_argument("--seed", type=int, help="override run.seed")
    parser.add_argument("--scale", type=float, help="override run.scale")
    parser.add_argument("--out", help="override run.out directory")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("pretrain", help="train the attacker's clean encoder")
    sub.add_parser("poison", help="generate a poison file for the configured attack")
    p_train = sub.add_parser("train", help="train the victim on poisoned data")
    p_train.add_argument("--poison", help="poison file (default: <out>/poison.clpn)")
    p_dt = sub.add_parser("defend-train", help="train the victim with the configured defense")
    p_dt.add_argument("--poison", help="poison file (default: <out>/poison.clpn)")
    p_probe = sub.add_parser("probe", help="linear-probe a victim checkpoint")
    p_probe.add_argument("--checkpoint", help="checkpoint (default: <out>/victim.ckpt)")
    sub.add_parser("sweep", help="run the configured axis sweep")
    p_rep = sub.add_parser("report", help="pivot a results file into CSV")
    p_rep.add_argument("--results", required=True)
    p_rep.add_argument("--rows", default="attack_type")
    p_rep.add_argument("--cols", default="victim_algorithm")
    p_vis = sub.add_parser("visualize", help="render a poison file as a PNG grid")
    p_vis.add_argument("--poison", required=True)
    return parser


def main(argv=None) -> int:
    args = build_arg_parser().parse_args(argv)
    values, problems = parse_config_file(args.config)
    overrides = {"seed": args.seed, "scale": args.scale, "out": args.out}
    cfg, more = resolve_config(values, overrides)
    problems.extend(more)

    # Per-command referenced files must exist at validation time.
    poison_path = checkpoint = None
    if cfg is not None:
        if args.command in ("train", "defend-train"):
            poison_path = args.poison or str(cfg.out_dir / "poison.clpn")
            if cfg.attack_type != "none" and not Path(poison_path).exists():
                problems.append(f"poison file {poison_path} does not exist")
            if cfg.attack_type == "none":
                poison_path = None
        elif args.command == "probe":
            checkpoint = args.checkpoint or str(cfg.out_dir / "victim.ckpt")
            if not Path(checkpoint).exists():
                problems.append(f"checkpoint {checkpoint} does not exist")
        elif args.command == "report" and not Path(args.results).exists():
            problems.append(f"results file {args.results} does not exist")
        elif args.command == "visualize" and not Path(args.poison).exists():
            problems.append(f"poison file {args.poison} does not exist")

    if problems:
        for p in problems:
            print(f"config error: {p}", file=sys.stderr)
        return EXIT_VALIDATION

    try:
        if args.command == "pretrain":
            return cmd_pretrain(cfg)
        if args.command == "poison":
            return cmd_poison(cfg)
        if args.command == "train":
            return cmd_train(cfg, poison_path)
        if args.command == "defend-train":
            return cmd_defend_train(cfg, poison_path)
        if args.command == "probe":
            return cmd_probe(cfg, checkpoint)
        if args.command == "sweep":
            return cmd_sweep(cfg)
        if args.command == "report":
            return cmd_report(cfg, args.results, args.rows, args.cols)
        if args.command == "visualize":
            return cmd_visualize(cfg, args.poison)
        raise ValueError(f"unhandled command {args.command}")
    except Exception as exc:  # runtime failure -> exit 3, manifest left incomplete
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
