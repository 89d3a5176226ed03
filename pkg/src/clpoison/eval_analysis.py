"""Experiment-level measurements: poison -> train -> probe cells, sweeps,
noise separability probing, and noise grid rendering."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .datasets import (
    CLASS_WISE,
    SAMPLE_WISE,
    DatasetBundle,
    PerturbationSet,
    apply_perturbations,
    read_poison_file,
)
from .defenses import DefenseTransform
from .frameworks.probe import linear_probe
from .frameworks.train import FrameworkConfig, train_encoder
from .poison.attacks import (
    ATTACK_TYPES,
    AttackSchedule,
    ClassifierConfig,
    attack_ap_cl,
    attack_ap_supervised,
    attack_emp_cl_class,
    attack_emp_cl_sample,
    attack_emp_supervised,
    default_schedule,
)
from .poison.pgd import PgdConfig
from .utils import WallTimer, append_jsonl, derive_seed


@dataclass(frozen=True)
class AttackSpec:
    """What the attacker runs: attack type, its CL algorithm or classifier,
    and its schedule. A pre-generated poison file can stand in for a run."""

    attack_type: str = "none"
    framework_config: FrameworkConfig | None = None
    classifier_config: ClassifierConfig | None = None
    schedule: AttackSchedule | None = None
    pgd: PgdConfig = field(default_factory=PgdConfig)
    poison_path: str | None = None

    def __post_init__(self):
        if self.attack_type not in ATTACK_TYPES:
            raise ValueError(f"attack_type must be one of {ATTACK_TYPES}")

    @property
    def attacker_algorithm(self) -> str:
        if self.attack_type == "none":
            return "none"
        if self.attack_type.endswith("-sup"):
            return "supervised"
        if self.attack_type in ("emp-sup-s", "emp-sup-c"):
            return "supervised"
        return self.framework_config.framework if self.framework_config else "unknown"

    @property
    def branch_mode(self) -> str:
        return self.schedule.branch_mode if self.schedule is not None else "dual"


@dataclass(frozen=True)
class VictimSpec:
    config: FrameworkConfig
    probe_epochs: int = 100


@dataclass(frozen=True)
class DefenseSpec:
    transform: DefenseTransform = field(default_factory=DefenseTransform)

    @property
    def name(self) -> str:
        return self.transform.kind


@dataclass(frozen=True)
class ExperimentResult:
    """One table cell. `wall_ms` is informational; determinism is defined
    over `core_fields()`."""

    attacker_algorithm: str
    victim_algorithm: str
    attack_type: str
    defense: str
    poison_fraction: float
    branch_mode: str
    probe_accuracy: float
    seed: int
    wall_ms: float
    status: str = "ok"
    error: str = ""

    def __post_init__(self):
        if self.status == "ok" and not 0.0 <= self.probe_accuracy <= 1.0:
            raise ValueError("probe_accuracy must lie in [0, 1]")
        for name in ("attacker_algorithm", "victim_algorithm", "attack_type", "defense"):
            if not getattr(self, name):
                raise ValueError(f"{name} must be non-empty")

    def core_fields(self) -> dict:
        d = asdict(self)
        d.pop("wall_ms")
        return d

    def to_json_line(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json_line(cls, line: str) -> "ExperimentResult":
        return cls(**json.loads(line))


def generate_poison(
    dataset, spec: AttackSpec, seed: int, scale: float = 1.0, log_path=None
) -> PerturbationSet:
    """Dispatch one attack run (or load the referenced poison file)."""
    if spec.poison_path is not None:
        return read_poison_file(spec.poison_path)
    at = spec.attack_type
    schedule = spec.schedule if spec.schedule is not None else default_schedule(at, scale)
    if at in ("ap-cl", "emp-cl-s", "emp-cl-c") and spec.framework_config is None:
        raise ValueError(f"{at} requires an attacker framework config")
    if at.endswith("sup-s") or at.endswith("sup-c") or at == "ap-sup":
        cls_cfg = spec.classifier_config or ClassifierConfig()
    if at == "ap-cl":
        ap_pgd = replace(spec.pgd, steps=schedule.pgd_steps, direction="maximize")
        return attack_ap_cl(dataset, spec.framework_config, ap_pgd, seed=seed,
                            branch_mode=schedule.branch_mode, log_path=log_path)
    if at == "emp-cl-s":
        return attack_emp_cl_sample(dataset, spec.framework_config, schedule, spec.pgd,
                                    seed=seed, log_path=log_path)
    if at == "emp-cl-c":
        return attack_emp_cl_class(dataset, spec.framework_config, schedule, spec.pgd,
                                   seed=seed, log_path=log_path)
    if at == "ap-sup":
        ap_pgd = replace(spec.pgd, steps=schedule.pgd_steps, direction="maximize")
        return attack_ap_supervised(dataset, cls_cfg, ap_pgd, seed=seed)
    if at == "emp-sup-s":
        return attack_emp_supervised(SAMPLE_WISE, dataset, cls_cfg, schedule, spec.pgd, seed=seed)
    if at == "emp-sup-c":
        return attack_emp_supervised(CLASS_WISE, dataset, cls_cfg, schedule, spec.pgd, seed=seed)
    raise ValueError(f"cannot generate poison for attack type {at!r}")


def run_cell(
    bundle: DatasetBundle,
    attack: AttackSpec,
    victim: VictimSpec,
    defense: DefenseSpec,
    poison_fraction: float,
    seed: int,
    *,
    results_path=None,
    log_dir=None,
) -> ExperimentResult:
    """One experiment cell: poison -> train victim -> linear probe.

    Every stage draws from sub-seeds of `seed`; failures produce an error
    row instead of raising.
    """
    base = dict(
        attacker_algorithm=attack.attacker_algorithm,
        victim_algorithm=victim.config.framework,
        attack_type=attack.attack_type,
        defense=defense.name,
        poison_fraction=float(poison_fraction),
        branch_mode=attack.branch_mode,
        seed=int(seed),
    )
    log_dir = Path(log_dir) if log_dir is not None else None
    with WallTimer() as timer:
        try:
            train_set = bundle.pretrain
            if attack.attack_type != "none" and poison_fraction > 0:
                ps = generate_poison(
                    bundle.pretrain, attack, derive_seed(seed, "attack"),
                    log_path=(log_dir / "attack_trace.jsonl") if log_dir else None,
                )
                train_set, _ = apply_perturbations(
                    bundle.pretrain, ps, poison_fraction, derive_seed(seed, "selection")
                )
            transform = defense.transform if defense.name != "none" else None
            state = train_encoder(
                train_set, victim.config, seed=derive_seed(seed, "victim"),
                defense=transform,
                log_path=(log_dir / "train_log.jsonl") if log_dir else None,
            )
            accuracy = linear_probe(
                state, bundle.downstream,
                epochs=victim.probe_epochs, seed=derive_seed(seed, "probe"),
            )
            result = ExperimentResult(
                **base, probe_accuracy=accuracy, wall_ms=0.0, status="ok"
            )
        except Exception as exc:  # error rows, never silent omission
            result = ExperimentResult(
                **base, probe_accuracy=float("nan"), wall_ms=0.0,
                status="error", error=f"{type(exc).__name__}: {exc}",
            )
    result = replace(result, wall_ms=timer.elapsed_ms)
    if results_path is not None:
        append_jsonl(results_path, asdict(result))
    return result


SWEEP_AXES = ("poison_fraction", "branch_mode", "defense", "victim_framework")


def sweep(
    axis: str,
    values,
    bundle: DatasetBundle,
    attack: AttackSpec,
    victim: VictimSpec,
    defense: DefenseSpec,
    poison_fraction: float,
    seed: int,
    *,
    results_path=None,
) -> list[ExperimentResult]:
    """One cell per axis value under a shared seed; per-cell failures are
    recorded as error rows and the sweep continues."""
    if axis not in SWEEP_AXES:
        raise ValueError(f"axis must be one of {SWEEP_AXES}, got {axis!r}")
    values = list(values)
    if not values:
        raise ValueError("sweep needs at least one value")
    results = []
    for value in values:
        a, v, d, p = attack, victim, defense, poison_fraction
        if axis == "poison_fraction":
            p = float(value)
        elif axis == "branch_mode":
            sched = attack.schedule if attack.schedule is not None else default_schedule(
                attack.attack_type
            )
            a = replace(attack, schedule=replace(sched, branch_mode=str(value)))
        elif axis == "defense":
            d = DefenseSpec(transform=DefenseTransform(kind=str(value)))
        else:
            v = replace(victim, config=FrameworkConfig.defaults(
                str(value),
                epochs=victim.config.epochs,
                batch_size=victim.config.batch_size,
                queue_size=victim.config.queue_size,
                feature_dim=victim.config.feature_dim,
                proj_hidden=victim.config.proj_hidden,
                proj_dim=victim.config.proj_dim,
                arch=victim.config.arch,
                conv_widths=victim.config.conv_widths,
            ))
        results.append(
            run_cell(bundle, a, v, d, p, seed, results_path=results_path)
        )
    return results


def noise_separability(ps: PerturbationSet, labels=None, *, seed: int = 0) -> float:
    """Held-out accuracy of a multinomial linear classifier on flattened deltas.

    Sample-wise sets need per-sample labels and use a seeded 80/20 split;
    class-wise sets have implicit labels (one per class) and are scored on
    their own K vectors.
    """
    from sklearn.linear_model import LogisticRegression
    from sklearn.model_selection import train_test_split

    x = ps.deltas.reshape(len(ps), -1).astype(np.float64)
    if ps.mode == CLASS_WISE:
        y = np.arange(len(ps))
    else:
        if labels is None:
            raise ValueError("sample-wise separability needs per-sample labels")
        y = np.asarray(labels, dtype=np.int64)
        if len(y) != len(ps):
            raise ValueError("labels must align with the deltas")
    if len(np.unique(y)) < 2:
        raise ValueError("separability needs at least two classes")

    clf = LogisticRegression(max_iter=2000)
    if ps.mode == CLASS_WISE:
        clf.fit(x, y)
        return float(clf.score(x, y))
    try:
        x_tr, x_te, y_tr, y_te = train_test_split(
            x, y, test_size=0.2, random_state=seed, stratify=y
        )
    except ValueError:
        x_tr, x_te, y_tr, y_te = train_test_split(x, y, test_size=0.2, random_state=seed)
    clf.fit(x_tr, y_tr)
    return float(clf.score(x_te, y_te))


def _normalize_tile(delta: np.ndarray) -> np.ndarray:
    lo, hi = float(delta.min()), float(delta.max())
    if hi - lo < 1e-12:
        return np.full_like(delta, 0.5)  # constant noise renders mid-gray
    return (delta - lo) / (hi - lo)


def render_noise_grid(
    ps: PerturbationSet,
    labels=None,
    *,
    seed: int = 0,
    max_tiles: int = 16,
    pad: int = 2,
) -> np.ndarray:
    """uint8 RGB grid of per-tile min-max normalized deltas.

    Class-wise sets show every class in order. Sample-wise sets show one
    random member per class when labels are given, else the first tiles.
    """
    if len(ps) == 0:
        raise ValueError("empty perturbation set")
    if ps.mode == CLASS_WISE:
        chosen = np.arange(len(ps))
    elif labels is not None:
        labels = np.asarray(labels)
        rng = np.random.default_rng(seed)
        chosen = np.array(
            [rng.choice(np.flatnonzero(labels == c)) for c in np.unique(labels)]
        )
    else:
        chosen = np.arange(min(len(ps), max_tiles))

    tiles = []
    for i in chosen:
        t = _normalize_tile(ps.deltas[i].astype(np.float64))
        if t.shape[0] == 1:
            t = np.repeat(t, 3, axis=0)
        tiles.append(np.transpose(t[:3], (1, 2, 0)))
    n = len(tiles)
    cols = math.ceil(math.sqrt(n))
    rows = math.ceil(n / cols)
    th, tw = tiles[0].shape[0], tiles[0].shape[1]
    grid = np.ones((rows * (th + pad) + pad, cols * (tw + pad) + pad, 3))
    for i, tile in enumerate(tiles):
        r, c = divmod(i, cols)
        y0 = pad + r * (th + pad)
        x0 = pad + c * (tw + pad)
        grid[y0:y0 + th, x0:x0 + tw] = tile
    return np.clip(np.round(grid * 255.0), 0, 255).astype(np.uint8)


def save_grid_png(grid: np.ndarray, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(grid).save(path, format="PNG")
    return path


def grid_png_bytes(grid: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(grid).save(buf, format="PNG")
    return buf.getvalue()


def load_results(path) -> list[ExperimentResult]:
    with open(path, encoding="utf-8") as fh:
        return [ExperimentResult.from_json_line(line) for line in fh if line.strip()]


def pivot_report(
    results: list[ExperimentResult], row_field: str, col_field: str
) -> str:
    """CSV matrix of mean probe accuracy grouped by two result fields."""
    cells: dict[tuple, list[float]] = {}
    rows, cols = [], []
    for r in results:
        if r.status != "ok":
            continue
        rk, ck = getattr(r, row_field), getattr(r, col_field)
        if rk not in rows:
            rows.append(rk)
        if ck not in cols:
            cols.append(ck)
        cells.setdefault((rk, ck), []).append(r.probe_accuracy)
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow([f"{row_field}\\{col_field}"] + [str(c) for c in cols])
    for rk in rows:
        line = [str(rk)]
        for ck in cols:
            vals = cells.get((rk, ck))
            line.append(f"{np.mean(vals):.4f}" if vals else "")
        writer.writerow(line)
    return buf.getvalue()
