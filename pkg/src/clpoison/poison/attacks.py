"""Poison generators.

AP maximizes the contrastive loss against a frozen pretrained encoder.
EMP alternates between PGD on the noise (minimizing the loss) and SGD on a
co-trained encoder; the encoder is a byproduct and is discarded. Class-wise
EMP shares one delta per class and only needs labels for that sharing.
Supervised baselines swap the contrastive loss for cross-entropy on a small
classifier, producing perturbation sets in the same format.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import torch
from torch import nn

from ..datasets import CLASS_WISE, SAMPLE_WISE, LabeledImageDataset, PerturbationSet
from ..errors import TrainingDivergedError
from ..frameworks.models import ConvBackbone, MlpBackbone, init_parameters
from ..frameworks.train import (
    FrameworkConfig,
    dataset_tensor,
    framework_pair_loss,
    train_encoder,
)
from ..utils import append_jsonl, derive_seed
from .gradients import classwise_noise_gradient, noise_gradient, noise_loss
from .pgd import PgdConfig, pgd_step, project_ball

ATTACK_TYPES = ("none", "ap-cl", "emp-cl-s", "emp-cl-c", "ap-sup", "emp-sup-s", "emp-sup-c")


@dataclass(frozen=True)
class AttackSchedule:
    """Alternation schedule: outer iterations, PGD steps per iteration, the
    fraction of data used per phase, and the noise-gradient branch mode."""

    iterations: int = 200
    pgd_steps: int = 5
    data_fraction: float = 1.0
    branch_mode: str = "dual"
    model_passes: int = 1

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        if self.pgd_steps < 0:
            raise ValueError("pgd_steps must be non-negative")
        if not 0.0 < self.data_fraction <= 1.0:
            raise ValueError("data_fraction must lie in (0, 1]")
        if self.branch_mode not in ("single", "dual"):
            raise ValueError(f"branch_mode must be single or dual, got {self.branch_mode!r}")
        if self.model_passes < 1:
            raise ValueError("model_passes must be at least 1")

    def scaled(self, scale: float) -> "AttackSchedule":
        if not 0.0 < scale <= 1.0:
            raise ValueError("scale must lie in (0, 1]")
        return replace(self, iterations=max(1, round(self.iterations * scale)))


# Reference schedules: AP runs T=200 PGD steps once; sample-wise EMP runs 200
# iterations of (5 PGD steps, one full-set model epoch); class-wise EMP runs
# 600 iterations of (1 PGD step, one model pass) on 20% subsets.
ATTACK_SCHEDULES = {
    "ap-cl": AttackSchedule(iterations=1, pgd_steps=200),
    "emp-cl-s": AttackSchedule(iterations=200, pgd_steps=5, data_fraction=1.0),
    "emp-cl-c": AttackSchedule(iterations=600, pgd_steps=1, data_fraction=0.2),
    "ap-sup": AttackSchedule(iterations=1, pgd_steps=200),
    "emp-sup-s": AttackSchedule(iterations=200, pgd_steps=5, data_fraction=1.0),
    "emp-sup-c": AttackSchedule(iterations=600, pgd_steps=1, data_fraction=0.2),
}


def default_schedule(attack_type: str, scale: float = 1.0, **overrides) -> AttackSchedule:
    sched = ATTACK_SCHEDULES[attack_type]
    if overrides:
        sched = replace(sched, **overrides)
    if attack_type in ("ap-cl", "ap-sup") and scale != 1.0:
        # AP's only compute axis is its PGD step count.
        sched = replace(sched, pgd_steps=max(1, round(sched.pgd_steps * scale)))
    elif scale != 1.0:
        sched = sched.scaled(scale)
    return sched


def _index_blocks(indices: torch.Tensor, batch_size: int) -> list[torch.Tensor]:
    """Blocks covering every index; a tail of one merges into the previous
    block so pair losses always see at least two samples."""
    n = len(indices)
    if n == 0:
        return []
    blocks = [indices[s:s + batch_size] for s in range(0, n, batch_size)]
    if len(blocks) > 1 and len(blocks[-1]) < 2:
        blocks[-2] = torch.cat([blocks[-2], blocks[-1]])
        blocks.pop()
    return blocks


def _zero_set(mode: str, count: int, shape, epsilon: float, fingerprint: int = 0) -> PerturbationSet:
    return PerturbationSet(
        mode=mode,
        epsilon=epsilon,
        deltas=np.zeros((count, *shape), dtype=np.float32),
        dataset_fingerprint=fingerprint,
    )


def _finalize_sample_set(deltas: torch.Tensor, epsilon: float, fingerprint: int) -> PerturbationSet:
    arr = project_ball(deltas.detach(), epsilon).to(torch.float32).numpy()
    arr = np.clip(arr, -np.float32(epsilon), np.float32(epsilon))
    return PerturbationSet(SAMPLE_WISE, epsilon, arr, dataset_fingerprint=fingerprint)


def _finalize_class_set(deltas: torch.Tensor, epsilon: float) -> PerturbationSet:
    arr = project_ball(deltas.detach(), epsilon).to(torch.float32).numpy()
    arr = np.clip(arr, -np.float32(epsilon), np.float32(epsilon))
    return PerturbationSet(CLASS_WISE, epsilon, arr)


def attack_ap_cl(
    dataset: LabeledImageDataset,
    cfg: FrameworkConfig,
    pgd_cfg: PgdConfig,
    *,
    seed: int = 0,
    pretrained=None,
    branch_mode: str = "dual",
    log_path=None,
) -> PerturbationSet:
    """Adversarial poisoning: pretrain (or receive) a clean encoder, freeze
    it, then maximize its contrastive loss over the epsilon ball."""
    shape = dataset.image_shape
    if pgd_cfg.epsilon == 0 or pgd_cfg.steps == 0:
        return _zero_set(SAMPLE_WISE, len(dataset), shape, pgd_cfg.epsilon, dataset.fingerprint)

    f0 = pretrained
    if f0 is None:
        f0 = train_encoder(dataset, cfg, seed=derive_seed(seed, "ap-pretrain"))
    maximize = replace(pgd_cfg, direction="maximize")

    dtype = torch.float64 if cfg.dtype == "float64" else torch.float32
    images = dataset_tensor(dataset, dtype)
    deltas = torch.zeros_like(images)
    blocks = _index_blocks(torch.arange(len(dataset)), cfg.batch_size)
    for b, idx in enumerate(blocks):
        x = images[idx]
        x_adv = x.clone()
        for t in range(pgd_cfg.steps):
            g = noise_gradient(
                f0, x, x_adv - x, cfg, branch_mode=branch_mode,
                aug_seed=derive_seed(seed, "ap-view", b, t),
            )
            x_adv = pgd_step(x_adv, g, maximize, x)
        deltas[idx] = x_adv - x
        if log_path is not None:
            with torch.no_grad():
                final = noise_loss(f0, x, deltas[idx], cfg, branch_mode="single",
                                   aug_seed=derive_seed(seed, "ap-trace", b))
            append_jsonl(log_path, {"batch": b, "loss": float(final)})
    return _finalize_sample_set(deltas, pgd_cfg.epsilon, dataset.fingerprint)


def attack_emp_cl_sample(
    dataset: LabeledImageDataset,
    cfg: FrameworkConfig,
    schedule: AttackSchedule,
    pgd_cfg: PgdConfig | None = None,
    *,
    seed: int = 0,
    log_path=None,
) -> PerturbationSet:
    """Sample-wise error-minimizing poisoning via bilevel alternation.

    Per iteration: every sample's delta takes `pgd_steps` descent steps on
    the frozen current encoder, then the encoder trains `model_passes`
    epochs on the currently poisoned images. Noise starts at zero; the
    co-trained encoder is discarded.
    """
    pgd = _minimizing_pgd(pgd_cfg, schedule)
    shape = dataset.image_shape
    n = len(dataset)
    if pgd.epsilon == 0 or schedule.iterations == 0:
        return _zero_set(SAMPLE_WISE, n, shape, pgd.epsilon, dataset.fingerprint)

    dtype = torch.float64 if cfg.dtype == "float64" else torch.float32
    images = dataset_tensor(dataset, dtype)
    deltas = torch.zeros_like(images)
    state = build_state_for_attack(cfg, shape, seed)
    opt = _attack_optimizer(state.online_parameters(), cfg)

    for it in range(schedule.iterations):
        order = torch.randperm(
            n, generator=torch.Generator().manual_seed(derive_seed(seed, "noise-order", it))
        )
        for b, idx in enumerate(_index_blocks(order, cfg.batch_size)):
            x = images[idx]
            for t in range(schedule.pgd_steps):
                g = noise_gradient(
                    state, x, deltas[idx], cfg, branch_mode=schedule.branch_mode,
                    aug_seed=derive_seed(seed, "noise-view", it, b, t),
                )
                x_adv = pgd_step(x + deltas[idx], g, pgd, x)
                deltas[idx] = x_adv - x
        model_loss = _model_phase(
            state, opt, images, deltas, None, cfg, schedule, seed, it
        )
        if log_path is not None:
            append_jsonl(log_path, {"iteration": it, "model_loss": model_loss})
    return _finalize_sample_set(deltas, pgd.epsilon, dataset.fingerprint)


def attack_emp_cl_class(
    dataset: LabeledImageDataset,
    cfg: FrameworkConfig,
    schedule: AttackSchedule,
    pgd_cfg: PgdConfig | None = None,
    *,
    seed: int = 0,
    log_path=None,
) -> PerturbationSet:
    """Class-wise error-minimizing poisoning: one shared delta per class.

    Each iteration re-samples a uniform data subset (`data_fraction`); the
    class gradient is the mean of per-sample delta gradients over the
    class's members in that subset. Classes absent from the subset keep
    their delta for the iteration (logged).
    """
    pgd = _minimizing_pgd(pgd_cfg, schedule)
    shape = dataset.image_shape
    k = dataset.class_count
    if pgd.epsilon == 0 or schedule.iterations == 0:
        return _zero_set(CLASS_WISE, k, shape, pgd.epsilon)

    dtype = torch.float64 if cfg.dtype == "float64" else torch.float32
    images = dataset_tensor(dataset, dtype)
    labels = torch.from_numpy(np.array(dataset.labels))
    n = len(dataset)
    subset_size = max(1, round(schedule.data_fraction * n))
    class_deltas = torch.zeros((k, *shape), dtype=dtype)
    state = build_state_for_attack(cfg, shape, seed)
    opt = _attack_optimizer(state.online_parameters(), cfg)

    for it in range(schedule.iterations):
        rng = np.random.default_rng(derive_seed(seed, "subset", it))
        subset = torch.from_numpy(np.sort(rng.choice(n, size=subset_size, replace=False)))
        for t in range(schedule.pgd_steps):
            grad_sum = torch.zeros_like(class_deltas)
            counts = torch.zeros(k, dtype=dtype)
            for b, idx in enumerate(_index_blocks(subset, cfg.batch_size)):
                g, c = classwise_noise_gradient(
                    state, images[idx], labels[idx], class_deltas, cfg,
                    branch_mode=schedule.branch_mode,
                    aug_seed=derive_seed(seed, "noise-view", it, t, b),
                )
                grad_sum += g
                counts += c
            present = counts > 0
            mean_grad = grad_sum / counts.clamp_min(1.0).view(-1, 1, 1, 1)
            stepped = project_ball(class_deltas - pgd.alpha * torch.sign(mean_grad), pgd.epsilon)
            class_deltas = torch.where(present.view(-1, 1, 1, 1), stepped, class_deltas)
            if log_path is not None and not bool(present.all()):
                absent = torch.nonzero(~present).flatten().tolist()
                append_jsonl(log_path, {"iteration": it, "absent_classes": absent})
        model_loss = _model_phase(
            state, opt, images, class_deltas, labels, cfg, schedule, seed, it, subset=subset
        )
        if log_path is not None:
            append_jsonl(log_path, {"iteration": it, "model_loss": model_loss})
    return _finalize_class_set(class_deltas, pgd.epsilon)


def _minimizing_pgd(pgd_cfg: PgdConfig | None, schedule: AttackSchedule) -> PgdConfig:
    base = pgd_cfg if pgd_cfg is not None else PgdConfig()
    return replace(base, direction="minimize", steps=schedule.pgd_steps)


def build_state_for_attack(cfg: FrameworkConfig, input_shape, seed: int):
    from ..frameworks.models import build_encoder_state

    return build_encoder_state(cfg, input_shape, seed=derive_seed(seed, "attack-init"))


def _attack_optimizer(params, cfg: FrameworkConfig):
    # Constant learning rate: the co-trained extractor is a moving target,
    # not a final model, so no cosine decay is applied across iterations.
    return torch.optim.SGD(
        params, lr=cfg.learning_rate, momentum=cfg.sgd_momentum, weight_decay=cfg.weight_decay
    )


def _model_phase(
    state, opt, images, deltas, labels, cfg, schedule, seed, iteration, subset=None
) -> float:
    """Train the co-optimized encoder on the current poisoned images."""
    state.set_train(True)
    pool = subset if subset is not None else torch.arange(len(images))
    losses = []
    for p in range(schedule.model_passes):
        perm = torch.randperm(
            len(pool),
            generator=torch.Generator().manual_seed(
                derive_seed(seed, "model-order", iteration, p)
            ),
        )
        for b, idx in enumerate(_index_blocks(pool[perm], cfg.batch_size)):
            if deltas.shape[0] == len(images):
                d = deltas[idx]
            else:
                d = deltas[labels[idx]]
            x = torch.clamp(images[idx] + d, 0.0, 1.0)
            gen = torch.Generator().manual_seed(derive_seed(seed, "model-view", iteration, p, b))
            from ..frameworks.augment import generate_view_batch

            va = generate_view_batch(x, cfg.view, gen)
            vb = generate_view_batch(x, cfg.view, gen)
            loss = framework_pair_loss(state, va, vb, cfg, mode="train")
            if not torch.isfinite(loss):
                raise TrainingDivergedError(
                    f"attack model phase diverged at iteration {iteration}",
                    iteration=iteration,
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            if state.has_momentum_branch:
                state.ema_update_momentum()
            losses.append(float(loss.detach()))
    return float(np.mean(losses)) if losses else float("nan")


# ---------------------------------------------------------------------------
# Supervised baselines (cross-entropy in place of the contrastive loss)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ClassifierConfig:
    """Small supervised classifier used by the baseline attacks."""

    learning_rate: float = 0.05
    weight_decay: float = 1e-4
    sgd_momentum: float = 0.9
    epochs: int = 30
    batch_size: int = 128
    feature_dim: int = 64
    arch: str = "conv"
    conv_widths: tuple[int, ...] = (16, 32, 64)
    mlp_hidden: tuple[int, ...] = ()
    dtype: str = "float32"


def build_classifier(cfg: ClassifierConfig, input_shape, class_count: int, seed: int) -> nn.Module:
    if cfg.arch == "conv":
        backbone = ConvBackbone(input_shape[0], cfg.conv_widths, cfg.feature_dim)
    else:
        backbone = MlpBackbone(input_shape, cfg.feature_dim, cfg.mlp_hidden)
    model = nn.Sequential(backbone, nn.ReLU(inplace=True), nn.Linear(cfg.feature_dim, class_count))
    init_parameters(model, torch.Generator().manual_seed(seed))
    return model.to(torch.float64 if cfg.dtype == "float64" else torch.float32)


def train_classifier(
    dataset: LabeledImageDataset, cfg: ClassifierConfig, *, seed: int = 0,
    model: nn.Module | None = None, epochs: int | None = None,
) -> nn.Module:
    dtype = torch.float64 if cfg.dtype == "float64" else torch.float32
    images = dataset_tensor(dataset, dtype)
    labels = torch.from_numpy(np.array(dataset.labels))
    if model is None:
        model = build_classifier(cfg, dataset.image_shape, dataset.class_count,
                                 derive_seed(seed, "cls-init"))
    opt = torch.optim.SGD(model.parameters(), lr=cfg.learning_rate,
                          momentum=cfg.sgd_momentum, weight_decay=cfg.weight_decay)
    loss_fn = nn.CrossEntropyLoss()
    model.train()
    n = len(dataset)
    for epoch in range(cfg.epochs if epochs is None else epochs):
        perm = torch.randperm(
            n, generator=torch.Generator().manual_seed(derive_seed(seed, "cls-order", epoch))
        )
        for idx in _index_blocks(perm, cfg.batch_size):
            loss = loss_fn(model(images[idx]), labels[idx])
            if not torch.isfinite(loss):
                raise TrainingDivergedError(f"classifier diverged at epoch {epoch}", epoch=epoch)
            opt.zero_grad()
            loss.backward()
            opt.step()
    model.eval()
    return model


def _supervised_noise_gradient(model, x, d, y) -> torch.Tensor:
    model.eval()
    dv = d.detach().clone().requires_grad_(True)
    loss = nn.functional.cross_entropy(model(torch.clamp(x + dv, 0.0, 1.0)), y)
    (grad,) = torch.autograd.grad(loss, dv)
    return grad.detach()


def attack_ap_supervised(
    dataset: LabeledImageDataset,
    cls_cfg: ClassifierConfig,
    pgd_cfg: PgdConfig,
    *,
    seed: int = 0,
    pretrained: nn.Module | None = None,
) -> PerturbationSet:
    """Error-maximizing baseline on a frozen supervised classifier."""
    if pgd_cfg.epsilon == 0 or pgd_cfg.steps == 0:
        return _zero_set(SAMPLE_WISE, len(dataset), dataset.image_shape,
                         pgd_cfg.epsilon, dataset.fingerprint)
    model = pretrained if pretrained is not None else train_classifier(
        dataset, cls_cfg, seed=derive_seed(seed, "ap-sup-pretrain")
    )
    maximize = replace(pgd_cfg, direction="maximize")
    dtype = torch.float64 if cls_cfg.dtype == "float64" else torch.float32
    images = dataset_tensor(dataset, dtype)
    labels = torch.from_numpy(np.array(dataset.labels))
    deltas = torch.zeros_like(images)
    for idx in _index_blocks(torch.arange(len(dataset)), cls_cfg.batch_size):
        x, y = images[idx], labels[idx]
        x_adv = x.clone()
        for _ in range(pgd_cfg.steps):
            g = _supervised_noise_gradient(model, x, x_adv - x, y)
            x_adv = pgd_step(x_adv, g, maximize, x)
        deltas[idx] = x_adv - x
    return _finalize_sample_set(deltas, pgd_cfg.epsilon, dataset.fingerprint)


def attack_emp_supervised(
    mode: str,
    dataset: LabeledImageDataset,
    cls_cfg: ClassifierConfig,
    schedule: AttackSchedule,
    pgd_cfg: PgdConfig | None = None,
    *,
    seed: int = 0,
) -> PerturbationSet:
    """Error-minimizing supervised baseline, sample-wise or class-wise."""
    if mode not in (SAMPLE_WISE, CLASS_WISE):
        raise ValueError(f"mode must be {SAMPLE_WISE} or {CLASS_WISE}, got {mode!r}")
    pgd = _minimizing_pgd(pgd_cfg, schedule)
    n, k = len(dataset), dataset.class_count
    shape = dataset.image_shape
    samplewise = mode == SAMPLE_WISE
    if pgd.epsilon == 0 or schedule.iterations == 0:
        if samplewise:
            return _zero_set(SAMPLE_WISE, n, shape, pgd.epsilon, dataset.fingerprint)
        return _zero_set(CLASS_WISE, k, shape, pgd.epsilon)

    dtype = torch.float64 if cls_cfg.dtype == "float64" else torch.float32
    images = dataset_tensor(dataset, dtype)
    labels = torch.from_numpy(np.array(dataset.labels))
    model = build_classifier(cfg=cls_cfg, input_shape=shape, class_count=k,
                             seed=derive_seed(seed, "cls-init"))
    opt = torch.optim.SGD(model.parameters(), lr=cls_cfg.learning_rate,
                          momentum=cls_cfg.sgd_momentum, weight_decay=cls_cfg.weight_decay)
    loss_fn = nn.CrossEntropyLoss()
    deltas = torch.zeros_like(images) if samplewise else torch.zeros((k, *shape), dtype=dtype)
    subset_size = max(1, round(schedule.data_fraction * n))

    for it in range(schedule.iterations):
        rng = np.random.default_rng(derive_seed(seed, "subset", it))
        if subset_size == n:
            subset = torch.arange(n)
        else:
            subset = torch.from_numpy(np.sort(rng.choice(n, size=subset_size, replace=False)))
        model.eval()
        for t in range(schedule.pgd_steps):
            if samplewise:
                for idx in _index_blocks(subset, cls_cfg.batch_size):
                    x, y = images[idx], labels[idx]
                    g = _supervised_noise_gradient(model, x, deltas[idx], y)
                    x_adv = pgd_step(x + deltas[idx], g, pgd, x)
                    deltas[idx] = x_adv - x
            else:
                grad_sum = torch.zeros_like(deltas)
                counts = torch.zeros(k, dtype=dtype)
                for idx in _index_blocks(subset, cls_cfg.batch_size):
                    x, y = images[idx], labels[idx]
                    dv = deltas.detach().clone().requires_grad_(True)
                    loss = loss_fn(model(torch.clamp(x + dv[y], 0.0, 1.0)), y)
                    (g,) = torch.autograd.grad(loss, dv)
                    grad_sum += g.detach()
                    counts += torch.bincount(y, minlength=k).to(dtype)
                present = counts > 0
                stepped = project_ball(
                    deltas - pgd.alpha * torch.sign(grad_sum / counts.clamp_min(1.0).view(-1, 1, 1, 1)),
                    pgd.epsilon,
                )
                deltas = torch.where(present.view(-1, 1, 1, 1), stepped, deltas)
        perm = torch.randperm(
            len(subset),
            generator=torch.Generator().manual_seed(derive_seed(seed, "model-order", it)),
        )
        model.train()
        for p in range(schedule.model_passes):
            for idx in _index_blocks(subset[perm], cls_cfg.batch_size):
                d = deltas[idx] if samplewise else deltas[labels[idx]]
                x = torch.clamp(images[idx] + d, 0.0, 1.0)
                loss = loss_fn(model(x), labels[idx])
                if not torch.isfinite(loss):
                    raise TrainingDivergedError(
                        f"supervised EMP diverged at iteration {it}", iteration=it
                    )
                opt.zero_grad()
                loss.backward()
                opt.step()
    if samplewise:
        return _finalize_sample_set(deltas, pgd.epsilon, dataset.fingerprint)
    return _finalize_class_set(deltas, pgd.epsilon)
