"""Encoder training for SimCLR, MoCo v2, and BYOL, plus the shared pair loss.

The pair loss has three modes. "train" is standard contrastive training:
the momentum branch (when present) is evaluated without any gradient and
MoCo's queue is advanced. The two "noise" modes are used when optimizing
poisoning perturbations w.r.t. the *inputs*: "noise-dual" lets the input
gradient flow through both the encoder and the momentum encoder, while
"noise-single" treats the momentum branch as a constant function of its
input. Momentum parameters never receive gradients in any mode.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, asdict, replace

import numpy as np
import torch

from ..errors import ConfigError, TrainingDivergedError
from ..utils import append_jsonl, derive_seed
from .augment import ViewConfig, generate_view_batch
from .losses import byol_loss, info_nce_loss, moco_infonce_loss
from .models import EncoderState, build_encoder_state

FRAMEWORKS = ("simclr", "moco", "byol")

_FRAMEWORK_DEFAULTS = {
    # (temperature, learning rate, encoder momentum)
    "simclr": (0.5, 0.5, None),
    "moco": (0.2, 0.3, 0.99),
    "byol": (None, 1.0, 0.999),
}

PAIR_LOSS_MODES = ("train", "noise-single", "noise-dual")


@dataclass(frozen=True)
class FrameworkConfig:
    """Victim/attacker training configuration; defaults follow the full-scale
    reference values (CIFAR-sized data, 1000 epochs, batch 512)."""

    framework: str = "simclr"
    temperature: float | None = 0.5
    learning_rate: float = 0.5
    weight_decay: float = 1e-4
    sgd_momentum: float = 0.9
    encoder_momentum: float | None = None
    epochs: int = 1000
    batch_size: int = 512
    queue_size: int = 4096
    feature_dim: int = 64
    proj_hidden: int = 128
    proj_dim: int = 128
    arch: str = "conv"
    conv_widths: tuple[int, ...] = (16, 32, 64)
    mlp_hidden: tuple[int, ...] = ()
    view: ViewConfig = field(default_factory=ViewConfig)
    dtype: str = "float32"

    def __post_init__(self):
        problems = self.validate()
        if problems:
            raise ConfigError(problems)

    def validate(self) -> list[str]:
        p = []
        if self.framework not in FRAMEWORKS:
            p.append(f"framework must be one of {FRAMEWORKS}, got {self.framework!r}")
            return p
        if self.framework != "byol":
            if self.temperature is None or self.temperature <= 0:
                p.append(f"{self.framework} requires a positive InfoNCE temperature")
        if self.framework in ("moco", "byol"):
            if self.encoder_momentum is None or not 0.0 <= self.encoder_momentum <= 1.0:
                p.append(f"{self.framework} requires encoder_momentum in [0, 1]")
        if self.learning_rate <= 0:
            p.append("learning_rate must be positive")
        if self.weight_decay < 0:
            p.append("weight_decay must be non-negative")
        if not 0.0 <= self.sgd_momentum < 1.0:
            p.append("sgd_momentum must lie in [0, 1)")
        if self.epochs < 0:
            p.append("epochs must be non-negative")
        if self.batch_size < 2:
            p.append("batch_size must be at least 2")
        if self.queue_size < 1:
            p.append("queue_size must be positive")
        for name in ("feature_dim", "proj_hidden", "proj_dim"):
            if getattr(self, name) < 1:
                p.append(f"{name} must be positive")
        if self.arch not in ("conv", "mlp"):
            p.append(f"arch must be 'conv' or 'mlp', got {self.arch!r}")
        if self.dtype not in ("float32", "float64"):
            p.append(f"dtype must be float32 or float64, got {self.dtype!r}")
        return p

    @classmethod
    def defaults(cls, framework: str, **overrides) -> "FrameworkConfig":
        if framework not in _FRAMEWORK_DEFAULTS:
            raise ValueError(f"framework must be one of {FRAMEWORKS}, got {framework!r}")
        temperature, lr, m = _FRAMEWORK_DEFAULTS[framework]
        base = dict(
            framework=framework,
            temperature=temperature,
            learning_rate=lr,
            encoder_momentum=m,
            view=ViewConfig.for_framework(framework),
        )
        base.update(overrides)
        return cls(**base)

    def scaled(self, scale: float) -> "FrameworkConfig":
        """Desk-scale shrink: multiplies epochs and queue capacity."""
        if not 0.0 < scale <= 1.0:
            raise ValueError("scale must lie in (0, 1]")
        return replace(
            self,
            epochs=max(1, round(self.epochs * scale)),
            queue_size=max(64, round(self.queue_size * scale)),
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["view"] = asdict(self.view)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FrameworkConfig":
        d = dict(d)
        view = d.pop("view", None)
        if isinstance(view, dict):
            view = {k: tuple(v) if isinstance(v, list) else v for k, v in view.items()}
            d["view"] = ViewConfig(**view)
        elif view is not None:
            d["view"] = view
        for key in ("conv_widths", "mlp_hidden"):
            if key in d and isinstance(d[key], list):
                d[key] = tuple(d[key])
        return cls(**d)


def cosine_lr(base_lr: float, epoch: int, total_epochs: int) -> float:
    if total_epochs <= 1:
        return base_lr
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * epoch / total_epochs))


def framework_pair_loss(
    state: EncoderState,
    view_a: torch.Tensor,
    view_b: torch.Tensor,
    cfg: FrameworkConfig,
    mode: str = "train",
) -> torch.Tensor:
    if mode not in PAIR_LOSS_MODES:
        raise ValueError(f"mode must be one of {PAIR_LOSS_MODES}, got {mode!r}")
    fw = state.framework

    if fw == "simclr":
        # No momentum branch: all modes are literally the same computation.
        return info_nce_loss(state.embed(view_a), state.embed(view_b), cfg.temperature)

    if fw == "moco":
        q = state.embed(view_a)
        if mode == "train":
            with torch.no_grad():
                k = state.momentum_embed(view_b)
        else:
            k = state.momentum_embed(view_b)
            if mode == "noise-single":
                k = k.detach()
        # Snapshot the bank: the push below must not touch the recorded graph.
        negatives = state.queue.tensor().clone()
        loss = moco_infonce_loss(q, k, negatives, cfg.temperature)
        if mode == "train":
            state.queue.push(k)
        return loss

    if fw == "byol":
        p_a = state.predictor(state.embed(view_a))
        p_b = state.predictor(state.embed(view_b))
        if mode == "train":
            with torch.no_grad():
                z_a = state.momentum_embed(view_a)
                z_b = state.momentum_embed(view_b)
        else:
            z_a = state.momentum_embed(view_a)
            z_b = state.momentum_embed(view_b)
            if mode == "noise-single":
                z_a, z_b = z_a.detach(), z_b.detach()
        return 0.5 * (byol_loss(p_a, z_b) + byol_loss(p_b, z_a))

    raise ValueError(f"unknown framework {fw!r}")


def dataset_tensor(dataset, dtype=torch.float32) -> torch.Tensor:
    return torch.from_numpy(np.array(dataset.images)).to(dtype)


def train_encoder(
    dataset,
    cfg: FrameworkConfig,
    *,
    seed: int = 0,
    log_path=None,
    defense=None,
    state: EncoderState | None = None,
) -> EncoderState:
    """SGD + cosine schedule contrastive training; deterministic per seed.

    epochs == 0 returns the freshly initialized state untouched. Partial
    trailing batches (fewer samples than batch_size) are dropped.
    """
    n = len(dataset)
    if n == 0:
        raise ValueError("dataset is empty")
    if cfg.batch_size > n:
        raise ValueError(f"batch_size {cfg.batch_size} exceeds dataset size {n}")

    dtype = torch.float64 if cfg.dtype == "float64" else torch.float32
    images = dataset_tensor(dataset, dtype)
    if state is None:
        state = build_encoder_state(cfg, dataset.image_shape, seed=derive_seed(seed, "init"))
    state.set_train(True)

    opt = torch.optim.SGD(
        state.online_parameters(),
        lr=cfg.learning_rate,
        momentum=cfg.sgd_momentum,
        weight_decay=cfg.weight_decay,
    )

    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        lr = cosine_lr(cfg.learning_rate, epoch, cfg.epochs)
        for group in opt.param_groups:
            group["lr"] = lr
        order = torch.randperm(
            n, generator=torch.Generator().manual_seed(derive_seed(seed, "order", epoch))
        )
        losses = []
        for step, start in enumerate(range(0, n - cfg.batch_size + 1, cfg.batch_size)):
            x = images[order[start:start + cfg.batch_size]]
            gen = torch.Generator().manual_seed(derive_seed(seed, "view", epoch, step))
            va = generate_view_batch(x, cfg.view, gen)
            vb = generate_view_batch(x, cfg.view, gen)
            if defense is not None:
                dgen = torch.Generator().manual_seed(derive_seed(seed, "defense", epoch, step))
                va = defense.apply_batch(va, dgen)
                vb = defense.apply_batch(vb, dgen)
            loss = framework_pair_loss(state, va, vb, cfg, mode="train")
            if not torch.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite training loss at epoch {epoch}", epoch=epoch
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            if state.has_momentum_branch:
                state.ema_update_momentum()
            losses.append(float(loss.detach()))
        if log_path is not None:
            append_jsonl(log_path, {
                "epoch": epoch,
                "loss": float(np.mean(losses)) if losses else float("nan"),
                "lr": lr,
                "wall_ms": (time.perf_counter() - t0) * 1000.0,
            })
    state.set_train(False)
    return state
