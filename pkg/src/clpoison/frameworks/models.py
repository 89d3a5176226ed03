"""Encoders, projection/prediction heads, momentum copies, and the MoCo queue.

Conv blocks and MLP heads use BatchNorm (cosine-similarity losses plateau
without batch-level recentering). The EMA momentum update covers parameters
only; momentum copies refresh their own BatchNorm statistics through their
forward passes, as in standard momentum-encoder training.
"""

from __future__ import annotations

import copy
import hashlib
import math
from dataclasses import dataclass

import torch
from torch import nn

from ..errors import TrainingDivergedError  # noqa: F401  (re-exported for callers)


class ConvBackbone(nn.Module):
    """Three conv blocks with BatchNorm, global average pooling, linear head."""

    def __init__(self, in_channels: int = 3, widths=(16, 32, 64), feature_dim: int = 64):
        super().__init__()
        layers = []
        prev = in_channels
        for i, w in enumerate(widths):
            layers += [nn.Conv2d(prev, w, 3, padding=1), nn.BatchNorm2d(w),
                       nn.ReLU(inplace=True)]
            if i < len(widths) - 1:
                layers.append(nn.AvgPool2d(2))
            prev = w
        self.blocks = nn.Sequential(*layers)
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.fc = nn.Linear(prev, feature_dim)

    def forward(self, x):
        x = self.pool(self.blocks(x)).flatten(1)
        return self.fc(x)


class MlpBackbone(nn.Module):
    """Flatten + linear stack; small enough for exact gradient checking."""

    def __init__(self, input_shape, feature_dim: int = 8, hidden=()):
        super().__init__()
        dims = [int(torch.tensor(input_shape).prod())] + list(hidden) + [feature_dim]
        layers: list[nn.Module] = [nn.Flatten()]
        for i in range(len(dims) - 1):
            layers.append(nn.Linear(dims[i], dims[i + 1]))
            if i < len(dims) - 2:
                layers.append(nn.ReLU(inplace=True))
        self.net = nn.Sequential(*layers)

    def forward(self, x):
        return self.net(x)


class MlpHead(nn.Module):
    """Two-layer perceptron head used as projector and (for BYOL) predictor."""

    def __init__(self, in_dim: int, hidden_dim: int, out_dim: int, batch_norm: bool = True):
        super().__init__()
        mid: list[nn.Module] = [nn.Linear(in_dim, hidden_dim)]
        if batch_norm:
            mid.append(nn.BatchNorm1d(hidden_dim))
        mid += [nn.ReLU(inplace=True), nn.Linear(hidden_dim, out_dim)]
        self.net = nn.Sequential(*mid)

    def forward(self, x):
        return self.net(x)


def init_parameters(module: nn.Module, generator: torch.Generator) -> None:
    """Deterministic re-initialization from an explicit generator.

    Mirrors the library defaults for linear/conv layers (kaiming-uniform
    weights, fan-in bounded biases) without touching global RNG state.
    """
    for m in module.modules():
        if isinstance(m, (nn.Linear, nn.Conv2d)):
            fan_in = m.weight.shape[1] * (m.weight[0][0].numel() if m.weight.ndim > 2 else 1)
            bound = 1.0 / math.sqrt(fan_in) if fan_in > 0 else 0.0
            with torch.no_grad():
                m.weight.uniform_(-math.sqrt(3.0) * bound, math.sqrt(3.0) * bound,
                                  generator=generator)
                if m.bias is not None:
                    m.bias.uniform_(-bound, bound, generator=generator)
        elif isinstance(m, (nn.BatchNorm1d, nn.BatchNorm2d, nn.GroupNorm, nn.LayerNorm)):
            with torch.no_grad():
                m.weight.fill_(1.0)
                m.bias.fill_(0.0)
                if hasattr(m, "running_mean") and m.running_mean is not None:
                    m.running_mean.zero_()
                    m.running_var.fill_(1.0)
                    m.num_batches_tracked.zero_()


class FeatureQueue:
    """Fixed-capacity FIFO bank of unit-normalized key embeddings."""

    def __init__(self, capacity: int, dim: int, seed: int = 0, dtype=torch.float32):
        if capacity < 1 or dim < 1:
            raise ValueError("queue capacity and dim must be positive")
        gen = torch.Generator().manual_seed(seed)
        keys = torch.randn(capacity, dim, generator=gen, dtype=dtype)
        self.buffer = keys / keys.norm(dim=1, keepdim=True)
        self.ptr = 0
        self.capacity = capacity

    def push(self, keys: torch.Tensor) -> None:
        keys = keys.detach()
        keys = keys / keys.norm(dim=1, keepdim=True).clamp_min(torch.finfo(keys.dtype).tiny)
        b = keys.shape[0]
        if b >= self.capacity:
            self.buffer.copy_(keys[-self.capacity:])
            self.ptr = 0
            return
        end = self.ptr + b
        if end <= self.capacity:
            self.buffer[self.ptr:end] = keys
        else:
            split = self.capacity - self.ptr
            self.buffer[self.ptr:] = keys[:split]
            self.buffer[:end - self.capacity] = keys[split:]
        self.ptr = end % self.capacity

    def tensor(self) -> torch.Tensor:
        return self.buffer


@dataclass
class EncoderState:
    """Feature extractor plus heads, with optional momentum copies and queue."""

    framework: str
    backbone: nn.Module
    projector: nn.Module
    predictor: nn.Module | None = None
    momentum_backbone: nn.Module | None = None
    momentum_projector: nn.Module | None = None
    momentum: float | None = None
    queue: FeatureQueue | None = None

    @property
    def has_momentum_branch(self) -> bool:
        return self.momentum_backbone is not None

    def features(self, x: torch.Tensor) -> torch.Tensor:
        return self.backbone(x)

    def embed(self, x: torch.Tensor) -> torch.Tensor:
        return self.projector(self.backbone(x))

    def momentum_embed(self, x: torch.Tensor) -> torch.Tensor:
        if not self.has_momentum_branch:
            raise ValueError(f"{self.framework} has no momentum branch")
        return self.momentum_projector(self.momentum_backbone(x))

    def online_parameters(self) -> list[torch.Tensor]:
        params = list(self.backbone.parameters()) + list(self.projector.parameters())
        if self.predictor is not None:
            params += list(self.predictor.parameters())
        return params

    def momentum_parameters(self) -> list[torch.Tensor]:
        if not self.has_momentum_branch:
            return []
        return list(self.momentum_backbone.parameters()) + list(
            self.momentum_projector.parameters()
        )

    def ema_update_momentum(self) -> None:
        pairs_online = list(self.backbone.parameters()) + list(self.projector.parameters())
        ema_update(pairs_online, self.momentum_parameters(), self.momentum)

    def set_train(self, mode: bool) -> None:
        """Training vs eval mode for every module (BatchNorm discipline)."""
        for mod in self.named_modules_map().values():
            mod.train(mode)

    def named_modules_map(self) -> dict[str, nn.Module]:
        mods = {"backbone": self.backbone, "projector": self.projector}
        if self.predictor is not None:
            mods["predictor"] = self.predictor
        if self.has_momentum_branch:
            mods["momentum_backbone"] = self.momentum_backbone
            mods["momentum_projector"] = self.momentum_projector
        return mods

    def named_tensors(self) -> dict[str, torch.Tensor]:
        """All parameters and buffers (BatchNorm statistics included)."""
        out = {}
        for prefix, mod in self.named_modules_map().items():
            for name, p in mod.named_parameters():
                out[f"{prefix}.{name}"] = p
            for name, b in mod.named_buffers():
                out[f"{prefix}.{name}"] = b
        if self.queue is not None:
            out["queue.buffer"] = self.queue.buffer
        return out

    def params_hash(self) -> str:
        h = hashlib.blake2b(digest_size=16)
        for name, t in sorted(self.named_tensors().items()):
            if name.startswith("queue."):
                continue
            h.update(name.encode())
            h.update(t.detach().numpy().tobytes())
        return h.hexdigest()


def ema_update(online_params, momentum_params, m: float) -> None:
    """In-place exponential moving average: theta_m <- m*theta_m + (1-m)*theta."""
    if not 0.0 <= m <= 1.0:
        raise ValueError(f"momentum coefficient must lie in [0, 1], got {m}")
    online = list(online_params)
    momentum = list(momentum_params)
    if len(online) != len(momentum):
        raise ValueError("parameter lists differ in length")
    with torch.no_grad():
        for p, pm in zip(online, momentum):
            if p.shape != pm.shape:
                raise ValueError(f"shape mismatch {tuple(p.shape)} vs {tuple(pm.shape)}")
            pm.mul_(m).add_(p, alpha=1.0 - m)


def _frozen_copy(module: nn.Module) -> nn.Module:
    clone = copy.deepcopy(module)
    for p in clone.parameters():
        p.requires_grad_(False)
    return clone


def build_encoder_state(cfg, input_shape, seed: int = 0) -> EncoderState:
    """Fresh EncoderState for a FrameworkConfig; deterministic per seed."""
    dtype = torch.float64 if cfg.dtype == "float64" else torch.float32
    gen = torch.Generator().manual_seed(seed)
    channels = input_shape[0]
    if cfg.arch == "conv":
        backbone = ConvBackbone(channels, cfg.conv_widths, cfg.feature_dim)
    elif cfg.arch == "mlp":
        backbone = MlpBackbone(input_shape, cfg.feature_dim, cfg.mlp_hidden)
    else:
        raise ValueError(f"unknown arch {cfg.arch!r}")
    projector = MlpHead(cfg.feature_dim, cfg.proj_hidden, cfg.proj_dim)
    predictor = None
    if cfg.framework == "byol":
        predictor = MlpHead(cfg.proj_dim, cfg.proj_hidden, cfg.proj_dim)

    for module in (backbone, projector, predictor):
        if module is not None:
            init_parameters(module, gen)
            module.to(dtype)

    momentum_backbone = momentum_projector = None
    queue = None
    if cfg.framework in ("moco", "byol"):
        momentum_backbone = _frozen_copy(backbone)
        momentum_projector = _frozen_copy(projector)
    if cfg.framework == "moco":
        queue = FeatureQueue(cfg.queue_size, cfg.proj_dim, seed=seed + 1, dtype=dtype)

    return EncoderState(
        framework=cfg.framework,
        backbone=backbone,
        projector=projector,
        predictor=predictor,
        momentum_backbone=momentum_backbone,
        momentum_projector=momentum_projector,
        momentum=cfg.encoder_momentum,
        queue=queue,
    )


CHECKPOINT_VERSION = 1


def save_checkpoint(state: EncoderState, cfg, input_shape, path) -> None:
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "framework_config": cfg.to_dict(),
        "input_shape": tuple(int(d) for d in input_shape),
        # float tensors stored as f32; integer buffers keep their dtype
        "params": {
            k: (v.detach().to(torch.float32).clone() if v.is_floating_point()
                else v.detach().clone())
            for k, v in state.named_tensors().items()
        },
        "queue_ptr": state.queue.ptr if state.queue is not None else 0,
    }
    torch.save(payload, path)


def load_checkpoint(path):
    from .train import FrameworkConfig  # local import to avoid a cycle

    payload = torch.load(path, map_location="cpu", weights_only=True)
    if payload.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('format_version')}")
    cfg = FrameworkConfig.from_dict(payload["framework_config"])
    state = build_encoder_state(cfg, payload["input_shape"], seed=0)
    tensors = state.named_tensors()
    dtype = torch.float64 if cfg.dtype == "float64" else torch.float32
    for name, stored in payload["params"].items():
        if name not in tensors:
            raise ValueError(f"checkpoint parameter {name!r} has no slot in the rebuilt state")
        with torch.no_grad():
            tensors[name].copy_(stored.to(dtype) if stored.is_floating_point() else stored)
    if state.queue is not None:
        state.queue.ptr = int(payload.get("queue_ptr", 0))
    state.set_train(False)
    return state, cfg, payload["input_shape"]
