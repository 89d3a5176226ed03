"""Differentiable view augmentation: random resized crop, flip, color jitter, grayscale.

Everything is pure torch so that gradients w.r.t. the input pixels flow
through the whole view pipeline (required when optimizing poisoning noise
through augmented views). All randomness comes from an explicit generator;
with a fixed generator state the view pair is reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import torch
import torch.nn.functional as F

_LUMA = (0.299, 0.587, 0.114)
# NTSC RGB<->YIQ pair; hue jitter rotates the IQ chroma plane.
_RGB_TO_YIQ = torch.tensor(
    [[0.299, 0.587, 0.114], [0.596, -0.274, -0.322], [0.211, -0.523, 0.312]]
)
_YIQ_TO_RGB = torch.tensor(
    [[1.0, 0.956, 0.621], [1.0, -0.272, -0.647], [1.0, -1.106, 1.703]]
)


@dataclass(frozen=True)
class ViewConfig:
    """Parameters of the two-view augmentation. A (1.0, 1.0) crop scale
    disables cropping entirely (the view keeps the full frame)."""

    crop_scale: tuple[float, float] = (0.2, 1.0)
    crop_ratio: tuple[float, float] = (3.0 / 4.0, 4.0 / 3.0)
    flip_prob: float = 0.5
    jitter_prob: float = 0.8
    brightness: float = 0.4
    contrast: float = 0.4
    saturation: float = 0.4
    hue: float = 0.1
    grayscale_prob: float = 0.2

    def __post_init__(self):
        lo, hi = self.crop_scale
        if not (0.0 < lo <= hi <= 1.0):
            raise ValueError(f"crop_scale must satisfy 0 < lo <= hi <= 1, got {self.crop_scale}")
        rlo, rhi = self.crop_ratio
        if not (0.0 < rlo <= rhi):
            raise ValueError(f"crop_ratio must be positive and ordered, got {self.crop_ratio}")
        for name in ("flip_prob", "jitter_prob", "grayscale_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {p}")
        for name in ("brightness", "contrast", "saturation"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not 0.0 <= self.hue <= 0.5:
            raise ValueError(f"hue must lie in [0, 0.5], got {self.hue}")

    @classmethod
    def identity(cls) -> "ViewConfig":
        return cls(
            crop_scale=(1.0, 1.0), crop_ratio=(1.0, 1.0), flip_prob=0.0,
            jitter_prob=0.0, brightness=0.0, contrast=0.0, saturation=0.0,
            hue=0.0, grayscale_prob=0.0,
        )

    @classmethod
    def for_framework(cls, framework: str) -> "ViewConfig":
        # SimCLR's canonical jitter is twice as strong as MoCo v2 / BYOL's.
        if framework == "simclr":
            return cls(brightness=0.8, contrast=0.8, saturation=0.8, hue=0.2)
        return cls()

    def flips_only(self) -> bool:
        return (
            self.crop_scale == (1.0, 1.0)
            and self.jitter_prob == 0.0
            and self.grayscale_prob == 0.0
        )


def _rand(batch: int, gen: torch.Generator, dtype: torch.dtype) -> torch.Tensor:
    return torch.rand(batch, generator=gen, dtype=dtype)


def _uniform(batch, lo, hi, gen, dtype):
    return torch.empty(batch, dtype=dtype).uniform_(lo, hi, generator=gen)


def _crop_boxes(batch: int, cfg: ViewConfig, gen, dtype):
    """Sample (w, h, x0, y0) as fractions of the frame; box always inside it."""
    area = _uniform(batch, cfg.crop_scale[0], cfg.crop_scale[1], gen, dtype)
    log_ratio = _uniform(batch, math.log(cfg.crop_ratio[0]), math.log(cfg.crop_ratio[1]), gen, dtype)
    ratio = torch.exp(log_ratio)
    w = torch.sqrt(area * ratio).clamp(max=1.0)
    h = torch.sqrt(area / ratio).clamp(max=1.0)
    x0 = _rand(batch, gen, dtype) * (1.0 - w)
    y0 = _rand(batch, gen, dtype) * (1.0 - h)
    return w, h, x0, y0


def _apply_color(x: torch.Tensor, cfg: ViewConfig, gen) -> torch.Tensor:
    b, c = x.shape[0], x.shape[1]
    dtype = x.dtype
    gate = (_rand(b, gen, dtype) < cfg.jitter_prob).view(-1, 1, 1, 1)
    fb = _uniform(b, max(0.0, 1 - cfg.brightness), 1 + cfg.brightness, gen, dtype).view(-1, 1, 1, 1)
    fc = _uniform(b, max(0.0, 1 - cfg.contrast), 1 + cfg.contrast, gen, dtype).view(-1, 1, 1, 1)
    fs = _uniform(b, max(0.0, 1 - cfg.saturation), 1 + cfg.saturation, gen, dtype).view(-1, 1, 1, 1)
    hue = _uniform(b, -cfg.hue, cfg.hue, gen, dtype)
    gray_gate = (_rand(b, gen, dtype) < cfg.grayscale_prob).view(-1, 1, 1, 1)

    if cfg.jitter_prob > 0:
        y = x * fb
        if c == 3:
            luma_w = torch.tensor(_LUMA, dtype=dtype).view(1, 3, 1, 1)
            luma = (y * luma_w).sum(dim=1, keepdim=True)
        else:
            luma = y.mean(dim=1, keepdim=True)
        mean = luma.mean(dim=(2, 3), keepdim=True)
        y = (y - mean) * fc + mean
        if c == 3:
            luma = (y * luma_w).sum(dim=1, keepdim=True)
            y = luma + (y - luma) * fs
            angle = hue * (2.0 * math.pi)
            cos_a, sin_a = torch.cos(angle), torch.sin(angle)
            rot = torch.zeros(b, 3, 3, dtype=dtype)
            rot[:, 0, 0] = 1.0
            rot[:, 1, 1] = cos_a
            rot[:, 1, 2] = -sin_a
            rot[:, 2, 1] = sin_a
            rot[:, 2, 2] = cos_a
            m = _YIQ_TO_RGB.to(dtype) @ rot @ _RGB_TO_YIQ.to(dtype)
            y = torch.einsum("bij,bjhw->bihw", m, y)
        x = torch.where(gate, y, x)

    if cfg.grayscale_prob > 0 and c == 3:
        luma_w = torch.tensor(_LUMA, dtype=dtype).view(1, 3, 1, 1)
        gray = (x * luma_w).sum(dim=1, keepdim=True).expand_as(x)
        x = torch.where(gray_gate, gray, x)
    return x


def generate_view_batch(
    images: torch.Tensor, cfg: ViewConfig, generator: torch.Generator
) -> torch.Tensor:
    """One augmented view per input image, vectorized over the batch."""
    if images.ndim != 4:
        raise ValueError(f"expected (B, C, H, W) images, got shape {tuple(images.shape)}")
    b = images.shape[0]
    dtype = images.dtype

    w, h, x0, y0 = _crop_boxes(b, cfg, generator, dtype)
    flip = _rand(b, generator, dtype) < cfg.flip_prob

    if cfg.crop_scale == (1.0, 1.0):
        # Cropping disabled: exact tensor ops, no resampling error.
        x = images
        if cfg.flip_prob > 0:
            x = torch.where(flip.view(-1, 1, 1, 1), x.flip(-1), x)
    else:
        sign = torch.where(flip, -torch.ones_like(w), torch.ones_like(w))
        theta = torch.zeros(b, 2, 3, dtype=dtype)
        theta[:, 0, 0] = w * sign
        theta[:, 0, 2] = 2.0 * x0 + w - 1.0
        theta[:, 1, 1] = h
        theta[:, 1, 2] = 2.0 * y0 + h - 1.0
        grid = F.affine_grid(theta, list(images.shape), align_corners=False)
        x = F.grid_sample(images, grid, mode="bilinear", padding_mode="reflection",
                          align_corners=False)

    x = _apply_color(x, cfg, generator)
    return x.clamp(0.0, 1.0)


def generate_views(
    image: torch.Tensor, cfg: ViewConfig, generator: torch.Generator
) -> tuple[torch.Tensor, torch.Tensor]:
    """Two independently augmented views of one (C, H, W) image."""
    if image.ndim != 3:
        raise ValueError(f"expected a (C, H, W) image, got shape {tuple(image.shape)}")
    batch = image.unsqueeze(0)
    view_a = generate_view_batch(batch, cfg, generator)[0]
    view_b = generate_view_batch(batch, cfg, generator)[0]
    return view_a, view_b


def scaled_views(cfg: ViewConfig, **overrides) -> ViewConfig:
    return replace(cfg, **overrides)
