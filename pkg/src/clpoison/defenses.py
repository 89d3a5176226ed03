"""Defensive input transforms applied during victim training.

All transforms map [0, 1] images to [0, 1] images of the same shape and are
pure per image given an rng stream. They slot into the victim's pipeline
right after view generation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .errors import DegenerateInputError

DEFENSE_KINDS = ("none", "random_noise", "gauss_smooth", "cutout", "matrix_completion")


def add_random_noise(image: torch.Tensor, sigma: float, generator: torch.Generator) -> torch.Tensor:
    """Additive iid Gaussian pixel noise, clamped back to valid pixels."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return image
    noise = torch.randn(image.shape, generator=generator, dtype=image.dtype)
    return torch.clamp(image + sigma * noise, 0.0, 1.0)


def _gaussian_kernel1d(k: int, dtype) -> torch.Tensor:
    # The common imaging convention ties the kernel std to its size.
    sigma = 0.3 * ((k - 1) * 0.5 - 1) + 0.8
    xs = torch.arange(k, dtype=dtype) - (k - 1) / 2.0
    g = torch.exp(-(xs ** 2) / (2.0 * sigma ** 2))
    return g / g.sum()


def gaussian_kernel2d(k: int, dtype=torch.float64) -> torch.Tensor:
    g = _gaussian_kernel1d(k, dtype)
    return torch.outer(g, g)


def gaussian_smooth(image: torch.Tensor, kernel_size: int) -> torch.Tensor:
    """Per-channel convolution with a normalized Gaussian kernel, reflect-padded."""
    if kernel_size < 1 or kernel_size % 2 == 0:
        raise ValueError(f"kernel size must be odd and positive, got {kernel_size}")
    if kernel_size == 1:
        return image
    squeeze = image.ndim == 3
    x = image.unsqueeze(0) if squeeze else image
    if x.ndim != 4:
        raise ValueError("expected (C, H, W) or (B, C, H, W)")
    c = x.shape[1]
    kernel = gaussian_kernel2d(kernel_size, dtype=x.dtype)
    weight = kernel.view(1, 1, kernel_size, kernel_size).repeat(c, 1, 1, 1)
    pad = kernel_size // 2
    x = F.pad(x, (pad, pad, pad, pad), mode="reflect")
    out = F.conv2d(x, weight, groups=c)
    return out.squeeze(0) if squeeze else out


def cutout(
    image: torch.Tensor,
    hole_size: int,
    generator: torch.Generator,
    center: tuple[int, int] | None = None,
) -> torch.Tensor:
    """Zero one axis-aligned square; its center is uniform over the image and
    the square is clipped at the borders."""
    if hole_size < 0:
        raise ValueError("hole size must be non-negative")
    if hole_size == 0:
        return image
    h, w = image.shape[-2], image.shape[-1]
    if center is None:
        cy = int(torch.randint(h, (1,), generator=generator))
        cx = int(torch.randint(w, (1,), generator=generator))
    else:
        cy, cx = center
    y0, x0 = cy - hole_size // 2, cx - hole_size // 2
    y1, x1 = y0 + hole_size, x0 + hole_size
    y0, x0 = max(0, y0), max(0, x0)
    y1, x1 = min(h, y1), min(w, x1)
    out = image.clone()
    out[..., y0:y1, x0:x1] = 0.0
    return out


def usvt_reconstruct(
    matrix: torch.Tensor,
    mask: torch.Tensor,
    drop_prob: float,
    clip_fraction: float = 0.5,
    singular_threshold: float | None = None,
    clamp: bool = True,
) -> torch.Tensor:
    """Low-rank completion by singular value thresholding.

    Unobserved entries are filled with 0, the matrix is rescaled by
    1/(1 - drop_prob), and the smallest ceil(clip_fraction * min(H, W))
    singular values are zeroed before reconstructing and clamping to [0, 1].
    With `singular_threshold` set, values below that absolute level are
    zeroed instead of a fixed fraction. `clamp=False` exposes the raw
    low-rank reconstruction (whose rank the clip bounds).
    """
    if matrix.ndim != 2 or mask.shape != matrix.shape:
        raise ValueError("matrix and mask must be equal-shape 2-D arrays")
    if not 0.0 <= drop_prob < 1.0:
        raise ValueError("drop_prob must lie in [0, 1)")
    if not 0.0 <= clip_fraction <= 1.0:
        raise ValueError("clip_fraction must lie in [0, 1]")
    mask = mask.to(torch.bool)
    if not bool(mask.any()):
        raise DegenerateInputError("every entry is dropped; nothing to reconstruct")
    filled = torch.where(mask, matrix, torch.zeros((), dtype=matrix.dtype)) / (1.0 - drop_prob)
    u, s, vh = torch.linalg.svd(filled.to(torch.float64), full_matrices=False)
    if singular_threshold is None:
        zeroed = math.ceil(clip_fraction * s.shape[0])
        keep = s.shape[0] - zeroed
        s = torch.where(torch.arange(s.shape[0]) < keep, s, torch.zeros((), dtype=s.dtype))
    else:
        s = torch.where(s >= singular_threshold, s, torch.zeros((), dtype=s.dtype))
    out = (u * s.unsqueeze(0)) @ vh
    if clamp:
        out = torch.clamp(out, 0.0, 1.0)
    return out.to(matrix.dtype)


def _usvt_batch(stack: torch.Tensor, mask: torch.Tensor, drop_prob: float,
                clip_fraction: float) -> torch.Tensor:
    """Batched USVT over (..., H, W); one mask broadcast over leading dims."""
    filled = torch.where(mask, stack, torch.zeros((), dtype=stack.dtype)) / (1.0 - drop_prob)
    u, s, vh = torch.linalg.svd(filled.to(torch.float64), full_matrices=False)
    keep = s.shape[-1] - math.ceil(clip_fraction * s.shape[-1])
    s = torch.where(torch.arange(s.shape[-1]) < keep, s, torch.zeros((), dtype=s.dtype))
    out = (u * s.unsqueeze(-2)) @ vh
    return torch.clamp(out, 0.0, 1.0).to(stack.dtype)


def matrix_complete_augment(
    image: torch.Tensor,
    drop_prob: float = 0.25,
    clip_fraction: float = 0.5,
    generator: torch.Generator | None = None,
    mask: torch.Tensor | None = None,
) -> torch.Tensor:
    """Randomly drop pixel positions (one mask shared across channels), then
    reconstruct each channel with USVT."""
    if image.ndim != 3:
        raise ValueError("expected a (C, H, W) image")
    if not 0.0 <= drop_prob < 1.0:
        raise ValueError("drop_prob must lie in [0, 1)")
    h, w = image.shape[-2], image.shape[-1]
    if mask is None:
        mask = torch.rand((h, w), generator=generator, dtype=image.dtype) >= drop_prob
    if not bool(mask.any()):
        raise DegenerateInputError("every pixel was dropped; nothing to reconstruct")
    return _usvt_batch(image, mask, drop_prob, clip_fraction)


@dataclass(frozen=True)
class DefenseTransform:
    """Named defensive augmentation, selectable from experiment configs."""

    kind: str = "none"
    sigma: float = 8.0 / 255.0
    kernel_size: int = 3
    hole_size: int = 16
    drop_prob: float = 0.25
    clip_fraction: float = 0.5

    def __post_init__(self):
        if self.kind not in DEFENSE_KINDS:
            raise ValueError(f"kind must be one of {DEFENSE_KINDS}, got {self.kind!r}")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd and positive")
        if self.hole_size < 0:
            raise ValueError("hole_size must be non-negative")
        if not 0.0 <= self.drop_prob < 1.0:
            raise ValueError("drop_prob must lie in [0, 1)")
        if not 0.0 <= self.clip_fraction <= 1.0:
            raise ValueError("clip_fraction must lie in [0, 1]")

    def apply_batch(self, images: torch.Tensor, generator: torch.Generator) -> torch.Tensor:
        if self.kind == "none":
            return images
        if self.kind == "random_noise":
            return add_random_noise(images, self.sigma, generator)
        if self.kind == "gauss_smooth":
            return gaussian_smooth(images, self.kernel_size)
        if self.kind == "cutout":
            return torch.stack([cutout(img, self.hole_size, generator) for img in images])
        # matrix completion: one mask per image, channels share it
        b, _, h, w = images.shape
        masks = (torch.rand((b, 1, h, w), generator=generator, dtype=images.dtype)
                 >= self.drop_prob)
        if not bool(masks.flatten(1).any(dim=1).all()):
            raise DegenerateInputError("a sampled mask dropped every pixel")
        return _usvt_batch(images, masks, self.drop_prob, self.clip_fraction)
