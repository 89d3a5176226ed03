"""Projected gradient descent over an L-infinity ball of valid images."""

from __future__ import annotations

from dataclasses import dataclass, field

import torch

from ..errors import NumericalDomainError

EPSILON_DEFAULT = 8.0 / 255.0


@dataclass(frozen=True)
class PgdConfig:
    """Signed-step PGD. alpha defaults to epsilon/10; direction "minimize"
    descends the loss, "maximize" ascends it. epsilon == 0 is the degenerate
    no-perturbation budget (alpha forced to 0, steps become no-ops)."""

    epsilon: float = EPSILON_DEFAULT
    alpha: float | None = None
    steps: int = 1
    direction: str = "minimize"
    pixel_min: float = 0.0
    pixel_max: float = 1.0

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if self.alpha is None:
            object.__setattr__(self, "alpha", self.epsilon / 10.0)
        if self.epsilon == 0:
            if self.alpha != 0:
                raise ValueError("epsilon == 0 requires alpha == 0")
        elif not 0.0 < self.alpha <= self.epsilon:
            raise ValueError(
                f"step size must satisfy 0 < alpha <= epsilon, got alpha={self.alpha}, "
                f"epsilon={self.epsilon}"
            )
        if self.steps < 0:
            raise ValueError("steps must be non-negative")
        if self.direction not in ("minimize", "maximize"):
            raise ValueError(f"direction must be minimize or maximize, got {self.direction!r}")
        if self.pixel_min >= self.pixel_max:
            raise ValueError("pixel bounds must be ordered")


def pgd_step(
    x_current: torch.Tensor,
    gradient: torch.Tensor,
    cfg: PgdConfig,
    x_anchor: torch.Tensor,
) -> torch.Tensor:
    """One signed step followed by projection onto the epsilon ball around
    x_anchor intersected with the valid pixel range. sign(0) == 0, so flat
    coordinates do not move."""
    if x_current.shape != gradient.shape or x_current.shape != x_anchor.shape:
        raise ValueError("x_current, gradient and x_anchor must share one shape")
    if not torch.isfinite(gradient).all():
        raise NumericalDomainError("gradient contains non-finite values")
    step = cfg.alpha * torch.sign(gradient)
    x = x_current - step if cfg.direction == "minimize" else x_current + step
    x = torch.clamp(x, x_anchor - cfg.epsilon, x_anchor + cfg.epsilon)
    return torch.clamp(x, cfg.pixel_min, cfg.pixel_max)


def project_ball(delta: torch.Tensor, epsilon: float) -> torch.Tensor:
    """Projection onto the L-infinity ball alone (no pixel bounds); used for
    class-wise noise, where no single anchor image defines valid pixels."""
    return torch.clamp(delta, -epsilon, epsilon)
