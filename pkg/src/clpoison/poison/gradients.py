"""Gradients of the contrastive loss with respect to poisoning perturbations.

branch_mode selects how CL algorithms with a momentum encoder propagate the
input gradient: "dual" flows through both the encoder and the momentum
encoder, "single" treats the momentum branch as a constant function of its
input. SimCLR has no momentum branch, so both modes are the identical
computation. MoCo's queue entries come from past batches and are always
constants. No parameters are updated here.
"""

from __future__ import annotations

import torch

from ..frameworks.augment import generate_view_batch
from ..frameworks.models import EncoderState
from ..frameworks.train import FrameworkConfig, framework_pair_loss

BRANCH_MODES = ("single", "dual")


def _loss_mode(state: EncoderState, branch_mode: str) -> str:
    if branch_mode not in BRANCH_MODES:
        raise ValueError(f"branch_mode must be one of {BRANCH_MODES}, got {branch_mode!r}")
    if branch_mode == "dual" and state.has_momentum_branch:
        return "noise-dual"
    return "noise-single"


def noise_loss(
    state: EncoderState,
    images: torch.Tensor,
    deltas: torch.Tensor,
    cfg: FrameworkConfig,
    branch_mode: str = "dual",
    aug_seed: int = 0,
) -> torch.Tensor:
    """Contrastive loss of the poisoned batch {x_i + delta_i} through the
    two-view pipeline; differentiable w.r.t. deltas when they require grad.

    The encoder is held fixed (eval mode: frozen normalization statistics)."""
    if images.shape != deltas.shape:
        raise ValueError("images and deltas must share one shape")
    state.set_train(False)
    x = torch.clamp(images + deltas, 0.0, 1.0)
    gen = torch.Generator().manual_seed(aug_seed)
    view_a = generate_view_batch(x, cfg.view, gen)
    view_b = generate_view_batch(x, cfg.view, gen)
    return framework_pair_loss(state, view_a, view_b, cfg, mode=_loss_mode(state, branch_mode))


def noise_gradient(
    state: EncoderState,
    images: torch.Tensor,
    deltas: torch.Tensor,
    cfg: FrameworkConfig,
    branch_mode: str = "dual",
    aug_seed: int = 0,
) -> torch.Tensor:
    """Gradient of the poisoned-batch loss w.r.t. each per-sample delta."""
    d = deltas.detach().clone().requires_grad_(True)
    loss = noise_loss(state, images, d, cfg, branch_mode=branch_mode, aug_seed=aug_seed)
    (grad,) = torch.autograd.grad(loss, d)
    return grad.detach()


def classwise_noise_gradient(
    state: EncoderState,
    images: torch.Tensor,
    labels: torch.Tensor,
    class_deltas: torch.Tensor,
    cfg: FrameworkConfig,
    branch_mode: str = "dual",
    aug_seed: int = 0,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Per-class gradient sums plus member counts for one batch.

    Summing batch results and dividing by the total counts gives the mean of
    per-sample delta gradients over each class's members in the phase subset.
    """
    cd = class_deltas.detach().clone().requires_grad_(True)
    loss = noise_loss(state, images, cd[labels], cfg, branch_mode=branch_mode, aug_seed=aug_seed)
    (grad,) = torch.autograd.grad(loss, cd)
    counts = torch.bincount(labels, minlength=class_deltas.shape[0]).to(grad.dtype)
    return grad.detach(), counts
