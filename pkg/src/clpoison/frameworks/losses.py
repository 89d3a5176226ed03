"""Contrastive losses: NT-Xent over paired views, MoCo's queue form, BYOL MSE."""

from __future__ import annotations

import torch

from ..errors import NumericalDomainError


def _normalize_rows(z: torch.Tensor, what: str) -> torch.Tensor:
    norms = z.norm(dim=1, keepdim=True)
    if bool((norms <= torch.finfo(z.dtype).tiny).any()):
        raise NumericalDomainError(f"{what} contains a zero-norm row; cosine undefined")
    return z / norms


def info_nce_loss(
    embeddings_a: torch.Tensor, embeddings_b: torch.Tensor, temperature: float
) -> torch.Tensor:
    """NT-Xent over 2B anchors on cosine similarities.

    Row i of each input is one view of sample i. Every anchor is contrasted
    against its positive partner and the remaining 2B-2 embeddings.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    if embeddings_a.shape != embeddings_b.shape or embeddings_a.ndim != 2:
        raise ValueError("embeddings must be two (B, d) arrays of equal shape")
    b = embeddings_a.shape[0]
    if b < 2:
        raise ValueError("need at least 2 pairs for a contrastive batch")

    z = _normalize_rows(torch.cat([embeddings_a, embeddings_b], dim=0), "embeddings")
    logits = (z @ z.T) / temperature
    eye = torch.eye(2 * b, dtype=torch.bool, device=z.device)
    logits = logits.masked_fill(eye, float("-inf"))
    positive = torch.arange(2 * b, device=z.device)
    positive = torch.where(positive < b, positive + b, positive - b)
    per_anchor = logits[torch.arange(2 * b), positive] - torch.logsumexp(logits, dim=1)
    return -per_anchor.mean()


def moco_infonce_loss(
    query: torch.Tensor,
    key_positive: torch.Tensor,
    negatives: torch.Tensor,
    temperature: float,
) -> torch.Tensor:
    """InfoNCE with one positive key per query and a bank of negative keys.

    `negatives` rows are assumed unit-normalized (the queue invariant);
    query and positive are normalized here.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    q = _normalize_rows(query, "query")
    k = _normalize_rows(key_positive, "positive key")
    l_pos = (q * k).sum(dim=1, keepdim=True)
    l_neg = q @ negatives.T
    logits = torch.cat([l_pos, l_neg], dim=1) / temperature
    return -(logits[:, 0] - torch.logsumexp(logits, dim=1)).mean()


def byol_loss(prediction: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Normalized MSE, 2 - 2 * cos(prediction, target), averaged over the batch.

    One direction only; callers symmetrize over the two views. Detaching the
    target (or freezing its parameters) is the caller's responsibility.
    """
    if prediction.shape != target.shape or prediction.ndim != 2:
        raise ValueError("prediction and target must be (B, d) arrays of equal shape")
    p = _normalize_rows(prediction, "prediction")
    z = _normalize_rows(target, "target")
    return (2.0 - 2.0 * (p * z).sum(dim=1)).mean()
