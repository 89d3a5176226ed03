"""Linear probing of a frozen encoder on a labeled downstream set."""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

from ..utils import derive_seed
from .models import EncoderState, init_parameters


def extract_features(state: EncoderState, images: torch.Tensor, batch_size: int = 256) -> torch.Tensor:
    state.set_train(False)
    chunks = []
    with torch.no_grad():
        for start in range(0, len(images), batch_size):
            chunks.append(state.features(images[start:start + batch_size]))
    return torch.cat(chunks)


def linear_probe(
    state: EncoderState,
    dataset,
    *,
    epochs: int = 100,
    seed: int = 0,
    test_fraction: float = 0.2,
    lr: float = 1e-2,
    batch_size: int = 128,
    standardize: bool = False,
) -> float:
    """Top-1 accuracy of a linear classifier on frozen features.

    The encoder is never updated. When the dataset carries no explicit test
    split, a seeded 80/20 shuffle split is used. The classifier trains on
    raw frozen features (the usual linear-evaluation protocol);
    `standardize` optionally whitens per-dimension with train-split stats.
    """
    n = len(dataset)
    rng = np.random.default_rng(derive_seed(seed, "probe-split"))
    order = rng.permutation(n)
    n_test = int(round(test_fraction * n))
    if n_test == 0 or n_test == n:
        raise ValueError("evaluation split is empty; adjust test_fraction or dataset size")
    test_idx, train_idx = order[:n_test], order[n_test:]

    dtype = next(iter(state.backbone.parameters())).dtype
    images = torch.from_numpy(np.array(dataset.images)).to(dtype)
    labels = torch.from_numpy(np.array(dataset.labels))
    feats = extract_features(state, images)
    if standardize:
        mu = feats[train_idx].mean(dim=0, keepdim=True)
        sigma = feats[train_idx].std(dim=0, keepdim=True).clamp_min(1e-6)
        feats = (feats - mu) / sigma

    head = nn.Linear(feats.shape[1], dataset.class_count).to(dtype)
    init_parameters(head, torch.Generator().manual_seed(derive_seed(seed, "probe-head")))
    opt = torch.optim.Adam(head.parameters(), lr=lr)
    loss_fn = nn.CrossEntropyLoss()

    x_train, y_train = feats[train_idx], labels[train_idx]
    for epoch in range(epochs):
        perm = torch.randperm(
            len(train_idx),
            generator=torch.Generator().manual_seed(derive_seed(seed, "probe-order", epoch)),
        )
        for start in range(0, len(train_idx), batch_size):
            idx = perm[start:start + batch_size]
            loss = loss_fn(head(x_train[idx]), y_train[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()

    with torch.no_grad():
        pred = head(feats[test_idx]).argmax(dim=1)
    return float((pred == labels[test_idx]).double().mean())
