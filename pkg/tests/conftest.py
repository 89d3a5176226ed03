import numpy as np
import pytest
import torch

import clpoison as cp
from clpoison.frameworks import FrameworkConfig, ViewConfig
from clpoison.frameworks.models import build_encoder_state


@pytest.fixture(scope="session", autouse=True)
def single_thread():
    torch.set_num_threads(1)


@pytest.fixture(scope="session")
def tiny_dataset():
    return cp.make_synthetic(2, 16, 16, 16, seed=0, template_amplitude=0.2)


def tiny_config(framework="simclr", **overrides):
    base = dict(
        epochs=2, batch_size=8, feature_dim=16, proj_hidden=16, proj_dim=8,
        conv_widths=(8, 16), queue_size=32,
    )
    base.update(overrides)
    return FrameworkConfig.defaults(framework, **base)


def toy_config(framework="simclr", **overrides):
    """Sub-1k-parameter float64 encoder with identity views, for exact
    gradient checking."""
    base = dict(
        epochs=1, batch_size=4, feature_dim=6, proj_hidden=5, proj_dim=4,
        arch="mlp", mlp_hidden=(), queue_size=16, dtype="float64",
        view=ViewConfig.identity(),
    )
    base.update(overrides)
    return FrameworkConfig.defaults(framework, **base)


def toy_state(cfg, input_shape=(3, 4, 4), seed=3):
    return build_encoder_state(cfg, input_shape, seed=seed)


def toy_batch(n=4, shape=(3, 4, 4), seed=11, dtype=torch.float64):
    gen = torch.Generator().manual_seed(seed)
    x = 0.3 + 0.4 * torch.rand((n, *shape), generator=gen, dtype=dtype)
    d = 0.01 * (torch.rand((n, *shape), generator=gen, dtype=dtype) - 0.5)
    return x, d


def toy_labeled(x: torch.Tensor, class_count=2):
    labels = np.arange(len(x)) % class_count
    return cp.LabeledImageDataset(x.numpy().clip(0, 1), labels, class_count)
