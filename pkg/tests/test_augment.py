import pytest
import torch

from clpoison.frameworks.augment import ViewConfig, generate_view_batch, generate_views


def _image(seed=0, shape=(3, 16, 16)):
    gen = torch.Generator().manual_seed(seed)
    return torch.rand(shape, generator=gen)


def test_identity_config_returns_input_exactly():
    img = _image()
    va, vb = generate_views(img, ViewConfig.identity(), torch.Generator().manual_seed(1))
    assert torch.equal(va, img)
    assert torch.equal(vb, img)


def test_flip_only_mirrors_input():
    cfg = ViewConfig(
        crop_scale=(1.0, 1.0), crop_ratio=(1.0, 1.0), flip_prob=1.0,
        jitter_prob=0.0, brightness=0, contrast=0, saturation=0, hue=0,
        grayscale_prob=0.0,
    )
    img = _image(3)
    view, _ = generate_views(img, cfg, torch.Generator().manual_seed(0))
    assert torch.equal(view, img.flip(-1))


def test_same_seed_reproduces_view_pair():
    img = _image(5)
    cfg = ViewConfig()
    a1, b1 = generate_views(img, cfg, torch.Generator().manual_seed(9))
    a2, b2 = generate_views(img, cfg, torch.Generator().manual_seed(9))
    assert torch.equal(a1, a2) and torch.equal(b1, b2)
    # views of one pair differ from each other (crop/jitter active)
    assert not torch.equal(a1, b1)


def test_view_range_and_shape():
    gen = torch.Generator().manual_seed(0)
    batch = torch.rand(16, 3, 20, 20, generator=gen)
    out = generate_view_batch(batch, ViewConfig(), torch.Generator().manual_seed(4))
    assert out.shape == batch.shape
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_invalid_crop_scale_rejected():
    with pytest.raises(ValueError):
        ViewConfig(crop_scale=(0.0, 1.0))
    with pytest.raises(ValueError):
        ViewConfig(crop_scale=(0.5, 1.5))
    with pytest.raises(ValueError):
        ViewConfig(crop_scale=(0.9, 0.5))


def test_gradient_flows_through_pipeline():
    gen = torch.Generator().manual_seed(0)
    x = torch.rand(4, 3, 12, 12, generator=gen, dtype=torch.float64) * 0.5 + 0.25
    x.requires_grad_(True)
    out = generate_view_batch(x, ViewConfig(), torch.Generator().manual_seed(2))
    out.sum().backward()
    assert x.grad is not None
    assert float(x.grad.abs().sum()) > 0


def test_grayscale_only_collapses_channels():
    cfg = ViewConfig(
        crop_scale=(1.0, 1.0), crop_ratio=(1.0, 1.0), flip_prob=0.0,
        jitter_prob=0.0, brightness=0, contrast=0, saturation=0, hue=0,
        grayscale_prob=1.0,
    )
    img = _image(7)
    view, _ = generate_views(img, cfg, torch.Generator().manual_seed(0))
    assert torch.allclose(view[0], view[1]) and torch.allclose(view[1], view[2])


def test_framework_view_presets():
    strong = ViewConfig.for_framework("simclr")
    mild = ViewConfig.for_framework("moco")
    assert strong.brightness > mild.brightness
    assert mild == ViewConfig.for_framework("byol")
