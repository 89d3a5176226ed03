import math

import numpy as np
import pytest
import torch

import clpoison as cp
from clpoison.defenses import (
    DefenseTransform,
    add_random_noise,
    cutout,
    gaussian_kernel2d,
    gaussian_smooth,
    matrix_complete_augment,
    usvt_reconstruct,
)
from clpoison.errors import DegenerateInputError


def _rand_image(shape=(3, 16, 16), seed=0, lo=0.0, hi=1.0):
    gen = torch.Generator().manual_seed(seed)
    return lo + (hi - lo) * torch.rand(shape, generator=gen)


# --- random noise -------------------------------------------------------------


def test_noise_sigma_zero_is_identity():
    img = _rand_image()
    out = add_random_noise(img, 0.0, torch.Generator().manual_seed(0))
    assert torch.equal(out, img)


def test_noise_output_in_range():
    img = _rand_image(seed=2)
    out = add_random_noise(img, 64 / 255, torch.Generator().manual_seed(1))
    assert out.min() >= 0.0 and out.max() <= 1.0
    assert not torch.equal(out, img)


def test_noise_empirical_std_on_midgray():
    # clamping at +-2 sigma censors the tails; the censored std of a
    # sigma=64/255 Gaussian on mid-gray stays within 5% of sigma
    img = torch.full((3, 200, 167), 0.5, dtype=torch.float64)  # 100200 pixels
    sigma = 64 / 255
    out = add_random_noise(img, sigma, torch.Generator().manual_seed(3))
    emp = float((out - img).std())
    assert abs(emp - sigma) <= 0.05 * sigma


# --- gaussian smoothing -------------------------------------------------------


def test_smooth_kernel_one_is_identity():
    img = _rand_image()
    assert torch.equal(gaussian_smooth(img, 1), img)


def test_smooth_constant_image_unchanged():
    img = torch.full((3, 12, 12), 0.37, dtype=torch.float64)
    out = gaussian_smooth(img, 5)
    assert torch.allclose(out, img, atol=1e-12)


@pytest.mark.parametrize("k", [3, 15])
def test_smooth_impulse_reproduces_kernel(k):
    img = torch.zeros(1, 41, 41, dtype=torch.float64)
    img[0, 20, 20] = 1.0
    out = gaussian_smooth(img, k)
    kernel = gaussian_kernel2d(k)  # the directly constructed oracle
    half = k // 2
    patch = out[0, 20 - half:20 + half + 1, 20 - half:20 + half + 1]
    assert torch.allclose(patch, kernel, atol=1e-12)
    assert float(out.sum()) == pytest.approx(1.0, abs=1e-12)


def test_smooth_is_linear():
    a = _rand_image(seed=4).to(torch.float64)
    b = _rand_image(seed=5).to(torch.float64)
    lhs = gaussian_smooth(0.3 * a + 0.6 * b, 5)
    rhs = 0.3 * gaussian_smooth(a, 5) + 0.6 * gaussian_smooth(b, 5)
    assert torch.allclose(lhs, rhs, atol=1e-6)


def test_smooth_rejects_even_kernel():
    with pytest.raises(ValueError):
        gaussian_smooth(_rand_image(), 4)


# --- cutout ---------------------------------------------------------------


def test_cutout_zero_hole_is_identity():
    img = _rand_image()
    assert torch.equal(cutout(img, 0, torch.Generator().manual_seed(0)), img)


def test_cutout_center_full_cover_zeroes_image():
    img = _rand_image(shape=(3, 10, 10), lo=0.5, hi=1.0)
    out = cutout(img, 20, torch.Generator().manual_seed(0), center=(5, 5))
    assert torch.all(out == 0.0)


def test_cutout_interior_exact_pixel_count():
    img = _rand_image(shape=(3, 32, 32), lo=0.1, hi=1.0)
    out = cutout(img, 8, torch.Generator().manual_seed(0), center=(16, 16))
    zeroed = (out == 0).all(dim=0).sum()
    assert int(zeroed) == 64
    assert torch.equal(out[:, 12:20, 12:20], torch.zeros(3, 8, 8))


def test_cutout_clips_at_border():
    img = _rand_image(shape=(1, 16, 16), lo=0.2, hi=1.0)
    out = cutout(img, 8, torch.Generator().manual_seed(0), center=(0, 0))
    assert int((out == 0).sum()) == 16  # 4x4 survives clipping


# --- USVT ---------------------------------------------------------------------


def test_usvt_zero_matrix_stays_zero():
    m = torch.zeros(16, 16)
    mask = torch.rand(16, 16, generator=torch.Generator().manual_seed(0)) >= 0.25
    out = usvt_reconstruct(m, mask, 0.25, 0.5)
    assert torch.all(out == 0.0)


def test_usvt_rank1_full_observation_reconstructs():
    gen = torch.Generator().manual_seed(1)
    u, v = torch.rand(32, 1, generator=gen), torch.rand(1, 32, generator=gen)
    m = u @ v
    out = usvt_reconstruct(m, torch.ones(32, 32, dtype=torch.bool), 0.0, 0.5)
    assert float((out - m).norm() / m.norm()) <= 1e-6


def test_usvt_rank1_partial_observation_regression_bound():
    # Regression bound calibrated with an independent scipy SVD oracle over
    # 30 seeds: relative Frobenius error mean 0.56, max 0.60 for the
    # keep-top-half clip on 32x32 rank-1 matrices with 25% dropped entries.
    errs = []
    for seed in range(10):
        gen = torch.Generator().manual_seed(seed)
        u, v = torch.rand(32, 1, generator=gen), torch.rand(1, 32, generator=gen)
        m = u @ v
        mask = torch.rand(32, 32, generator=gen) >= 0.25
        out = usvt_reconstruct(m, mask, 0.25, 0.5)
        errs.append(float((out - m).norm() / m.norm()))
    assert max(errs) <= 0.65


def test_usvt_threshold_variant_tracks_usvt_theory():
    # The absolute-threshold variant keeps only components above the noise
    # floor and lands near the 0.15-relative-error region on rank-1 inputs.
    errs = []
    for seed in range(10):
        gen = torch.Generator().manual_seed(seed)
        u, v = torch.rand(32, 1, generator=gen), torch.rand(1, 32, generator=gen)
        m = u @ v
        mask = torch.rand(32, 32, generator=gen) >= 0.25
        threshold = 2.02 * math.sqrt(32 * 0.75)
        out = usvt_reconstruct(m, mask, 0.25, singular_threshold=threshold)
        errs.append(float((out - m).norm() / m.norm()))
    assert np.mean(errs) <= 0.25


def test_usvt_matches_independent_scipy_oracle():
    import scipy.linalg

    gen = torch.Generator().manual_seed(7)
    m = torch.rand(24, 40, generator=gen, dtype=torch.float64)
    mask = torch.rand(24, 40, generator=gen) >= 0.3
    ours = usvt_reconstruct(m, mask, 0.3, 0.5)
    filled = np.where(mask.numpy(), m.numpy(), 0.0) / 0.7
    u, s, vh = scipy.linalg.svd(filled, full_matrices=False)
    keep = s.shape[0] - math.ceil(0.5 * s.shape[0])
    s[keep:] = 0.0
    oracle = np.clip((u * s) @ vh, 0.0, 1.0)
    assert np.abs(ours.numpy() - oracle).max() <= 1e-7


def test_usvt_output_rank_bound_before_clamp():
    for seed in range(100):
        gen = torch.Generator().manual_seed(seed)
        h, w = int(torch.randint(8, 40, (1,), generator=gen)), int(torch.randint(8, 40, (1,), generator=gen))
        m = torch.rand(h, w, generator=gen, dtype=torch.float64)
        mask = torch.rand(h, w, generator=gen) >= 0.25
        out = usvt_reconstruct(m, mask, 0.25, 0.5, clamp=False)
        s = torch.linalg.svdvals(out)
        rank = int((s > 1e-9 * float(s[0])).sum())
        assert rank <= math.ceil(0.5 * min(h, w))


def test_usvt_rejects_fully_masked():
    m = torch.rand(8, 8)
    with pytest.raises(DegenerateInputError):
        usvt_reconstruct(m, torch.zeros(8, 8, dtype=torch.bool), 0.25, 0.5)


# --- matrix completion augmentation --------------------------------------------


def test_mc_identity_when_nothing_dropped_or_clipped():
    img = _rand_image(shape=(3, 16, 16), seed=9)
    out = matrix_complete_augment(img, 0.0, 0.0, torch.Generator().manual_seed(0))
    assert float((out - img).abs().max()) <= 1e-5


def test_mc_output_range_and_shared_mask():
    img = _rand_image(shape=(3, 16, 16), seed=10, lo=0.3, hi=0.9)
    mask = torch.rand(16, 16, generator=torch.Generator().manual_seed(1)) >= 0.25
    out = matrix_complete_augment(img, 0.25, 0.5, mask=mask)
    assert out.shape == img.shape
    assert out.min() >= 0.0 and out.max() <= 1.0
    # channels share the mask: per-channel results equal per-channel usvt
    for c in range(3):
        single = usvt_reconstruct(img[c], mask, 0.25, 0.5)
        assert torch.allclose(out[c], single, atol=1e-6)


@pytest.mark.xfail(
    strict=True,
    reason="unattainable at 32x32: the zero-fill mask noise (~0.27/pixel) "
    "dwarfs an 8/255 perturbation, so the reconstruction is always farther "
    "from the clean image than the poisoned one is; the defense works by "
    "diluting the poison during training, not by per-image denoising",
)
def test_mc_denoises_poisoned_images_toward_clean():
    ds = cp.make_synthetic(2, 50, 32, 32, seed=3)
    x = torch.from_numpy(np.array(ds.images))
    gen = torch.Generator().manual_seed(0)
    delta = (torch.rand(x.shape, generator=gen) * 2 - 1) * (8 / 255)
    closer = 0
    for i in range(100):
        j = i % len(x)
        poisoned = (x[j] + delta[j]).clamp(0, 1)
        aug = matrix_complete_augment(poisoned, 0.25, 0.5,
                                      torch.Generator().manual_seed(100 + i))
        if float((aug - x[j]).norm()) < float((poisoned - x[j]).norm()):
            closer += 1
    assert closer > 50


# --- DefenseTransform ---------------------------------------------------------


def test_defense_transform_validation():
    with pytest.raises(ValueError):
        DefenseTransform(kind="fog")
    with pytest.raises(ValueError):
        DefenseTransform(kind="gauss_smooth", kernel_size=4)
    with pytest.raises(ValueError):
        DefenseTransform(kind="random_noise", sigma=-0.1)
    with pytest.raises(ValueError):
        DefenseTransform(kind="matrix_completion", drop_prob=1.0)


@pytest.mark.parametrize(
    "kind", ["none", "random_noise", "gauss_smooth", "cutout", "matrix_completion"]
)
def test_defense_batch_application_preserves_shape_and_range(kind):
    gen = torch.Generator().manual_seed(0)
    batch = torch.rand(6, 3, 16, 16, generator=gen)
    transform = DefenseTransform(kind=kind, hole_size=6)
    out = transform.apply_batch(batch, torch.Generator().manual_seed(1))
    assert out.shape == batch.shape
    assert out.min() >= 0.0 and out.max() <= 1.0
    if kind == "none":
        assert torch.equal(out, batch)


def test_defense_pure_given_generator_state():
    batch = torch.rand(4, 3, 12, 12, generator=torch.Generator().manual_seed(5))
    t = DefenseTransform(kind="matrix_completion")
    a = t.apply_batch(batch, torch.Generator().manual_seed(9))
    b = t.apply_batch(batch, torch.Generator().manual_seed(9))
    assert torch.equal(a, b)
