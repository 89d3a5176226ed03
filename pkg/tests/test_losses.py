import math

import numpy as np
import pytest
import torch

from clpoison.errors import NumericalDomainError
from clpoison.frameworks.losses import byol_loss, info_nce_loss, moco_infonce_loss


def brute_force_nt_xent(a, b, tau):
    """Independent oracle: explicit loops over anchors and candidates."""
    z = np.concatenate([a, b], axis=0).astype(np.float64)
    z = z / np.linalg.norm(z, axis=1, keepdims=True)
    n = len(z)
    total = 0.0
    for i in range(n):
        pos = i + n // 2 if i < n // 2 else i - n // 2
        sims = [float(z[i] @ z[j]) / tau for j in range(n) if j != i]
        pos_sim = float(z[i] @ z[pos]) / tau
        total += -(pos_sim - math.log(sum(math.exp(s) for s in sims)))
    return total / n


# Hand instances with expected values frozen from the oracle above.
A2 = np.array([[1.0, 0.0], [0.0, 1.0]])
B2 = np.array([[1.0, 1.0], [-1.0, 1.0]])
A3 = np.array([[1.0, 0.2, -0.3], [0.5, -1.0, 0.4], [0.1, 0.8, 0.9]])
B3 = np.array([[0.9, 0.1, -0.2], [0.4, -0.8, 0.6], [-0.2, 0.7, 1.0]])
A4 = np.array([[2.0, 0.0], [0.0, 3.0], [-1.0, 1.0], [0.5, -0.5]])
B4 = np.array([[1.5, 0.5], [0.2, 2.0], [-0.8, 0.6], [1.0, -1.0]])

ORACLE_CASES = [
    (A2, B2, 0.5, 0.5359693517993647),
    (A3, B3, 0.2, 0.033323531638733694),
    (A4, B4, 1.0, 1.2077726618473177),
]


@pytest.mark.parametrize("a,b,tau,frozen", ORACLE_CASES)
def test_info_nce_matches_brute_force(a, b, tau, frozen):
    loss = info_nce_loss(torch.tensor(a), torch.tensor(b), tau)
    assert abs(float(loss) - frozen) < 1e-6
    assert abs(brute_force_nt_xent(a, b, tau) - frozen) < 1e-12


def test_info_nce_all_identical_is_ln3():
    z = torch.ones(2, 4, dtype=torch.float64)
    loss = info_nce_loss(z, z.clone(), temperature=0.7)
    assert abs(float(loss) - math.log(3.0)) < 1e-12


def test_info_nce_scale_invariant():
    a, b = torch.tensor(A3), torch.tensor(B3)
    base = info_nce_loss(a, b, 0.4)
    scaled = info_nce_loss(3.7 * a, 3.7 * b, 0.4)
    assert abs(float(base) - float(scaled)) < 1e-12


def test_info_nce_permutation_invariant():
    a, b = torch.tensor(A4), torch.tensor(B4)
    perm = torch.tensor([2, 0, 3, 1])
    base = info_nce_loss(a, b, 0.6)
    permuted = info_nce_loss(a[perm], b[perm], 0.6)
    assert abs(float(base) - float(permuted)) < 1e-12


def test_info_nce_rejects_zero_norm():
    a = torch.tensor([[1.0, 0.0], [0.0, 0.0]])
    with pytest.raises(NumericalDomainError):
        info_nce_loss(a, a.clone(), 0.5)


def test_info_nce_rejects_bad_args():
    a = torch.ones(2, 3)
    with pytest.raises(ValueError):
        info_nce_loss(a, a, temperature=0.0)
    with pytest.raises(ValueError):
        info_nce_loss(a, torch.ones(3, 3), 0.5)
    with pytest.raises(ValueError):
        info_nce_loss(torch.ones(1, 3), torch.ones(1, 3), 0.5)


def test_info_nce_gradient_matches_finite_differences():
    gen = torch.Generator().manual_seed(2)
    a = torch.randn(4, 8, generator=gen, dtype=torch.float64, requires_grad=True)
    b = torch.randn(4, 8, generator=gen, dtype=torch.float64, requires_grad=True)
    loss = info_nce_loss(a, b, 0.5)
    ga, gb = torch.autograd.grad(loss, (a, b))
    h = 1e-6
    rng = np.random.default_rng(0)
    for tensor, grad in ((a, ga), (b, gb)):
        flat = tensor.detach().clone().flatten()
        for idx in rng.choice(flat.numel(), size=6, replace=False):
            e = torch.zeros_like(flat)
            e[idx] = h
            shaped = e.reshape(tensor.shape)
            with torch.no_grad():
                if tensor is a:
                    lp = info_nce_loss(a + shaped, b, 0.5)
                    lm = info_nce_loss(a - shaped, b, 0.5)
                else:
                    lp = info_nce_loss(a, b + shaped, 0.5)
                    lm = info_nce_loss(a, b - shaped, 0.5)
            fd = float((lp - lm) / (2 * h))
            an = float(grad.flatten()[idx])
            assert abs(fd - an) <= 1e-4 * max(abs(fd), abs(an), 1e-8)


def test_byol_loss_fixed_points_exact():
    p = torch.tensor([[1.0, 0.0], [0.0, 1.0]], dtype=torch.float64)
    assert float(byol_loss(p, p.clone())) == 0.0
    assert float(byol_loss(p, -p)) == 4.0
    q = torch.tensor([[0.0, 1.0], [1.0, 0.0]], dtype=torch.float64)
    assert float(byol_loss(p, q)) == 2.0


def test_byol_loss_range_and_errors():
    gen = torch.Generator().manual_seed(0)
    p = torch.randn(8, 5, generator=gen)
    z = torch.randn(8, 5, generator=gen)
    val = float(byol_loss(p, z))
    assert 0.0 <= val <= 4.0
    with pytest.raises(NumericalDomainError):
        byol_loss(torch.zeros(2, 3), torch.ones(2, 3))
    with pytest.raises(ValueError):
        byol_loss(torch.ones(2, 3), torch.ones(2, 4))


def brute_force_queue_infonce(q, k, negs, tau):
    qn = q / np.linalg.norm(q, axis=1, keepdims=True)
    kn = k / np.linalg.norm(k, axis=1, keepdims=True)
    total = 0.0
    for i in range(len(qn)):
        logits = [float(qn[i] @ kn[i]) / tau] + [float(qn[i] @ n) / tau for n in negs]
        total += -(logits[0] - math.log(sum(math.exp(s) for s in logits)))
    return total / len(qn)


def test_moco_infonce_matches_brute_force():
    q = np.array([[1.0, 0.5], [-0.3, 0.8]])
    k = np.array([[0.9, 0.6], [-0.2, 1.0]])
    negs = np.array([[1.0, 0.0], [0.0, 1.0], [-math.sqrt(0.5), math.sqrt(0.5)]])
    frozen = 0.7093056196968832
    loss = moco_infonce_loss(torch.tensor(q), torch.tensor(k), torch.tensor(negs), 0.2)
    assert abs(float(loss) - frozen) < 1e-9
    assert abs(brute_force_queue_infonce(q, k, negs, 0.2) - frozen) < 1e-12
