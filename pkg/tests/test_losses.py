import math

import numpy as np
import pytest

from oracles import wmse_step_by_step
from pidssl.autodiff import Tensor
from pidssl.losses import (
    LossParams,
    barlow_from_correlation,
    barlow_loss,
    byol_loss,
    cross_correlation,
    nt_xent,
    pseudo_label_ce,
    total_loss,
    wmse_loss,
)
from pidssl.numerics import grad_check

rng = np.random.default_rng(0)
A = rng.standard_normal((8, 4))
B = rng.standard_normal((8, 4))


class TestNTXent:
    def test_identical_views(self):
        z = np.ones((2, 3))
        assert nt_xent(z, z).item() == pytest.approx(math.log(3), abs=1e-12)

    def test_perfect_separation(self):
        z = np.array([[1.0, 0.0], [-1.0, 0.0]])
        assert nt_xent(z, z, 0.1).item() < 1e-8

    def test_permutation(self):
        perm = rng.permutation(8)
        assert nt_xent(A[perm], B[perm]).item() == pytest.approx(nt_xent(A, B).item(), abs=1e-12)

    def test_needs_two(self):
        with pytest.raises(ValueError):
            nt_xent(np.ones((1, 3)), np.ones((1, 3)))

    def test_mismatched_views(self):
        with pytest.raises(ValueError):
            nt_xent(np.ones((4, 3)), np.ones((4, 2)))


class TestBYOL:
    def test_aligned(self):
        assert byol_loss(A, A, B, B).item() == pytest.approx(0.0, abs=1e-12)

    def test_orthogonal(self):
        e1 = np.tile([1.0, 0.0], (4, 1))
        e2 = np.tile([0.0, 3.0], (4, 1))
        assert byol_loss(e1, e2, e2, e1).item() == pytest.approx(4.0, abs=1e-12)

    def test_anti_aligned(self):
        assert byol_loss(A, -A, B, -B).item() == pytest.approx(8.0, abs=1e-12)

    def test_no_gradient_into_targets(self):
        p = Tensor(A, requires_grad=True)
        t = Tensor(B, requires_grad=True)
        byol_loss(p, t, p, t).backward()
        assert t.grad is None or not np.any(t.grad)
        assert np.any(p.grad)


class TestWMSE:
    def test_identical(self):
        z = rng.standard_normal((16, 4))
        assert wmse_loss(z, z).item() == pytest.approx(0.0, abs=1e-12)

    def test_anti_aligned(self):
        z = rng.standard_normal((16, 4))
        assert wmse_loss(z, -z).item() == pytest.approx(4.0, abs=1e-9)

    def test_against_step_by_step_oracle(self):
        for seed in range(5):
            r = np.random.default_rng(100 + seed)
            z1, z2 = r.standard_normal((16, 4)), r.standard_normal((16, 4))
            assert wmse_loss(z1, z2, 1e-6).item() == pytest.approx(wmse_step_by_step(z1, z2, 1e-6), abs=1e-9)

    def test_batch_too_small(self):
        with pytest.raises(ValueError):
            wmse_loss(np.ones((4, 4)), np.ones((4, 4)))


class TestBarlow:
    def test_off_diagonal_only(self):
        c = np.array([[1.0, 0.5], [0.5, 1.0]])
        assert barlow_from_correlation(c, 5e-3).item() == pytest.approx(0.0025, abs=1e-15)

    def test_diagonal_only(self):
        c = np.array([[0.5, 0.0], [0.0, 0.5]])
        assert barlow_from_correlation(c, 5e-3).item() == pytest.approx(0.5, abs=1e-15)

    def test_identity_correlation_is_zero(self):
        # orthogonal +-1 columns: standardized cross-correlation is exactly I
        z = np.array([[1, 1, 1, 1], [1, -1, 1, -1], [1, 1, -1, -1], [1, -1, -1, 1]], float).T[:, 1:]
        np.testing.assert_allclose(cross_correlation(z, z).data, np.eye(3), atol=1e-12)
        assert barlow_loss(z, z).item() == pytest.approx(0.0, abs=1e-9)

    def test_self_case_penalizes_off_diagonal(self):
        c = cross_correlation(A, A).data
        off = c - np.diag(np.diag(c))
        assert barlow_loss(A, A, 0.01).item() == pytest.approx(0.01 * (off**2).sum() + ((1 - np.diag(c)) ** 2).sum(), abs=1e-12)

    def test_constant_column_is_finite(self):
        z = A.copy()
        z[:, 0] = 3.0
        assert np.isfinite(barlow_loss(z, B).item())


class TestPseudoLabelCE:
    def test_uniform(self):
        assert pseudo_label_ce(np.zeros((3, 10)), [0, 4, 9]).item() == pytest.approx(math.log(10), abs=1e-12)

    def test_saturated(self):
        logits = np.zeros((2, 5))
        logits[0, 1] = logits[1, 3] = 40.0
        assert pseudo_label_ce(logits, [1, 3]).item() < 1e-9

    def test_two_class(self):
        assert pseudo_label_ce(np.array([[1.0, 0.0]]), [0]).item() == pytest.approx(0.3133, abs=5e-5)

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            pseudo_label_ce(np.zeros((2, 3)), [0, 3])


class TestTotal:
    def test_arithmetic(self):
        assert total_loss(0.5, 0.3, 0.1, 0.1) == pytest.approx(0.54, abs=1e-15)

    def test_alpha_zero_is_ssl(self):
        assert total_loss(0.7, 5.0, 3.0, 0.0) == 0.7

    def test_zero_pseudo_terms(self):
        assert total_loss(0.7, 0.0, 0.0, 0.1) == 0.7

    def test_negative_alpha(self):
        with pytest.raises(ValueError):
            total_loss(1.0, 1.0, 1.0, -0.1)


def test_loss_params_validation():
    with pytest.raises(ValueError):
        LossParams(loss_kind="simclr")
    with pytest.raises(ValueError):
        LossParams(temperature=0.0)


GRADIENT_CASES = {
    "nt_xent": lambda t: nt_xent(t, B, 0.5),
    "byol": lambda t: byol_loss(t, B, t * 0.5 + 1.0, B[::-1].copy()),
    "wmse": lambda t: wmse_loss(t, B),
    "barlow": lambda t: barlow_loss(t, B, 5e-3),
    "pseudo_ce": lambda t: pseudo_label_ce(t, [0, 1, 2, 3, 3, 2, 1, 0]),
    "total": lambda t: total_loss(
        barlow_loss(t, B), pseudo_label_ce(t, [0, 1, 2, 3] * 2), pseudo_label_ce(t * 2.0, [3, 2, 1, 0] * 2), 0.1
    ),
}


@pytest.mark.parametrize("name", list(GRADIENT_CASES))
def test_gradients(name):
    assert grad_check(GRADIENT_CASES[name], A) < 1e-5
