"""Unit-sphere geometry: normalization, cosines, angles, and the cosine gradient."""

import math

import numpy as np
import pytest

from unpg_kit.errors import DimensionMismatchError, ZeroNormError
from unpg_kit.sphere import (
    ZERO_NORM_THRESHOLD,
    angle,
    cos_sim,
    cos_sim_grad,
    normalize,
    normalize_rows,
)


def fd_cos_grad(a, b, h=1e-6):
    """Central finite differences of cos_sim(normalize(a), normalize(b))."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)

    def value(x, y):
        return float(np.dot(x / np.linalg.norm(x), y / np.linalg.norm(y)))

    ga = np.zeros_like(a)
    gb = np.zeros_like(b)
    for i in range(a.shape[0]):
        ap = a.copy(); ap[i] += h
        am = a.copy(); am[i] -= h
        ga[i] = (value(ap, b) - value(am, b)) / (2 * h)
        bp = b.copy(); bp[i] += h
        bm = b.copy(); bm[i] -= h
        gb[i] = (value(a, bp) - value(a, bm)) / (2 * h)
    return ga, gb


class TestNormalize:
    def test_three_four_five(self):
        np.testing.assert_allclose(normalize([3.0, 4.0]), [0.6, 0.8], rtol=0, atol=1e-15)

    def test_axis_vector(self):
        v = np.zeros(6)
        v[-1] = 5.0
        out = normalize(v)
        expected = np.zeros(6)
        expected[-1] = 1.0
        np.testing.assert_array_equal(out, expected)

    def test_zero_norm_threshold(self):
        with pytest.raises(ZeroNormError):
            normalize([1e-13, 0.0])
        # just above the threshold still works
        out = normalize([2e-12, 0.0])
        np.testing.assert_allclose(np.linalg.norm(out), 1.0, atol=1e-12)

    def test_direction_preserved(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            v = rng.standard_normal(5) * rng.uniform(0.1, 100)
            u = normalize(v)
            np.testing.assert_allclose(u * np.linalg.norm(v), v, rtol=1e-12)

    def test_rejects_non_vector(self):
        with pytest.raises(DimensionMismatchError):
            normalize(np.ones((2, 2)))
        with pytest.raises(DimensionMismatchError):
            normalize([1.0])

    def test_normalize_rows_matches_normalize(self):
        rng = np.random.default_rng(3)
        mat = rng.standard_normal((7, 4))
        rows = normalize_rows(mat)
        for i in range(7):
            np.testing.assert_allclose(rows[i], normalize(mat[i]), rtol=0, atol=1e-15)


class TestCosSim:
    def test_identity(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            a = normalize(rng.standard_normal(8))
            assert abs(cos_sim(a, a) - 1.0) <= 1e-12

    def test_orthogonal_basis(self):
        e1 = np.array([1.0, 0.0])
        e2 = np.array([0.0, 1.0])
        assert cos_sim(e1, e2) == 0.0

    def test_45_degrees(self):
        a = np.array([1.0, 0.0])
        b = normalize([1.0, 1.0])
        np.testing.assert_allclose(cos_sim(a, b), math.sqrt(0.5), atol=1e-15)

    def test_symmetry_exact(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            a = normalize(rng.standard_normal(16))
            b = normalize(rng.standard_normal(16))
            assert cos_sim(a, b) == cos_sim(b, a)

    def test_range(self):
        rng = np.random.default_rng(9)
        for _ in range(200):
            a = normalize(rng.standard_normal(4))
            b = normalize(rng.standard_normal(4))
            assert -1.0 <= cos_sim(a, b) <= 1.0

    def test_scale_invariance(self):
        rng = np.random.default_rng(13)
        for _ in range(100):
            a = rng.standard_normal(6)
            b = rng.standard_normal(6)
            lam, mu = rng.uniform(1e-3, 1e3, size=2)
            base = cos_sim(normalize(a), normalize(b))
            scaled = cos_sim(normalize(lam * a), normalize(mu * b))
            assert abs(base - scaled) <= 1e-12

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            cos_sim(np.ones(3) / math.sqrt(3), np.ones(4) / 2.0)


class TestAngle:
    def test_same_vector(self):
        a = normalize([2.0, -1.0, 0.5])
        assert angle(a, a) == 0.0

    def test_antipodal(self):
        a = normalize([0.3, -0.4, 1.0])
        np.testing.assert_allclose(angle(a, -a), math.pi, atol=1e-12)

    def test_orthogonal(self):
        np.testing.assert_allclose(
            angle(np.array([1.0, 0.0]), np.array([0.0, 1.0])), math.pi / 2, atol=1e-15
        )

    def test_round_trip_with_cos(self):
        rng = np.random.default_rng(17)
        for _ in range(200):
            a = normalize(rng.standard_normal(5))
            b = normalize(rng.standard_normal(5))
            assert abs(math.cos(angle(a, b)) - cos_sim(a, b)) <= 1e-12


class TestCosSimGrad:
    def test_aligned_is_flat(self):
        a = normalize([1.0, 2.0, 3.0])
        ga, gb = cos_sim_grad(a, a)
        np.testing.assert_allclose(ga, 0.0, atol=1e-15)
        np.testing.assert_allclose(gb, 0.0, atol=1e-15)

    def test_basis_pair(self):
        """At a = e1, b = e2 the gradient w.r.t. a is e2 (verified by the
        finite-difference oracle)."""
        e1 = np.array([1.0, 0.0])
        e2 = np.array([0.0, 1.0])
        ga, gb = cos_sim_grad(e1, e2)
        np.testing.assert_allclose(ga, e2, atol=1e-12)
        np.testing.assert_allclose(gb, e1, atol=1e-12)
        fa, fb = fd_cos_grad(e1, e2)
        np.testing.assert_allclose(ga, fa, atol=1e-9)
        np.testing.assert_allclose(gb, fb, atol=1e-9)

    def test_random_8d_pair(self):
        rng = np.random.default_rng(23)
        a = rng.standard_normal(8)
        b = rng.standard_normal(8)
        ga, gb = cos_sim_grad(a, b)
        fa, fb = fd_cos_grad(a, b)
        scale = max(np.abs(np.concatenate([fa, fb])).max(), 1e-12)
        assert np.abs(ga - fa).max() / scale <= 1e-6
        assert np.abs(gb - fb).max() / scale <= 1e-6

    @pytest.mark.parametrize("dim", [2, 8, 64])
    def test_matches_finite_differences_in_bulk(self, dim):
        """1000 random pairs per dimension, relative error <= 1e-6."""
        rng = np.random.default_rng(100 + dim)
        worst = 0.0
        for _ in range(1000):
            a = rng.standard_normal(dim) * rng.uniform(0.5, 2.0)
            b = rng.standard_normal(dim) * rng.uniform(0.5, 2.0)
            ga, gb = cos_sim_grad(a, b)
            fa, fb = fd_cos_grad(a, b)
            scale = max(np.abs(np.concatenate([fa, fb])).max(), 1e-9)
            err = max(np.abs(ga - fa).max(), np.abs(gb - fb).max()) / scale
            worst = max(worst, err)
        assert worst <= 1e-6

    def test_zero_norm_rejected(self):
        with pytest.raises(ZeroNormError):
            cos_sim_grad(np.zeros(3), np.ones(3))

    def test_threshold_constant(self):
        assert ZERO_NORM_THRESHOLD == 1e-12
