"""Oracle-backed checks for the vector primitives and iterative solvers.

Oracles used here are independent of the implementations under test:
``math.fsum`` in extended precision for norms, dense normal-equation /
long-double pseudo-inverse solves for LSQR, and a long-double many-step
power method for the spectral norm.
"""

import math

import numpy as np
import pytest

from dcreg.linalg import (
    DimensionMismatchError,
    IterationLimitError,
    LinearMap,
    cg_solve,
    l2_distance,
    lsqr_solve,
    spectral_norm,
)
from dcreg.rng import Rng


def fsum_l2(a, b):
    """Extended-precision summation oracle for the euclidean distance."""
    return math.sqrt(math.fsum((float(x) - float(y)) ** 2 for x, y in zip(a.ravel(), b.ravel())))


def dense_pinv_solve(a, b):
    """Minimum-norm least squares via long-double dense normal equations."""
    al = a.astype(np.longdouble)
    bl = b.astype(np.longdouble)
    # x = A^T (A A^T)^+ b gives the minimum-norm solution for any A
    gram = al @ al.T
    w, v = np.linalg.eigh(gram.astype(np.float64))
    keep = w > w.max() * 1e-12
    ginv = (v[:, keep] / w[keep]) @ v[:, keep].T
    return (al.T @ (ginv.astype(np.longdouble) @ bl)).astype(np.float64)


def power_method_sigma(a, iters=20_000):
    """Long-double power iteration on A^T A, far past convergence."""
    al = a.astype(np.longdouble)
    v = np.ones(a.shape[1], dtype=np.longdouble)
    for _ in range(iters):
        w = al.T @ (al @ v)
        nw = np.sqrt((w * w).sum())
        if nw == 0:
            return 0.0
        v = w / nw
    return float(np.sqrt((al @ v) @ (al @ v) / (v @ v)))


class TestL2Distance:
    def test_matches_fsum_oracle(self):
        rng = Rng(101)
        for n in (1, 3, 100, 100_000):
            a = rng.gaussian_vector(n)
            b = rng.gaussian_vector(n)
            got = l2_distance(a, b)
            want = fsum_l2(a, b)
            assert got == pytest.approx(want, rel=1e-12)

    def test_zero_on_equal(self):
        a = Rng(5).gaussian_vector(64)
        assert l2_distance(a, a) == 0.0

    def test_shape_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            l2_distance(np.zeros(3), np.zeros(4))

    def test_triangle_inequality(self):
        rng = Rng(17)
        for _ in range(50):
            a = rng.gaussian_vector(32)
            b = rng.gaussian_vector(32)
            c = rng.gaussian_vector(32)
            assert l2_distance(a, c) <= l2_distance(a, b) + l2_distance(b, c) + 1e-12


class TestLsqr:
    def test_minimum_norm_solution_underdetermined(self):
        """6x10 system: LSQR from zero must match the dense pseudo-inverse."""
        rng = Rng(21)
        a = rng.gaussian_vector(60).reshape(6, 10)
        b = rng.gaussian_vector(6)
        x = lsqr_solve(LinearMap.from_dense(a), b, tol=1e-12)
        want = dense_pinv_solve(a, b)
        np.testing.assert_allclose(x, want, atol=1e-9)

    def test_overdetermined_least_squares(self):
        rng = Rng(22)
        a = rng.gaussian_vector(80).reshape(10, 8)
        b = rng.gaussian_vector(10)
        x = lsqr_solve(LinearMap.from_dense(a), b, tol=1e-12)
        want = dense_pinv_solve(a, b)
        np.testing.assert_allclose(x, want, atol=1e-9)

    def test_stopping_contract(self):
        rng = Rng(23)
        for trial in range(20):
            m, n = 7 + trial % 5, 9 + trial % 7
            a = rng.gaussian_vector(m * n).reshape(m, n)
            b = rng.gaussian_vector(m)
            lin = LinearMap.from_dense(a)
            x = lsqr_solve(lin, b, tol=1e-8)
            res = np.linalg.norm(a.T @ (a @ x - b))
            assert res <= 1e-8 * np.linalg.norm(a.T @ b)

    def test_row_space_confinement(self):
        """No component outside the row space: x = A^T something."""
        rng = Rng(24)
        a = rng.gaussian_vector(40).reshape(4, 10)
        b = rng.gaussian_vector(4)
        x = lsqr_solve(LinearMap.from_dense(a), b, tol=1e-12)
        # project x onto the orthogonal complement of the row space
        q, _ = np.linalg.qr(a.T)
        perp = x - q @ (q.T @ x)
        assert np.linalg.norm(perp) <= 1e-10 * max(np.linalg.norm(x), 1.0)

    def test_zero_rhs(self):
        a = Rng(1).gaussian_vector(12).reshape(3, 4)
        x = lsqr_solve(LinearMap.from_dense(a), np.zeros(3))
        np.testing.assert_array_equal(x, np.zeros(4))

    def test_rhs_orthogonal_to_range(self):
        # A maps onto span{e1}; rhs along e2 has zero as its LS solution
        a = np.array([[1.0, 2.0], [0.0, 0.0]])
        x = lsqr_solve(LinearMap.from_dense(a), np.array([0.0, 3.0]))
        np.testing.assert_array_equal(x, np.zeros(2))

    def test_iteration_limit_error(self):
        rng = Rng(25)
        a = rng.gaussian_vector(400).reshape(20, 20)
        a = a @ a.T + 1e-12 * np.eye(20)  # ill-conditioned
        b = rng.gaussian_vector(20)
        with pytest.raises(IterationLimitError) as exc:
            lsqr_solve(LinearMap.from_dense(a), b, tol=1e-14, max_iter=3)
        assert exc.value.residual > 0
        assert exc.value.iterations == 3

    def test_dimension_error(self):
        a = LinearMap.from_dense(np.eye(3))
        with pytest.raises(DimensionMismatchError):
            lsqr_solve(a, np.zeros(4))


class TestCg:
    def test_spd_solve(self):
        rng = Rng(31)
        b_mat = rng.gaussian_vector(64).reshape(8, 8)
        spd = b_mat @ b_mat.T + np.eye(8)
        rhs = rng.gaussian_vector(8)
        x = cg_solve(lambda v: spd @ v, rhs, tol=1e-12)
        np.testing.assert_allclose(spd @ x, rhs, atol=1e-10)

    def test_zero_rhs(self):
        x = cg_solve(lambda v: v, np.zeros(5))
        np.testing.assert_array_equal(x, np.zeros(5))


class TestSpectralNorm:
    def test_diagonal_case(self):
        a = LinearMap.from_dense(np.diag([3.0, 1.0]))
        got = spectral_norm(a, Rng(3), tol=1e-12)
        assert got == pytest.approx(3.0, abs=1e-10)

    def test_matches_longdouble_power_oracle(self):
        rng = Rng(33)
        a = rng.gaussian_vector(6 * 9).reshape(6, 9)
        got = spectral_norm(LinearMap.from_dense(a), Rng(4), tol=1e-13)
        want = power_method_sigma(a)
        assert got == pytest.approx(want, rel=1e-8)

    def test_lower_bound_and_monotone(self):
        rng = Rng(34)
        a = rng.gaussian_vector(49).reshape(7, 7)
        lin = LinearMap.from_dense(a)
        sigma = power_method_sigma(a)
        prev = 0.0
        for iters in (1, 2, 4, 8, 16, 64):
            est = spectral_norm(lin, Rng(77), tol=0.0, max_iter=iters)
            assert est <= sigma * (1 + 1e-12)
            assert est >= prev - 1e-12 * max(est, 1.0)
            prev = est


class TestLinearMap:
    def test_adjoint_consistency(self):
        """<Ax, y> == <x, A^T y> for the dense constructor."""
        rng = Rng(41)
        a = rng.gaussian_vector(35).reshape(5, 7)
        lin = LinearMap.from_dense(a)
        for _ in range(10):
            x = rng.gaussian_vector(7)
            y = rng.gaussian_vector(5)
            assert float(lin(x) @ y) == pytest.approx(float(x @ lin.adjoint(y)), rel=1e-12)

    def test_transpose_swaps(self):
        a = Rng(1).gaussian_vector(12).reshape(3, 4)
        lin = LinearMap.from_dense(a)
        x = Rng(2).gaussian_vector(3)
        np.testing.assert_array_equal(lin.T(x), lin.adjoint(x))
