"""Vector-space primitives and iterative solvers.

Everything operates on flat float64 vectors.  Operators are passed around
as :class:`LinearMap` (a matvec/rmatvec pair with explicit dimensions) so
dense arrays, sparse matrices and matrix-free maps share one interface.

The least-squares solver is Golub-Kahan bidiagonalization (LSQR).  It
starts at zero, which confines every iterate to the row space of ``A``:
the returned solution is the minimum-norm one.  The stopping rule is the
relative normal-equation residual ``||A^T(Ax - b)|| / ||A^T b||``; the
cheap recurrence estimate triggers an exact recomputation before the
routine is allowed to return, so the postcondition is checked, not
assumed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


class DimensionMismatchError(ValueError):
    """Operands do not live on the same grid or vector space."""


class IterationLimitError(RuntimeError):
    """An iterative solve hit its iteration cap before reaching tolerance.

    Attributes
    ----------
    residual : float
        The relative residual (solver-specific measure) at the last
        iterate.
    iterations : int
        Number of iterations performed.
    """

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


def l2_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Euclidean distance between two equally shaped arrays."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatchError(
            f"l2_distance: shapes {a.shape} and {b.shape} differ"
        )
    return float(np.linalg.norm(a.ravel() - b.ravel()))


def l2_norm(a: np.ndarray) -> float:
    return float(np.linalg.norm(np.asarray(a, dtype=np.float64).ravel()))


@dataclass(frozen=True)
class LinearMap:
    """A linear operator given by forward and adjoint actions.

    Parameters
    ----------
    shape : tuple
        (output_dim, input_dim).
    matvec, rmatvec : callable
        Forward action on input_dim vectors and adjoint action on
        output_dim vectors.  Both must be genuinely adjoint to each other;
        solvers here rely on it.
    """

    shape: tuple[int, int]
    matvec: Callable[[np.ndarray], np.ndarray]
    rmatvec: Callable[[np.ndarray], np.ndarray]

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64).ravel()
        if x.size != self.shape[1]:
            raise DimensionMismatchError(
                f"LinearMap: input length {x.size}, expected {self.shape[1]}"
            )
        return self.matvec(x)

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64).ravel()
        if y.size != self.shape[0]:
            raise DimensionMismatchError(
                f"LinearMap adjoint: input length {y.size}, expected {self.shape[0]}"
            )
        return self.rmatvec(y)

    @property
    def T(self) -> "LinearMap":
        return LinearMap((self.shape[1], self.shape[0]), self.rmatvec, self.matvec)

    @staticmethod
    def from_dense(a: np.ndarray) -> "LinearMap":
        a = np.asarray(a, dtype=np.float64)
        return LinearMap(a.shape, lambda x: a @ x, lambda y: a.T @ y)

    @staticmethod
    def identity(n: int) -> "LinearMap":
        return LinearMap((n, n), lambda x: x.copy(), lambda y: y.copy())


def lsqr_solve(
    a: LinearMap,
    b: np.ndarray,
    tol: float = 1e-8,
    max_iter: int | None = None,
) -> np.ndarray:
    """Minimum-norm least-squares solution of ``a x = b``.

    Runs LSQR from the zero vector.  Returns ``x`` with
    ``||A^T(Ax - b)|| <= tol * ||A^T b||`` (verified explicitly) and no
    component outside the row space of ``A``.

    Raises
    ------
    IterationLimitError
        If the verified tolerance is not reached within ``max_iter``
        iterations (default ``10 * max(shape)``).
    """
    m, n = a.shape
    b = np.asarray(b, dtype=np.float64).ravel()
    if b.size != m:
        raise DimensionMismatchError(f"lsqr_solve: rhs length {b.size}, expected {m}")
    if max_iter is None:
        max_iter = 10 * max(m, n)

    x = np.zeros(n)
    beta = l2_norm(b)
    if beta == 0.0:
        return x
    u = b / beta
    v = a.rmatvec(u)
    alpha = l2_norm(v)
    norm_atb = alpha * beta  # ||A^T b|| since x0 = 0
    if norm_atb == 0.0:
        # b is orthogonal to the range; zero is the exact solution
        return x
    v = v / alpha
    w = v.copy()
    phibar = beta
    rhobar = alpha

    def verified(xk: np.ndarray) -> float:
        return l2_norm(a.rmatvec(a.matvec(xk) - b)) / norm_atb

    last_rel = np.inf
    for it in range(1, max_iter + 1):
        u = a.matvec(v) - alpha * u
        beta = l2_norm(u)
        if beta > 0.0:
            u = u / beta
            v = a.rmatvec(u) - beta * v
            alpha = l2_norm(v)
            if alpha > 0.0:
                v = v / alpha
        rho = np.hypot(rhobar, beta)
        c = rhobar / rho
        s = beta / rho
        theta = s * alpha
        rhobar = -c * alpha
        phi = c * phibar
        phibar = s * phibar
        x += (phi / rho) * w
        w = v - (theta / rho) * w

        # cheap recurrence estimate of ||A^T r|| / ||A^T b||
        est = phibar * alpha * abs(c) / norm_atb
        if est <= tol or beta == 0.0 or alpha == 0.0:
            last_rel = verified(x)
            if last_rel <= tol:
                return x
            if beta == 0.0 or alpha == 0.0:
                # Krylov space exhausted; exact in theory, accept best
                return x
    last_rel = verified(x)
    if last_rel <= tol:
        return x
    raise IterationLimitError(
        f"lsqr_solve: {max_iter} iterations, relative normal residual {last_rel:.3e} > {tol:.1e}",
        residual=last_rel,
        iterations=max_iter,
    )


def cg_solve(
    apply_op: Callable[[np.ndarray], np.ndarray],
    rhs: np.ndarray,
    tol: float = 1e-10,
    max_iter: int | None = None,
) -> np.ndarray:
    """Conjugate gradients for a symmetric positive definite operator.

    Stops when ``||op(x) - rhs|| <= tol * ||rhs||``; the residual is
    recomputed from scratch periodically so rounding drift cannot fake
    convergence.
    """
    rhs = np.asarray(rhs, dtype=np.float64).ravel()
    n = rhs.size
    if max_iter is None:
        max_iter = 20 * n
    norm_rhs = l2_norm(rhs)
    x = np.zeros(n)
    if norm_rhs == 0.0:
        return x
    r = rhs.copy()
    p = r.copy()
    rs = float(r @ r)
    for it in range(1, max_iter + 1):
        ap = apply_op(p)
        denom = float(p @ ap)
        if denom <= 0.0:
            break  # operator not SPD on this subspace; return best iterate
        alpha = rs / denom
        x += alpha * p
        if it % 50 == 0:
            r = rhs - apply_op(x)
        else:
            r -= alpha * ap
        rs_new = float(r @ r)
        if np.sqrt(rs_new) <= tol * norm_rhs:
            true_res = l2_norm(apply_op(x) - rhs)
            if true_res <= tol * norm_rhs:
                return x
            r = rhs - apply_op(x)  # drift: restart from the exact residual
            rs = float(r @ r)
            p = r.copy()
            continue
        p = r + (rs_new / rs) * p
        rs = rs_new
    true_res = l2_norm(apply_op(x) - rhs) / norm_rhs
    if true_res <= tol:
        return x
    raise IterationLimitError(
        f"cg_solve: {max_iter} iterations, relative residual {true_res:.3e} > {tol:.1e}",
        residual=float(true_res),
        iterations=max_iter,
    )


def spectral_norm(
    a: LinearMap,
    rng,
    tol: float = 1e-10,
    max_iter: int = 5000,
) -> float:
    """Largest singular value estimate by power iteration on ``A^T A``.

    The returned value is a lower bound on the true norm and is
    non-decreasing in the iteration count; iteration stops once the
    estimate is stationary to ``tol`` (relative).
    """
    m, n = a.shape
    v = rng.gaussian_vector(n)
    nv = l2_norm(v)
    if nv == 0.0:  # astronomically unlikely; keep deterministic anyway
        v = np.ones(n)
        nv = l2_norm(v)
    v /= nv
    est = 0.0
    for _ in range(max_iter):
        av = a.matvec(v)
        new_est = l2_norm(av)
        if new_est == 0.0:
            return 0.0
        w = a.rmatvec(av)
        nw = l2_norm(w)
        if nw == 0.0:
            return new_est
        v = w / nw
        if abs(new_est - est) <= tol * max(new_est, 1e-300):
            return new_est
        est = new_est
    return est
