"""Data-consistent wrappers and regularization machinery.

A wrapper turns a trained network ``U`` into a map that is exactly
consistent with the measured data: whatever ``U`` proposes is projected
back onto the set of elements producing the same data as the input.  For
pointwise saturation that projection is exact per cell; for the Radon
problem the proposal's null-space component is kept and the range
component of the input is restored; for the composed problem the two are
chained through alternating projections (POCS) in the sinogram domain.

Also here: Tikhonov reconstruction for the three operator kinds, the
a-priori parameter choice, the relaxed (increasingly data-consistent)
projection family, and the assembly ``R = Phi_alpha . G_alpha``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from dcreg.linalg import (
    IterationLimitError,
    LinearMap,
    cg_solve,
    l2_distance,
    l2_norm,
    spectral_norm,
)
from dcreg.operators import (
    ComposedOperator,
    RadonOperator,
    SaturationMap,
    SaturationOperator,
    kernel_project,
    normal_cone_project,
    pseudo_inverse_apply,
    range_project,
    saturation_apply,
)
from dcreg.rng import Rng


@dataclass(frozen=True)
class LipschitzMap:
    """A map bundled with an upper bound on its Lipschitz constant."""

    fn: Callable[[np.ndarray], np.ndarray]
    bound: float = float("inf")

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.fn(x)


def _call(u) -> Callable[[np.ndarray], np.ndarray]:
    # accept LipschitzMap or any bare callable
    return u.fn if isinstance(u, LipschitzMap) else u


# ---------------------------------------------------------------------------
# data-consistent wrappers
# ---------------------------------------------------------------------------


def dc_wrap_saturation(u, z: np.ndarray, m: SaturationMap) -> np.ndarray:
    """Pointwise data-consistent wrapper for the saturation operator.

    Returns ``z`` on cells still below the level and ``max(U(z), M)`` on
    saturated cells, so saturating the output reproduces ``min(z, M)``
    cell by cell.
    """
    z = np.asarray(z, dtype=np.float64)
    y = saturation_apply(z, m)
    return normal_cone_project(y, _call(u)(z), m)


def dc_wrap_nullspace(u, op, z: np.ndarray, tol: float | None = None) -> np.ndarray:
    """Null-space wrapper ``z + P_ker(U(z))`` for a linear operator."""
    z = np.asarray(z, dtype=np.float64)
    return z + kernel_project(op, _call(u)(z), tol=tol)


def pocs_intersect(
    radon: RadonOperator,
    z: np.ndarray,
    m: SaturationMap,
    tol: float = 1e-8,
    max_iter: int = 500,
    return_info: bool = False,
):
    """Alternating projections onto ``N_C(P_C(z))`` and ``range(F1)``.

    Starts from ``z`` itself and alternates the per-cell pre-image
    projection with the orthogonal range projection.  Stops once the
    per-sweep change is below ``tol * ||v||`` and one extra per-cell
    projection moves the iterate by no more than ``10 * tol * ||v||``,
    so the returned point lies in both sets up to a small multiple of
    the tolerance (it lies in the range exactly, being the image of the
    accumulated pre-image).  The sets always intersect for attainable
    data.

    With ``return_info`` the result is ``(v, info)`` where ``info`` holds
    the per-sweep change norms and the pre-image of the final range
    projection (so callers can reuse the pseudo-inverse solve).
    """
    z = np.asarray(z, dtype=np.float64)
    y = saturation_apply(z, m)
    v = z.copy()
    changes: list[float] = []
    preimage = None
    change = np.inf
    for _ in range(max_iter):
        v1 = normal_cone_project(y, v, m)
        scale = max(l2_norm(v), 1e-30)
        if preimage is not None and change <= tol * scale and l2_distance(v1, v) <= 10.0 * tol * scale:
            if return_info:
                return v, {"changes": changes, "preimage": preimage, "sweeps": len(changes)}
            return v
        if preimage is None:
            preimage = pseudo_inverse_apply(radon, v1)
        else:
            # v equals radon.apply(preimage) from the previous sweep, so
            # solving for the increment keeps the solver's relative
            # tolerance pinned to the shrinking per-sweep correction
            # instead of the full data norm.
            preimage = preimage + pseudo_inverse_apply(radon, v1 - v)
        v2 = radon.apply(preimage)
        change = l2_distance(v2, v)
        changes.append(change)
        v = v2
    d_cone = l2_distance(normal_cone_project(y, v, m), v)
    scale = max(l2_norm(v), 1e-30)
    if change <= tol * scale and d_cone <= 10.0 * tol * scale:
        if return_info:
            return v, {"changes": changes, "preimage": preimage, "sweeps": len(changes)}
        return v
    d_range = l2_distance(range_project(radon, v), v)
    raise IterationLimitError(
        f"pocs_intersect: {max_iter} sweeps, set distances {d_cone:.3e} (pre-image set) "
        f"and {d_range:.3e} (range)",
        residual=max(d_cone, d_range),
        iterations=max_iter,
    )


def dc_wrap_composed(
    u1,
    u2,
    radon: RadonOperator,
    m: SaturationMap,
    z: np.ndarray,
    pocs_tol: float = 1e-8,
    pocs_max_iter: int = 1000,
) -> np.ndarray:
    """Data-consistent wrapper for saturation-after-Radon.

    The input image's saturated sinogram is fixed as the data.  The
    sinogram network proposes values on saturated bins (pointwise
    wrapper), POCS pulls the proposal into the range of the Radon map
    without leaving the data's pre-image set, and the image network adds
    a null-space correction to the resulting reconstruction.
    """
    z = np.asarray(z, dtype=np.float64)
    s = saturation_apply(radon.apply(z), m)
    w = dc_wrap_saturation(u2, s, m)
    _, info = pocs_intersect(radon, w, m, tol=pocs_tol, max_iter=pocs_max_iter, return_info=True)
    x1 = info["preimage"]
    return dc_wrap_nullspace(u1, radon, x1)


# ---------------------------------------------------------------------------
# exact and relaxed data-consistency projections
# ---------------------------------------------------------------------------


def exact_consistency_project(op, z: np.ndarray, u: np.ndarray, **kw) -> np.ndarray:
    """Map a candidate ``u`` onto the set of elements with the same data as ``z``.

    Saturation: per-cell metric projection.  Linear maps: restore the row
    space component of ``z``.  Composed: blend the candidate's sinogram on
    saturated bins, POCS back into the range, keep the candidate's
    null-space part.
    """
    z = np.asarray(z, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if isinstance(op, SaturationOperator):
        return normal_cone_project(op.apply(z), u, op.m)
    if isinstance(op, ComposedOperator):
        s = op.apply(z)
        w = normal_cone_project(s, op.radon.apply(u), op.m)
        _, info = pocs_intersect(op.radon, w, op.m, return_info=True, **kw)
        return info["preimage"] + kernel_project(op.radon, u)
    # generic linear operator
    return u + pseudo_inverse_apply(op, op.apply(z) - op.apply(u))


def relaxed_project(
    z: np.ndarray,
    u: np.ndarray,
    radius: float,
    op,
    bisect_tol: float = 1e-8,
) -> np.ndarray:
    """Move ``u`` toward the data-consistent projection just far enough.

    Returns ``u + t* (P(u) - u)`` with the smallest ``t*`` in [0, 1] such
    that the image's data lies within ``radius`` of the data of ``z``
    (bisection on ``t``).  ``radius = 0`` recovers the exact projection.
    """
    z = np.asarray(z, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    fz = op.apply(z)
    if l2_distance(op.apply(u), fz) <= radius:
        return u.copy()
    p = exact_consistency_project(op, z, u)
    direction = p - u

    def misfit(t: float) -> float:
        return l2_distance(op.apply(u + t * direction), fz)

    if misfit(1.0) > radius:
        # even the exact projection sits at the solver floor; cannot do better
        return p
    lo, hi = 0.0, 1.0
    while hi - lo > bisect_tol:
        mid = 0.5 * (lo + hi)
        if misfit(mid) <= radius:
            hi = mid
        else:
            lo = mid
    return u + hi * direction


# ---------------------------------------------------------------------------
# Tikhonov
# ---------------------------------------------------------------------------


def tikhonov_reconstruct(
    op,
    y: np.ndarray,
    alpha: float,
    x0: np.ndarray | None = None,
    cg_tol: float = 1e-10,
    gd_tol: float = 1e-10,
    gd_max_iter: int = 10_000,
    gd_step: float | None = None,
) -> np.ndarray:
    """Minimize ``0.5 ||F(x) - y||^2 + 0.5 alpha ||x - x0||^2``.

    Linear operators: conjugate gradients on the shifted normal
    equations.  Saturation: subgradient descent with step ``1/(1+alpha)``
    (the clipped branch contributes slope 0 at the kink).  Composed:
    subgradient descent with step ``1/(sigma^2 + alpha)`` where ``sigma``
    estimates the Radon spectral norm, unless ``gd_step`` overrides it.
    """
    y = np.asarray(y, dtype=np.float64)
    if alpha < 0:
        raise ValueError("tikhonov_reconstruct: alpha must be >= 0")

    if isinstance(op, SaturationOperator):
        m = op.m.levels
        x0 = np.zeros_like(y) if x0 is None else np.asarray(x0, dtype=np.float64)
        x = y.copy()
        step = 1.0 / (1.0 + alpha)
        for _ in range(gd_max_iter):
            grad = np.where(x < m, np.minimum(x, m) - y, 0.0) + alpha * (x - x0)
            x_new = x - step * grad
            if l2_distance(x_new, x) <= gd_tol:
                return x_new
            x = x_new
        obj = 0.5 * l2_distance(np.minimum(x, m), y) ** 2 + 0.5 * alpha * l2_distance(x, x0) ** 2
        raise IterationLimitError(
            f"tikhonov_reconstruct: saturation descent hit {gd_max_iter} iterations, objective {obj:.6e}",
            residual=obj,
            iterations=gd_max_iter,
        )

    if isinstance(op, ComposedOperator):
        radon = op.radon
        m = op.m.levels
        x0 = np.zeros(op.domain_shape) if x0 is None else np.asarray(x0, dtype=np.float64)
        if gd_step is None:
            sigma = spectral_norm(radon.as_linear_map(), Rng(0xD15C0), tol=1e-8)
            gd_step = 1.0 / (sigma * sigma + alpha)
        x = pseudo_inverse_apply(radon, saturation_apply(y, op.m))
        for _ in range(gd_max_iter):
            s = radon.apply(x)
            resid = np.where(s < m, np.minimum(s, m) - y, 0.0)
            grad = radon.adjoint(resid) + alpha * (x - x0)
            x_new = x - gd_step * grad
            if l2_distance(x_new, x) <= gd_tol:
                return x_new
            x = x_new
        obj = 0.5 * l2_distance(op.apply(x), y) ** 2 + 0.5 * alpha * l2_distance(x, x0) ** 2
        raise IterationLimitError(
            f"tikhonov_reconstruct: composed descent hit {gd_max_iter} iterations, objective {obj:.6e}",
            residual=obj,
            iterations=gd_max_iter,
        )

    # generic linear operator
    lin = op.as_linear_map() if hasattr(op, "as_linear_map") else op
    if not isinstance(lin, LinearMap):
        raise TypeError(f"tikhonov_reconstruct: unsupported operator {type(op)!r}")
    n = lin.shape[1]
    x0_flat = np.zeros(n) if x0 is None else np.asarray(x0, dtype=np.float64).ravel()
    rhs = lin.rmatvec(y.ravel()) + alpha * x0_flat

    def normal_op(v: np.ndarray) -> np.ndarray:
        return lin.rmatvec(lin.matvec(v)) + alpha * v

    x = cg_solve(normal_op, rhs, tol=cg_tol)
    if hasattr(op, "domain_shape"):
        return x.reshape(op.domain_shape)
    return x


# ---------------------------------------------------------------------------
# parameter choice and regularization families
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ParameterChoice:
    """A-priori rule ``alpha(delta) = c * delta**p`` with 0 < p < 2.

    The exponent window keeps the choice admissible for Tikhonov:
    ``alpha -> 0`` and ``delta**2 / alpha -> 0`` as ``delta -> 0``.
    """

    c: float = 1.0
    p: float = 1.0

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError("ParameterChoice: c must be > 0")
        if not 0 < self.p < 2:
            raise ValueError("ParameterChoice: p must satisfy 0 < p < 2")


ALPHA_FLOOR = 1e-12


def parameter_choice(pc: ParameterChoice, delta: float) -> float:
    """Evaluate ``c * delta**p``, floored at a tiny positive value.

    Noiseless evaluation (``delta = 0``) still needs a positive alpha to
    keep every member of a regularizer family well defined.
    """
    if delta < 0:
        raise ValueError("parameter_choice: delta must be >= 0")
    return max(pc.c * delta**pc.p, ALPHA_FLOOR)


@dataclass(frozen=True)
class RegularizerFamily:
    """Alpha-indexed reconstruction family ``(alpha, y) -> x``."""

    tag: str
    fn: Callable[[float, np.ndarray], np.ndarray]

    def apply(self, alpha: float, y: np.ndarray) -> np.ndarray:
        return self.fn(alpha, y)


def tikhonov_family(op, x0: np.ndarray | None = None, **opts) -> RegularizerFamily:
    return RegularizerFamily(
        "tikhonov", lambda a, y: tikhonov_reconstruct(op, y, a, x0=x0, **opts)
    )


def pseudo_inverse_family(op, tol: float | None = None) -> RegularizerFamily:
    return RegularizerFamily(
        "pseudo-inverse", lambda a, y: pseudo_inverse_apply(op, y, tol=tol)
    )


def composed_right_inverse_family(radon: RadonOperator, m: SaturationMap, tol: float | None = None) -> RegularizerFamily:
    """Right inverse of saturation-after-Radon: identity then pseudo-inverse.

    Exact on data whose saturated sinogram already lies in the Radon
    range; used as the limiting method of network regularizations.
    """

    def fn(_a: float, y: np.ndarray) -> np.ndarray:
        return pseudo_inverse_apply(radon, saturation_apply(y, m), tol=tol)

    return RegularizerFamily("composed-right-inverse", fn)


def regularizing_network_apply(
    g: RegularizerFamily,
    phi: Callable[[float, np.ndarray], np.ndarray],
    pc: ParameterChoice,
    delta: float,
    y: np.ndarray,
) -> np.ndarray:
    """Apply ``Phi_alpha . G_alpha`` with ``alpha`` from the parameter choice."""
    alpha = parameter_choice(pc, delta)
    return phi(alpha, g.apply(alpha, y))
