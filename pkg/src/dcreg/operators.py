"""Forward operators: pointwise saturation, sparse-view Radon, and their
composition, plus the projector family derived from the Radon map.

Saturation clips a grid against a spatially varying level map and is its
own physics: data below the level pass through untouched, data at the
level hide everything above it.  The set of pre-images of a feasible
``y`` factors per cell into a point (unsaturated cell) or a half-line
(saturated cell); ``normal_cone_project`` is the exact metric projection
onto that set.

The Radon operator is a sparse matrix over a square pixel grid.  Each row
is one parallel-beam ray with exact ray/pixel intersection lengths
(Siddon traversal), measured in pixel units, so a row sums to the chord
length of that ray through the image square.  Angles are ``k*pi/n_angles``
with the endpoint excluded; the detector has ``ceil(1.5*n_x)`` bins with
bin pitch equal to the pixel pitch, centered on the grid.

The pseudo-inverse is realized iteratively (LSQR from zero) rather than
through an explicit factorization; kernel and range projectors reuse it.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from dcreg.linalg import DimensionMismatchError, LinearMap, lsqr_solve

# ---------------------------------------------------------------------------
# saturation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SaturationMap:
    """Per-cell saturation levels (non-negative, finite)."""

    levels: np.ndarray

    def __post_init__(self):
        lv = np.asarray(self.levels, dtype=np.float64)
        if lv.ndim != 2:
            raise DimensionMismatchError(f"levels must be 2-d, got {lv.shape}")
        if not np.all(np.isfinite(lv)) or np.any(lv < 0):
            raise ValueError("saturation levels must be finite and >= 0")
        object.__setattr__(self, "levels", lv)

    @staticmethod
    def constant(level: float, shape: tuple[int, int]) -> "SaturationMap":
        return SaturationMap(np.full(shape, float(level)))

    @staticmethod
    def disk(
        level: float,
        radius: float,
        n: int,
        extent: tuple[float, float] = (-1.0, 1.0),
    ) -> "SaturationMap":
        """Level ``level`` inside the centered disk of given radius, 0 outside."""
        lo, hi = extent
        h = (hi - lo) / n
        c = lo + (np.arange(n) + 0.5) * h
        xx, yy = np.meshgrid(c, c, indexing="xy")
        levels = np.where(xx * xx + yy * yy <= radius * radius, float(level), 0.0)
        return SaturationMap(levels)


def _check_same_shape(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape != b.shape:
        raise DimensionMismatchError(f"{what}: shapes {a.shape} and {b.shape} differ")


def saturation_apply(x: np.ndarray, m: SaturationMap) -> np.ndarray:
    """Clip ``x`` from above against the level map: min(x, M) per cell."""
    x = np.asarray(x, dtype=np.float64)
    _check_same_shape(x, m.levels, "saturation_apply")
    return np.minimum(x, m.levels)


def normal_cone_project(y: np.ndarray, u: np.ndarray, m: SaturationMap) -> np.ndarray:
    """Project ``u`` onto the pre-image set of the feasible data ``y``.

    Cells with ``y < M`` are pinned to ``y``; saturated cells take
    ``max(u, M)``.  ``y`` must itself be feasible (``y <= M`` everywhere).
    """
    y = np.asarray(y, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    _check_same_shape(y, m.levels, "normal_cone_project")
    _check_same_shape(u, m.levels, "normal_cone_project")
    if np.any(y > m.levels):
        raise ValueError("normal_cone_project: y exceeds the saturation level")
    return np.where(y < m.levels, y, np.maximum(u, m.levels))


@dataclass(frozen=True)
class SaturationOperator:
    """Forward operator ``x -> min(x, M)`` on a fixed grid."""

    m: SaturationMap

    @property
    def domain_shape(self) -> tuple[int, int]:
        return self.m.levels.shape

    @property
    def codomain_shape(self) -> tuple[int, int]:
        return self.m.levels.shape

    def apply(self, x: np.ndarray) -> np.ndarray:
        return saturation_apply(x, self.m)


# ---------------------------------------------------------------------------
# Radon
# ---------------------------------------------------------------------------


def _ray_trace(n: int, p0x: float, p0y: float, dx: float, dy: float):
    """Pixel indices and intersection lengths of one unit-speed ray.

    The grid occupies [0, n] x [0, n]; the ray is p0 + t * d with |d| = 1.
    Returns (flat_indices, lengths); lengths are exact chord pieces.
    """
    eps = 1e-12
    t_in = -np.inf
    t_out = np.inf
    for p, d in ((p0x, dx), (p0y, dy)):
        if abs(d) < eps:
            if p <= 0.0 or p >= n:
                return None
        else:
            t0 = (0.0 - p) / d
            t1 = (n - p) / d
            t_in = max(t_in, min(t0, t1))
            t_out = min(t_out, max(t0, t1))
    if not t_out - t_in > eps:
        return None
    planes = np.arange(n + 1, dtype=np.float64)
    cuts = [np.array([t_in, t_out])]
    for p, d in ((p0x, dx), (p0y, dy)):
        if abs(d) >= eps:
            t = (planes - p) / d
            cuts.append(t[(t > t_in) & (t < t_out)])
    ts = np.unique(np.concatenate(cuts))
    lengths = np.diff(ts)
    keep = lengths > eps
    if not np.any(keep):
        return None
    mids = 0.5 * (ts[:-1] + ts[1:])[keep]
    ix = np.clip(np.floor(p0x + mids * dx).astype(np.int64), 0, n - 1)
    iy = np.clip(np.floor(p0y + mids * dy).astype(np.int64), 0, n - 1)
    return iy * n + ix, lengths[keep]


class RadonOperator:
    """Sparse parallel-beam Radon transform on an ``n_x`` square grid."""

    def __init__(self, n_x: int, n_angles: int, matrix: sp.csr_matrix):
        self.n_x = int(n_x)
        self.n_angles = int(n_angles)
        self.n_bins = matrix.shape[0] // n_angles
        self.matrix = matrix
        self.matrix_t = matrix.T.tocsr()
        self.lsqr_tol = 1e-8

    @property
    def domain_shape(self) -> tuple[int, int]:
        return (self.n_x, self.n_x)

    @property
    def codomain_shape(self) -> tuple[int, int]:
        return (self.n_angles, self.n_bins)

    @property
    def angles(self) -> np.ndarray:
        return np.arange(self.n_angles) * (math.pi / self.n_angles)

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != self.domain_shape:
            raise DimensionMismatchError(
                f"radon apply: image shape {x.shape}, expected {self.domain_shape}"
            )
        return (self.matrix @ x.ravel()).reshape(self.codomain_shape)

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64)
        if y.shape != self.codomain_shape:
            raise DimensionMismatchError(
                f"radon adjoint: data shape {y.shape}, expected {self.codomain_shape}"
            )
        return (self.matrix_t @ y.ravel()).reshape(self.domain_shape)

    def as_linear_map(self) -> LinearMap:
        return LinearMap(
            self.matrix.shape,
            lambda v: self.matrix @ v,
            lambda w: self.matrix_t @ w,
        )


@functools.lru_cache(maxsize=8)
def radon_build(n_x: int, n_angles: int) -> RadonOperator:
    """Assemble the sparse Radon matrix for an ``n_x`` grid, ``n_angles`` views.

    Geometry is in pixel units: pixels are unit squares, the detector bin
    pitch is 1, and weights are intersection lengths, so a constant-1
    image maps to per-ray chord lengths.  The operator is cached; treat
    it as immutable.
    """
    if n_x < 2 or n_angles < 1:
        raise ValueError("radon_build: need n_x >= 2 and n_angles >= 1")
    n_bins = math.ceil(1.5 * n_x)
    center = n_x / 2.0
    rows, cols, vals = [], [], []
    for k in range(n_angles):
        theta = k * math.pi / n_angles
        nx_, ny_ = math.cos(theta), math.sin(theta)
        dx, dy = -math.sin(theta), math.cos(theta)
        for j in range(n_bins):
            s = (j + 0.5) - n_bins / 2.0
            traced = _ray_trace(n_x, center + s * nx_, center + s * ny_, dx, dy)
            if traced is None:
                continue
            idx, w = traced
            rows.append(np.full(idx.size, k * n_bins + j, dtype=np.int64))
            cols.append(idx)
            vals.append(w)
    if rows:
        coo = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n_angles * n_bins, n_x * n_x),
        )
    else:  # pragma: no cover - degenerate sizes only
        coo = sp.coo_matrix((n_angles * n_bins, n_x * n_x))
    return RadonOperator(n_x, n_angles, coo.tocsr())


def radon_apply(op: RadonOperator, x: np.ndarray) -> np.ndarray:
    return op.apply(x)


def radon_adjoint_apply(op: RadonOperator, y: np.ndarray) -> np.ndarray:
    return op.adjoint(y)


# ---------------------------------------------------------------------------
# projectors built on the pseudo-inverse
# ---------------------------------------------------------------------------


def pseudo_inverse_apply(op, y: np.ndarray, tol: float | None = None) -> np.ndarray:
    """Minimum-norm solution of ``op x = y`` (LSQR from zero)."""
    y = np.asarray(y, dtype=np.float64)
    if y.shape != op.codomain_shape:
        raise DimensionMismatchError(
            f"pseudo_inverse_apply: data shape {y.shape}, expected {op.codomain_shape}"
        )
    tol = op.lsqr_tol if tol is None else tol
    x = lsqr_solve(op.as_linear_map(), y.ravel(), tol=tol)
    return x.reshape(op.domain_shape)


def kernel_project(op, x: np.ndarray, tol: float | None = None) -> np.ndarray:
    """Orthogonal projection onto the null space of the operator."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != op.domain_shape:
        raise DimensionMismatchError(
            f"kernel_project: image shape {x.shape}, expected {op.domain_shape}"
        )
    return x - pseudo_inverse_apply(op, op.apply(x), tol=tol)


def range_project(op, y: np.ndarray, tol: float | None = None) -> np.ndarray:
    """Orthogonal projection onto the range of the operator."""
    return op.apply(pseudo_inverse_apply(op, y, tol=tol))


@dataclass(frozen=True)
class GridLinearOperator:
    """A generic linear forward map between two grids (mainly for tests)."""

    lin: LinearMap
    domain_shape: tuple[int, int]
    codomain_shape: tuple[int, int]
    lsqr_tol: float = 1e-8

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != self.domain_shape:
            raise DimensionMismatchError(
                f"apply: shape {x.shape}, expected {self.domain_shape}"
            )
        return self.lin(x.ravel()).reshape(self.codomain_shape)

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64)
        if y.shape != self.codomain_shape:
            raise DimensionMismatchError(
                f"adjoint: shape {y.shape}, expected {self.codomain_shape}"
            )
        return self.lin.adjoint(y.ravel()).reshape(self.domain_shape)

    def as_linear_map(self) -> LinearMap:
        return self.lin


# ---------------------------------------------------------------------------
# composition
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ComposedOperator:
    """Radon transform followed by sinogram-domain saturation."""

    radon: RadonOperator
    m: SaturationMap

    def __post_init__(self):
        if self.m.levels.shape != self.radon.codomain_shape:
            raise DimensionMismatchError(
                "ComposedOperator: saturation map must live on the sinogram grid"
            )

    @property
    def domain_shape(self) -> tuple[int, int]:
        return self.radon.domain_shape

    @property
    def codomain_shape(self) -> tuple[int, int]:
        return self.radon.codomain_shape

    def apply(self, x: np.ndarray) -> np.ndarray:
        return saturation_apply(self.radon.apply(x), self.m)


def composed_apply(op: ComposedOperator, x: np.ndarray) -> np.ndarray:
    return op.apply(x)
