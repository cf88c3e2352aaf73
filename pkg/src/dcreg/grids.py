"""Grid-backed data containers.

Images are square pixel grids with a physical extent; sinograms are
(angle, detector bin) grids.  Values are float64 row-major arrays; the
containers are treated as immutable (mutate only freshly copied arrays).
Most numeric kernels in this package take and return bare 2-d arrays and
leave the metadata to these wrappers at the I/O boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from dcreg.linalg import DimensionMismatchError


def _as_grid(values: np.ndarray) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 2:
        raise DimensionMismatchError(f"expected a 2-d grid, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("grid contains non-finite values")
    return v


@dataclass(frozen=True)
class Image:
    """Square pixel grid over a physical extent (default [-1, 1]^2).

    ``values[i, j]`` is the sample at the center of the pixel in row i,
    column j; row index runs along the second physical coordinate.
    """

    values: np.ndarray
    extent: tuple[float, float] = (-1.0, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "values", _as_grid(self.values))
        lo, hi = self.extent
        if not hi > lo:
            raise ValueError("extent must be an increasing interval")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def pitch(self) -> float:
        lo, hi = self.extent
        return (hi - lo) / self.values.shape[0]

    def pixel_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Center coordinates (c1, c2) as 1-d arrays along each axis."""
        lo, hi = self.extent
        n0, n1 = self.values.shape
        h0 = (hi - lo) / n0
        h1 = (hi - lo) / n1
        c0 = lo + (np.arange(n0) + 0.5) * h0
        c1 = lo + (np.arange(n1) + 0.5) * h1
        return c0, c1


@dataclass(frozen=True)
class Sinogram:
    """Projection data: one row per angle, one column per detector bin."""

    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _as_grid(self.values))

    @property
    def n_angles(self) -> int:
        return self.values.shape[0]

    @property
    def n_bins(self) -> int:
        return self.values.shape[1]
