"""Data-consistent regularizing networks for nonlinear inverse problems.

Provides a deterministic RNG, iterative linear algebra kernels, saturation
and sparse-view tomography forward operators, data-consistent network
wrappers, a small trainable convolutional network with hand-written
gradients, and desk-scale experiment harnesses (convergence, rates,
reconstruction-quality tables) behind a command line interface.
"""

from dcreg.rng import Rng
from dcreg.linalg import (
    IterationLimitError,
    LinearMap,
    l2_distance,
    lsqr_solve,
    spectral_norm,
)

__version__ = "0.1.0"

__all__ = [
    "Rng",
    "IterationLimitError",
    "LinearMap",
    "l2_distance",
    "lsqr_solve",
    "spectral_norm",
    "__version__",
]
