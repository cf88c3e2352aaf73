"""Phantom generators, the noise model, image metrics, and the empirical
convergence / rate harnesses.

Phantoms come in a regular and a modified regime.  The Gaussian family
draws widths and amplitude from fixed intervals (the modified regime is
narrower and dimmer, so saturation barely engages).  The ellipse family
superposes a few random ellipses inside the unit disk; its modified
variant adds a low-amplitude radial ramp on top of the same draws, so the
paired difference is exactly that ramp.

Noise is norm-bounded, not a fixed distribution: a gaussian direction is
scaled to a uniformly drawn fraction of ``delta``, so every noisy datum
satisfies ``||y_noisy - y|| <= delta`` by construction.

The harnesses evaluate a reconstruction method over a decreasing noise
ladder (worst case over draws) and fit a power law; they are how the
convergence and convergence-rate claims are checked numerically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from dcreg.linalg import DimensionMismatchError, l2_distance, l2_norm
from dcreg.rng import Rng

# ---------------------------------------------------------------------------
# phantoms
# ---------------------------------------------------------------------------

GAUSS_REGULAR = {"sigma": (0.24, 0.32), "amplitude": (0.75, 1.0)}
GAUSS_MODIFIED = {"sigma": (0.12, 0.20), "amplitude": (0.6, 0.8)}


def gen_gaussian_phantom(
    rng: Rng,
    n: int,
    modified: bool = False,
    extent: tuple[float, float] = (-1.0, 1.0),
) -> np.ndarray:
    """Axis-aligned 2-d Gaussian bump on an ``n`` by ``n`` grid.

    Draws, in order, sigma_1 (first axis), sigma_2 (second axis) and the
    amplitude from the regime's intervals, and samples
    ``A * exp(-(r1^2 / (2 s1^2) + r2^2 / (2 s2^2)))`` at pixel centers.
    Row index runs along r2, column index along r1.
    """
    regime = GAUSS_MODIFIED if modified else GAUSS_REGULAR
    s1 = rng.uniform(*regime["sigma"])
    s2 = rng.uniform(*regime["sigma"])
    amp = rng.uniform(*regime["amplitude"])
    lo, hi = extent
    h = (hi - lo) / n
    c = lo + (np.arange(n) + 0.5) * h
    r1 = c[None, :]
    r2 = c[:, None]
    return amp * np.exp(-(r1 * r1 / (2 * s1 * s1) + r2 * r2 / (2 * s2 * s2)))


def gen_ellipse_phantom(
    rng: Rng,
    n: int,
    k_ellipses: int = 4,
    modified: bool = False,
    extent: tuple[float, float] = (-1.0, 1.0),
) -> np.ndarray:
    """Superposition of ``k`` random ellipses inside the unit disk.

    Intensities sum, the result is clipped to [0, 1] and rescaled to peak
    0.88 headroom.  The modified variant draws the same ellipses (same
    stream consumption) and then adds a radial ramp ``a * (1 - |r|)_+``
    with a small drawn amplitude, so modified minus regular at the same
    seed is exactly the ramp.
    """
    lo, hi = extent
    h = (hi - lo) / n
    c = lo + (np.arange(n) + 0.5) * h
    xx = c[None, :]
    yy = c[:, None]
    img = np.zeros((n, n))
    for _ in range(k_ellipses):
        rad = rng.uniform(0.0, 0.6)
        ang = rng.uniform(0.0, 2 * math.pi)
        cx, cy = rad * math.cos(ang), rad * math.sin(ang)
        a = rng.uniform(0.12, 0.45)
        b = rng.uniform(0.12, 0.45)
        tilt = rng.uniform(0.0, math.pi)
        val = rng.uniform(0.2, 1.0)
        ct, st = math.cos(tilt), math.sin(tilt)
        u = (xx - cx) * ct + (yy - cy) * st
        v = -(xx - cx) * st + (yy - cy) * ct
        img += val * ((u * u) / (a * a) + (v * v) / (b * b) <= 1.0)
    img = 0.88 * np.clip(img, 0.0, 1.0)
    if modified:
        ramp_amp = rng.uniform(0.03, 0.1)
        rr = np.sqrt(xx * xx + yy * yy)
        img = img + ramp_amp * np.maximum(1.0 - rr, 0.0)
    return img


# ---------------------------------------------------------------------------
# noise
# ---------------------------------------------------------------------------


def add_noise(rng: Rng, y: np.ndarray, delta: float) -> np.ndarray:
    """Perturb ``y`` by a random direction of norm ``u * delta``, u ~ U[0,1).

    The perturbation norm never exceeds ``delta``; ``delta = 0`` returns
    ``y`` unchanged (and consumes no draws).
    """
    y = np.asarray(y, dtype=np.float64)
    if delta < 0:
        raise ValueError("add_noise: delta must be >= 0")
    if delta == 0.0:
        return y.copy()
    g = rng.gaussian_vector(y.size).reshape(y.shape)
    ng = l2_norm(g)
    if ng == 0.0:
        return y.copy()
    u = rng.uniform()
    return y + (delta * u / ng) * g


DELTA_LADDER_DEFAULT = tuple(10.0 ** (-1 - 0.5 * k) for k in range(7))  # 1e-1 .. 1e-4


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

PSNR_CAP_DB = 300.0


def psnr(x: np.ndarray, ref: np.ndarray, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB against ``ref``; identical -> cap."""
    x = np.asarray(x, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if x.shape != ref.shape:
        raise DimensionMismatchError(f"psnr: shapes {x.shape} vs {ref.shape}")
    mse = float(np.mean((x - ref) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * math.log10(peak * peak / mse), PSNR_CAP_DB)


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    half = (size - 1) / 2.0
    g = np.exp(-((np.arange(size) - half) ** 2) / (2 * sigma * sigma))
    win = np.outer(g, g)
    return win / win.sum()


def ssim(x: np.ndarray, ref: np.ndarray, peak: float = 1.0) -> float:
    """Mean structural similarity with an 11x11 gaussian window, sigma 1.5.

    Local means/variances use the gaussian weights over fully interior
    windows (no padding); the usual stabilizers are ``(0.01 peak)^2`` and
    ``(0.03 peak)^2``.  Grids must be at least 11x11.
    """
    x = np.asarray(x, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if x.shape != ref.shape:
        raise DimensionMismatchError(f"ssim: shapes {x.shape} vs {ref.shape}")
    size = 11
    if x.shape[0] < size or x.shape[1] < size:
        raise ValueError("ssim: grid smaller than the 11x11 window")
    win = _gaussian_window(size, 1.5)

    def wmean(a: np.ndarray) -> np.ndarray:
        view = np.lib.stride_tricks.sliding_window_view(a, (size, size))
        return np.tensordot(view, win, axes=([2, 3], [0, 1]))

    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    mx = wmean(x)
    my = wmean(ref)
    sxx = wmean(x * x) - mx * mx
    syy = wmean(ref * ref) - my * my
    sxy = wmean(x * ref) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def data_fidelity(forward_apply, x_hat: np.ndarray, x_ref: np.ndarray) -> float:
    """``||F(x_hat) - F(x_ref)||`` for a forward map given as a callable."""
    return l2_distance(forward_apply(x_hat), forward_apply(x_ref))


# ---------------------------------------------------------------------------
# convergence / rate harnesses
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RateReport:
    """Power-law fit of worst-case errors against the noise ladder."""

    deltas: tuple[float, ...]
    errors: tuple[float, ...]
    slope: float
    fit_residual: float  # rms residual of the log-log fit
    n_draws: int
    extras: dict = field(default_factory=dict)

    def row_iter(self):
        for d, e in zip(self.deltas, self.errors):
            yield d, e


def fit_rate(deltas, errors) -> tuple[float, float]:
    """Least-squares slope of log(error) against log(delta)."""
    ld = np.log(np.asarray(deltas, dtype=np.float64))
    le = np.log(np.maximum(np.asarray(errors, dtype=np.float64), 1e-300))
    a = np.stack([ld, np.ones_like(ld)], axis=1)
    coef, *_ = np.linalg.lstsq(a, le, rcond=None)
    resid = le - a @ coef
    return float(coef[0]), float(np.sqrt(np.mean(resid * resid)))


def sup_error_ladder(
    method,
    truths: list[np.ndarray],
    data: list[np.ndarray],
    ladder,
    n_draws: int,
    rng: Rng,
) -> list[float]:
    """Worst-case reconstruction error per noise level.

    ``method(delta, y_noisy) -> x_hat``; the error at each rung is the
    sup over all (sample, draw) pairs of ``||x_hat - x_truth||``.  Draws
    use per-(rung, sample, draw) child streams, so the noise realization
    at one rung does not depend on how many other rungs run.
    """
    errors = []
    for r, delta in enumerate(ladder):
        worst = 0.0
        for s, (x_true, y) in enumerate(zip(truths, data)):
            for d in range(n_draws):
                child = rng.spawn(((r * 1000003) + s) * 1000003 + d)
                y_noisy = add_noise(child, y, delta)
                x_hat = method(delta, y_noisy)
                worst = max(worst, l2_distance(x_hat, x_true))
        errors.append(worst)
    return errors


def _validate_ladder(ladder, min_rungs: int, n_draws: int):
    ladder = tuple(float(d) for d in ladder)
    if len(ladder) < min_rungs:
        raise ValueError(f"noise ladder needs at least {min_rungs} rungs, got {len(ladder)}")
    if any(b >= a for a, b in zip(ladder, ladder[1:])):
        raise ValueError("noise ladder must be strictly decreasing")
    if n_draws < 1:
        raise ValueError("n_draws must be >= 1")
    return ladder


def convergence_harness(
    method,
    truths: list[np.ndarray],
    data: list[np.ndarray],
    rng: Rng,
    ladder=DELTA_LADDER_DEFAULT,
    n_draws: int = 20,
) -> RateReport:
    """Empirical convergence check down the noise ladder."""
    ladder = _validate_ladder(ladder, 2, n_draws)
    errors = sup_error_ladder(method, truths, data, ladder, n_draws, rng)
    slope, resid = fit_rate(ladder, errors)
    return RateReport(
        deltas=tuple(ladder),
        errors=tuple(errors),
        slope=slope,
        fit_residual=resid,
        n_draws=n_draws,
    )


def rate_harness(
    method,
    truths: list[np.ndarray],
    data: list[np.ndarray],
    rng: Rng,
    ladder=DELTA_LADDER_DEFAULT,
    n_draws: int = 20,
    extras: dict | None = None,
) -> RateReport:
    """Fit the empirical convergence rate ``error ~ delta^r``."""
    ladder = _validate_ladder(ladder, 3, n_draws)
    errors = sup_error_ladder(method, truths, data, ladder, n_draws, rng)
    slope, resid = fit_rate(ladder, errors)
    return RateReport(
        deltas=tuple(ladder),
        errors=tuple(errors),
        slope=slope,
        fit_residual=resid,
        n_draws=n_draws,
        extras=extras or {},
    )


def source_element(
    rng: Rng, adjoint_apply, codomain_shape: tuple[int, int], x0: np.ndarray, scale: float = 1.0
) -> np.ndarray:
    """Classical source-condition element ``x0 + F^T w`` with gaussian ``w``."""
    w = rng.gaussian_vector(codomain_shape[0] * codomain_shape[1]).reshape(codomain_shape)
    return x0 + scale * adjoint_apply(w)
