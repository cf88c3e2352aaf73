"""Deterministic random number generation.

A counter-based generator: draw ``i`` of stream ``seed`` is a fixed bit
mix (the splitmix64 finalizer) of ``seed``-offset state advanced by a
constant odd increment.  The entire sequence is therefore a pure function
of ``(seed, counter)``, replays bit-exactly on any platform, and can be
split into statistically independent child streams without locks.  All
stochastic code in this package draws from this generator only; nothing
touches global RNG state.
"""

from __future__ import annotations

import math

import numpy as np

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_TWO53 = float(1 << 53)


def _mix(state: np.ndarray) -> np.ndarray:
    # splitmix64 output finalizer; uint64 arithmetic wraps mod 2**64.
    z = state.copy()
    z ^= z >> np.uint64(30)
    z *= _MIX1
    z ^= z >> np.uint64(27)
    z *= _MIX2
    z ^= z >> np.uint64(31)
    return z


class Rng:
    """Counter-based deterministic generator with Box-Muller gaussians.

    Parameters
    ----------
    seed : int
        Stream identifier, reduced mod 2**64.  Equal seeds give equal
        sequences; distinct seeds give (for practical purposes)
        independent streams.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._counter = 0
        self._gauss_spare: float | None = None

    # -- raw stream ------------------------------------------------------

    def _raw(self, n: int) -> np.ndarray:
        """Next ``n`` raw 64-bit words as a uint64 array."""
        idx = np.arange(self._counter + 1, self._counter + n + 1, dtype=np.uint64)
        self._counter += n
        with np.errstate(over="ignore"):
            state = (np.uint64(self.seed) + _GAMMA * idx).astype(np.uint64)
            return _mix(state)

    def _unit(self, n: int) -> np.ndarray:
        """``n`` doubles in [0, 1) using the 53 high bits of each word."""
        return (self._raw(n) >> np.uint64(11)).astype(np.float64) / _TWO53

    # -- scalar draws ----------------------------------------------------

    def uniform(self, lo: float = 0.0, hi: float = 1.0) -> float:
        """One draw from the half-open interval [lo, hi)."""
        return float(self.uniform_vector(1, lo, hi)[0])

    def gaussian(self) -> float:
        """One standard normal draw (Box-Muller, second value cached)."""
        if self._gauss_spare is not None:
            z = self._gauss_spare
            self._gauss_spare = None
            return z
        z0, z1 = self._gauss_pairs(1)
        self._gauss_spare = float(z1[0])
        return float(z0[0])

    def integer(self, n: int) -> int:
        """One draw from {0, ..., n-1} (rejection-free modulo; n small)."""
        if n <= 0:
            raise ValueError("integer() needs n >= 1")
        return int(self._raw(1)[0] % np.uint64(n))

    # -- vector draws ----------------------------------------------------

    def uniform_vector(self, n: int, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
        """``n`` draws from [lo, hi); endpoint excluded even under rounding."""
        if not hi > lo:
            raise ValueError("uniform_vector needs hi > lo")
        out = lo + (hi - lo) * self._unit(n)
        # (hi-lo)*u can round up to hi-lo for extreme u; keep the interval open
        np.minimum(out, np.nextafter(hi, lo), out=out)
        return out

    def _gauss_pairs(self, n_pairs: int) -> tuple[np.ndarray, np.ndarray]:
        raw = self._unit(2 * n_pairs)
        u1 = 1.0 - raw[0::2]  # (0, 1]: keeps log() finite
        u2 = raw[1::2]
        r = np.sqrt(-2.0 * np.log(u1))
        ang = (2.0 * math.pi) * u2
        return r * np.cos(ang), r * np.sin(ang)

    def gaussian_vector(self, n: int) -> np.ndarray:
        """``n`` standard normal draws, identical to ``n`` scalar calls."""
        out = np.empty(n)
        k = 0
        if self._gauss_spare is not None and n > 0:
            out[0] = self._gauss_spare
            self._gauss_spare = None
            k = 1
        n_pairs = (n - k + 1) // 2
        if n_pairs > 0:
            z0, z1 = self._gauss_pairs(n_pairs)
            inter = np.empty(2 * n_pairs)
            inter[0::2] = z0
            inter[1::2] = z1
            take = n - k
            out[k:] = inter[:take]
            if take < 2 * n_pairs:
                self._gauss_spare = float(inter[take])
        return out

    # -- structure -------------------------------------------------------

    def shuffle(self, x: np.ndarray) -> None:
        """In-place Fisher-Yates shuffle along axis 0."""
        for i in range(len(x) - 1, 0, -1):
            j = self.integer(i + 1)
            tmp = np.copy(x[i])
            x[i] = x[j]
            x[j] = tmp

    def permutation(self, n: int) -> np.ndarray:
        idx = np.arange(n)
        self.shuffle(idx)
        return idx

    def spawn(self, key: int) -> "Rng":
        """Child stream for parallel or per-item use.

        The child seed mixes (seed, key) through the same finalizer, so
        children with distinct keys are decorrelated and reproducible.
        """
        with np.errstate(over="ignore"):
            base = np.uint64(self.seed) ^ _mix(np.array([np.uint64(key) * _GAMMA + _GAMMA]))[0]
        return Rng(int(base))
