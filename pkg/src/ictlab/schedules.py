"""Noise grids, discretization curricula, noise-index sampling and loss weights.

Indices follow the 1-based convention used throughout the package: a grid of
``n`` levels has ``sigma_1 = sigma_min`` and ``sigma_n = sigma_max``, and the
consistency loss pairs level ``i`` with level ``i + 1`` for ``i`` in ``[1, n-1]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import erf

SPACINGS = ("rho_interpolated", "linear")
CURRICULUM_SHAPES = ("constant", "sqrt_original", "linear", "square", "cosine", "exponential")
SAMPLER_KINDS = ("uniform", "lognormal")
WEIGHTING_KINDS = ("uniform", "inverse_gap")


@dataclass(frozen=True)
class NoiseGrid:
    """Discretized noise levels ``sigma_1 < ... < sigma_n``."""

    sigma_min: float
    sigma_max: float
    rho: float
    n: int
    spacing: str
    levels: np.ndarray = field(repr=False, compare=False)

    def sigma(self, i):
        """Noise level(s) at 1-based index ``i``."""
        return self.levels[np.asarray(i) - 1]

    def __len__(self):
        return self.n


def _rho_levels(n, sigma_min, sigma_max, rho):
    frac = np.arange(n) / (n - 1)
    lo, hi = sigma_min ** (1.0 / rho), sigma_max ** (1.0 / rho)
    return (lo + frac * (hi - lo)) ** rho


def build_grid(n, sigma_min=0.002, sigma_max=80.0, rho=7.0, spacing="rho_interpolated"):
    """Build a grid of ``n`` noise levels between ``sigma_min`` and ``sigma_max``.

    ``rho_interpolated`` spaces the levels uniformly in ``sigma ** (1 / rho)``;
    ``linear`` spaces them uniformly in ``sigma`` (``rho`` is then ignored).
    Endpoints are pinned to the inputs exactly.
    """
    n = int(n)
    if n < 2:
        raise ValueError(f"grid needs at least 2 levels, got n={n}")
    if not 0 < sigma_min < sigma_max:
        raise ValueError(f"need 0 < sigma_min < sigma_max, got {sigma_min}, {sigma_max}")
    if spacing not in SPACINGS:
        raise ValueError(f"unknown spacing {spacing!r}")
    if spacing == "rho_interpolated":
        if rho < 1:
            raise ValueError(f"rho must be >= 1, got {rho}")
        levels = _rho_levels(n, sigma_min, sigma_max, rho)
    else:
        levels = sigma_min + np.arange(n) / (n - 1) * (sigma_max - sigma_min)
    levels[0] = sigma_min
    levels[-1] = sigma_max
    if np.any(np.diff(levels) <= 0):
        raise ValueError("noise levels are not strictly increasing at this resolution")
    levels.setflags(write=False)
    return NoiseGrid(float(sigma_min), float(sigma_max), float(rho), n, spacing, levels)


@lru_cache(maxsize=64)
def cached_grid(n, sigma_min, sigma_max, rho, spacing="rho_interpolated"):
    return build_grid(n, sigma_min, sigma_max, rho, spacing)


@dataclass(frozen=True)
class Curriculum:
    """Discretization curriculum ``k -> N(k)`` over ``K`` training iterations."""

    shape: str = "exponential"
    s0: int = 10
    s1: int = 1280
    K: int = 400_000

    def __post_init__(self):
        if self.shape not in CURRICULUM_SHAPES:
            raise ValueError(f"unknown curriculum shape {self.shape!r}")
        if self.s0 < 1 or self.s1 < self.s0 or self.K < 1:
            raise ValueError(f"invalid curriculum parameters s0={self.s0}, s1={self.s1}, K={self.K}")
        if self.shape not in ("exponential", "constant") and self.s0 < 2:
            # these shapes start at N(0) = s0, which must still be a valid grid
            raise ValueError(f"shape {self.shape!r} needs s0 >= 2")

    @property
    def plateau_length(self):
        """Iterations per doubling for the exponential shape (at least 1)."""
        doublings = math.log2(self.s1 // self.s0) + 1
        return max(1, int(self.K // doublings))

    def __call__(self, k):
        return curriculum_n(self, k)


_INTERPOLANTS = {
    "constant": lambda t: 1.0,
    "linear": lambda t: t,
    "square": lambda t: t * t,
    "cosine": lambda t: 0.5 * (1.0 - math.cos(math.pi * t)),
}


def curriculum_n(c: Curriculum, k: int) -> int:
    """Number of discretization levels ``N(k)`` at training step ``k``."""
    if not 0 <= k < c.K:
        raise ValueError(f"step k={k} outside [0, {c.K})")
    s0, s1 = c.s0, c.s1
    if c.shape == "exponential":
        return min(s0 * 2 ** (k // c.plateau_length), s1) + 1
    t = k / c.K
    if c.shape == "sqrt_original":
        return math.ceil(math.sqrt(t * ((s1 + 1) ** 2 - s0**2) + s0**2) - 1) + 1
    return math.ceil(_INTERPOLANTS[c.shape](t) * (s1 + 1 - s0) + s0 - 1) + 1


@dataclass(frozen=True)
class NoiseIndexSampler:
    """Distribution over the pair index ``i`` in ``[1, n-1]``."""

    kind: str = "lognormal"
    p_mean: float = -1.1
    p_std: float = 2.0

    def __post_init__(self):
        if self.kind not in SAMPLER_KINDS:
            raise ValueError(f"unknown sampler kind {self.kind!r}")
        if self.kind == "lognormal" and not self.p_std > 0:
            raise ValueError("p_std must be positive")


def index_pmf(s: NoiseIndexSampler, g: NoiseGrid) -> np.ndarray:
    """Probabilities of ``i = 1 .. n-1`` (entry ``j`` is for ``i = j + 1``)."""
    if s.kind == "uniform":
        return np.full(g.n - 1, 1.0 / (g.n - 1))
    cdf = erf((np.log(g.levels) - s.p_mean) / (math.sqrt(2.0) * s.p_std))
    mass = np.diff(cdf)
    return mass / mass.sum()


@lru_cache(maxsize=64)
def _cached_cdf(s: NoiseIndexSampler, g: NoiseGrid):
    cdf = np.cumsum(index_pmf(s, g))
    cdf[-1] = 1.0
    return cdf


def sample_index(s: NoiseIndexSampler, g: NoiseGrid, rng: np.random.Generator, size=None):
    """Draw 1-based pair indices by inverse-CDF lookup.

    Consumes exactly one uniform per index from ``rng``.
    """
    cdf = _cached_cdf(s, g)
    u = rng.random(size)
    i = np.searchsorted(cdf, u, side="right") + 1
    i = np.minimum(i, g.n - 1)
    return int(i) if size is None else i


@dataclass(frozen=True)
class WeightingFn:
    kind: str = "inverse_gap"

    def __post_init__(self):
        if self.kind not in WEIGHTING_KINDS:
            raise ValueError(f"unknown weighting {self.kind!r}")


def weight(w: WeightingFn, g: NoiseGrid, i):
    """Loss weight for pair index ``i`` (scalar or array of 1-based indices)."""
    idx = np.asarray(i)
    if np.any(idx < 1) or np.any(idx > g.n - 1):
        raise ValueError(f"index out of range [1, {g.n - 1}]")
    if w.kind == "uniform":
        out = np.ones(idx.shape)
    else:
        out = 1.0 / (g.levels[idx] - g.levels[idx - 1])
    return float(out) if out.ndim == 0 else out
