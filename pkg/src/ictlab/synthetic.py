"""Synthetic data distributions with exact perturbed scores.

Every distribution here is a mixture of isotropic Gaussians (a delta is a
single component with zero spread), so convolving with ``N(0, sigma^2 I)``
keeps it in closed form: component ``k`` just gets variance
``stddev_k^2 + sigma^2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .schedules import build_grid

KINDS = ("delta", "gaussian", "gaussian_mixture")


@dataclass(frozen=True)
class Component:
    weight: float
    mean: tuple
    stddev: float


@dataclass(frozen=True)
class SyntheticDistribution:
    kind: str
    dim: int
    components: tuple

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown distribution kind {self.kind!r}")
        if not self.components:
            raise ValueError("distribution needs at least one component")
        if abs(sum(c.weight for c in self.components) - 1.0) > 1e-9:
            raise ValueError("component weights must sum to 1")
        for c in self.components:
            if len(c.mean) != self.dim:
                raise ValueError(f"component mean {c.mean} does not have dim {self.dim}")
            if c.weight <= 0:
                raise ValueError("component weights must be positive")
        if self.kind == "delta":
            if len(self.components) != 1 or self.components[0].stddev != 0:
                raise ValueError("delta needs exactly one component with stddev 0")
        elif any(not c.stddev > 0 for c in self.components):
            raise ValueError("gaussian components need stddev > 0")
        if self.kind == "gaussian" and len(self.components) != 1:
            raise ValueError("gaussian kind has exactly one component")

    @property
    def weights(self):
        return np.array([c.weight for c in self.components])

    @property
    def means(self):
        return np.array([c.mean for c in self.components], dtype=float)

    @property
    def stddevs(self):
        return np.array([c.stddev for c in self.components], dtype=float)


def delta(xi):
    xi = tuple(float(v) for v in np.atleast_1d(xi))
    return SyntheticDistribution("delta", len(xi), (Component(1.0, xi, 0.0),))


def gaussian(mean, stddev):
    mean = tuple(float(v) for v in np.atleast_1d(mean))
    return SyntheticDistribution("gaussian", len(mean), (Component(1.0, mean, float(stddev)),))


def gaussian_mixture(weights, means, stddevs):
    means = np.atleast_2d(np.asarray(means, dtype=float))
    stddevs = np.broadcast_to(np.asarray(stddevs, dtype=float), (len(means),))
    comps = tuple(
        Component(float(w), tuple(float(v) for v in m), float(s))
        for w, m, s in zip(weights, means, stddevs)
    )
    return SyntheticDistribution("gaussian_mixture", means.shape[1], comps)


def square_mixture(half_width=1.0, stddev=0.1):
    """Four equal-weight components at the corners of a square."""
    h = half_width
    return gaussian_mixture([0.25] * 4, [[h, h], [-h, h], [-h, -h], [h, -h]], stddev)


def sample_data(d: SyntheticDistribution, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` i.i.d. samples, shape ``(n, dim)``."""
    if n < 1:
        raise ValueError("need n >= 1")
    if len(d.components) == 1:
        comp = np.zeros(n, dtype=int)
    else:
        comp = rng.choice(len(d.components), size=n, p=d.weights)
    noise = rng.standard_normal((n, d.dim))
    return d.means[comp] + d.stddevs[comp][:, None] * noise


def _check_sigma(sigma):
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma <= 0):
        raise ValueError("sigma must be positive")
    return sigma


def _component_logits(d, x, sigma):
    # log w_k + log N(x; mu_k, v_k I) for every component; shape (..., K)
    var = d.stddevs**2 + sigma[..., None] ** 2
    sq = np.sum((x[..., None, :] - d.means) ** 2, axis=-1)
    return np.log(d.weights) - 0.5 * d.dim * np.log(2 * math.pi * var) - 0.5 * sq / var, var


def perturbed_log_density(d: SyntheticDistribution, x, sigma):
    """``log p_sigma(x)`` where ``p_sigma = p_data * N(0, sigma^2 I)``."""
    sigma = _check_sigma(sigma)
    logits, _ = _component_logits(d, np.asarray(x, dtype=float), sigma)
    return logsumexp(logits, axis=-1)


def mixture_score(d: SyntheticDistribution, x, sigma):
    """Score via log-space responsibilities; valid for every kind."""
    x = np.asarray(x, dtype=float)
    sigma = _check_sigma(sigma)
    logits, var = _component_logits(d, x, sigma)
    resp = np.exp(logits - logsumexp(logits, axis=-1, keepdims=True))
    comp_scores = -(x[..., None, :] - d.means) / var[..., None]
    return np.sum(resp[..., None] * comp_scores, axis=-2)


def perturbed_score(d: SyntheticDistribution, x, sigma):
    """Exact ``grad_x log p_sigma(x)``.

    ``sigma`` may be a scalar or broadcast against the leading axes of ``x``.
    """
    if d.kind == "gaussian_mixture":
        return mixture_score(d, x, sigma)
    x = np.asarray(x, dtype=float)
    sigma = _check_sigma(sigma)
    c = d.components[0]
    var = c.stddev**2 + sigma**2
    if np.ndim(var):
        var = var[..., None]
    return -(x - d.means[0]) / var


def true_consistency(d: SyntheticDistribution, x, sigma, sigma_min):
    """Closed-form consistency function for delta and single-Gaussian data.

    Mixtures have no closed form; integrate with :func:`pf_ode_solve` instead.
    """
    if d.kind == "gaussian_mixture":
        raise ValueError("no closed-form consistency function for mixtures; use pf_ode_solve")
    sigma = np.asarray(sigma, dtype=float)
    if sigma_min <= 0 or np.any(sigma < sigma_min):
        raise ValueError("need sigma >= sigma_min > 0")
    x = np.asarray(x, dtype=float)
    mu = d.means[0]
    s = d.components[0].stddev
    if d.kind == "delta":
        ratio = np.where(sigma == sigma_min, 1.0, sigma_min / sigma)
    else:
        ratio = np.sqrt((s * s + sigma_min**2) / (s * s + sigma**2))
    if np.ndim(ratio):
        ratio = ratio[..., None]
    return ratio * x + (1.0 - ratio) * mu


def _score_fn(score_source):
    if isinstance(score_source, SyntheticDistribution):
        return lambda x, s: perturbed_score(score_source, x, s)
    if callable(score_source):
        return score_source
    raise TypeError("score_source must be a SyntheticDistribution or a callable score(x, sigma)")


def pf_ode_solve(score_source, x, sigma_from, sigma_to, steps=200, rho=7.0):
    """Integrate ``dx/dsigma = -sigma * score(x, sigma)`` with Heun's method.

    Steps follow a rho-interpolated sub-grid between the endpoints; either
    direction is allowed.
    """
    if sigma_from <= 0 or sigma_to <= 0:
        raise ValueError("PF-ODE endpoints must be positive")
    if steps < 1:
        raise ValueError("need at least one step")
    x = np.array(x, dtype=float)
    if sigma_from == sigma_to:
        return x
    score = _score_fn(score_source)
    lo, hi = sorted((sigma_from, sigma_to))
    levels = build_grid(steps + 1, lo, hi, rho).levels
    if sigma_from > sigma_to:
        levels = levels[::-1]
    for s_cur, s_next in zip(levels[:-1], levels[1:]):
        h = s_next - s_cur
        d_cur = -s_cur * score(x, s_cur)
        x_pred = x + h * d_cur
        d_next = -s_next * score(x_pred, s_next)
        x = x + 0.5 * h * (d_cur + d_next)
    return x


class ExactConsistency:
    """Ground-truth consistency function usable wherever a model is expected.

    Mixtures fall back to integrating the PF-ODE with the exact score.
    """

    def __init__(self, dist: SyntheticDistribution, sigma_min=0.002, ode_steps=200):
        self.dist = dist
        self.sigma_min = sigma_min
        self.dim = dist.dim
        self.ode_steps = ode_steps

    def __call__(self, x, sigma):
        if self.dist.kind != "gaussian_mixture":
            return true_consistency(self.dist, x, sigma, self.sigma_min)
        return pf_ode_solve(self.dist, x, float(sigma), self.sigma_min, self.ode_steps)
