"""Scalar affine toy model for the zero-EMA-teacher analysis.

Data is a point mass at ``xi``; the model family is
``f_theta(x, sigma) = (sigma_min / sigma) x + (1 - sigma_min / sigma) theta``
on the linear grid ``sigma_i = sigma_min + (i - 1) * dsigma``.  With a shared
Gaussian draw the noise terms cancel, so every expectation over the grid is an
exact finite sum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.integrate import simpson

from .schedules import build_grid

SIMPSON_INTERVALS = 1_000_000


@dataclass(frozen=True)
class ToySpec:
    xi: float = 1.0
    theta: float = 0.5
    theta_minus: float = 0.3
    sigma_min: float = 0.002
    sigma_max: float = 80.0
    n: int = 1281

    def __post_init__(self):
        if not self.sigma_min > 0 or self.n < 2 or self.sigma_max <= self.sigma_min:
            raise ValueError(f"invalid toy spec {self}")

    @property
    def dsigma(self):
        return (self.sigma_max - self.sigma_min) / (self.n - 1)

    def grid(self):
        return build_grid(self.n, self.sigma_min, self.sigma_max, spacing="linear")


def _ratios(spec):
    a = spec.sigma_min / spec.grid().levels
    return a[:-1], a[1:]


def _residuals(spec):
    lo, hi = _ratios(spec)
    r = (hi - lo) * spec.xi + (1 - hi) * spec.theta - (1 - lo) * spec.theta_minus
    return r, hi


def toy_loss(spec: ToySpec) -> float:
    """Exact ``E_i[(f_theta(x_{i+1}) - f_theta_minus(x_i))^2]`` over ``i ~ U[1, N-1]``."""
    r, _ = _residuals(spec)
    return float(np.mean(r * r))


def toy_loss_grad(spec: ToySpec) -> float:
    """``d toy_loss / d theta`` with the teacher held fixed."""
    r, hi = _residuals(spec)
    return float(2.0 * np.mean(r * (1 - hi)))


def toy_scaled_grad(spec: ToySpec) -> float:
    return toy_loss_grad(spec) / spec.dsigma


def _uniform_mean(f, sigma_min, sigma_max, intervals):
    # substitute sigma = e^u so the nodes crowd where the integrands peak, near sigma_min
    u = np.linspace(math.log(sigma_min), math.log(sigma_max), intervals + 1)
    s = np.exp(u)
    return simpson(f(s) * s, x=u) / (sigma_max - sigma_min)


def toy_loss_limit(theta, theta_minus, sigma_min=0.002, sigma_max=80.0, intervals=SIMPSON_INTERVALS):
    """Large-N limit of the loss for ``theta != theta_minus``, by Simpson quadrature."""
    if theta == theta_minus:
        raise ValueError("the limit is only stated for theta != theta_minus")
    mean = _uniform_mean(lambda s: (1 - sigma_min / s) ** 2, sigma_min, sigma_max, intervals)
    return mean * (theta - theta_minus) ** 2


def toy_grad_limit(theta, xi, sigma_min=0.002, sigma_max=80.0, intervals=SIMPSON_INTERVALS):
    """Large-N limit of the 1/dsigma-scaled gradient when the teacher equals the student."""
    mean = _uniform_mean(
        lambda s: sigma_min / s**2 * (1 - sigma_min / s), sigma_min, sigma_max, intervals
    )
    return 2.0 * mean * (theta - xi)


def toy_loss_mc(spec: ToySpec, z) -> np.ndarray:
    """Per-draw loss with explicit noise; every entry equals :func:`toy_loss` up to rounding.

    ``z`` holds one standard-normal draw per Monte Carlo sample, each reused
    across all grid pairs.
    """
    levels = spec.grid().levels
    z = np.asarray(z, dtype=float)[:, None]
    model = ToyConsistency(spec.sigma_min)
    s_hi, s_lo = levels[1:], levels[:-1]
    student = model.apply(spec.xi + s_hi * z, s_hi, spec.theta)
    teacher = model.apply(spec.xi + s_lo * z, s_lo, spec.theta_minus)
    return np.mean((student - teacher) ** 2, axis=1)


class ToyConsistency:
    """The affine toy model exposed through the forward/backward model interface."""

    def __init__(self, sigma_min=0.002, theta=0.0):
        self.sigma_min = sigma_min
        self.dim = 1
        self.params = np.array([float(theta)])

    def apply(self, x, sigma, theta):
        a = self.sigma_min / np.asarray(sigma, dtype=float)
        return a * x + (1 - a) * theta

    def forward(self, x, sigma, train=False, drop=None, params=None):
        p = self.params if params is None else np.asarray(params, dtype=float)
        x = np.asarray(x, dtype=float)
        sigma = np.broadcast_to(np.asarray(sigma, dtype=float), (x.shape[0],))
        out = self.apply(x, sigma[:, None], p[0])
        return out, 1 - self.sigma_min / sigma

    def backward(self, tape, upstream):
        return np.array([np.sum(tape[:, None] * np.asarray(upstream, dtype=float))])

    def __call__(self, x, sigma, params=None):
        return self.forward(x, sigma, params=params)[0]


def toy_descent(xi, theta0, n, steps, lr, ema=0.0, sigma_min=0.002, sigma_max=80.0):
    """Gradient descent on the toy loss through the student branch only.

    With ``ema = 0`` the teacher is the student (``theta_minus = theta``) at
    every step; otherwise the teacher tracks the student as an EMA with that
    decay rate, starting from ``theta0``.

    Returns:
        Final ``theta``.
    """
    spec = ToySpec(xi, theta0, theta0, sigma_min, sigma_max, n)
    lo, hi = _ratios(spec)
    # loss gradient is affine in (theta, theta_minus): 2 E[r (1 - hi)]
    w = 1 - hi
    c_xi = 2.0 * np.mean((hi - lo) * w) * xi
    c_th = 2.0 * np.mean(w * w)
    c_tm = 2.0 * np.mean((1 - lo) * w)
    theta = theta_minus = float(theta0)
    for _ in range(steps):
        grad = c_xi + c_th * theta - c_tm * (theta if ema == 0 else theta_minus)
        theta -= lr * grad
        theta_minus = theta if ema == 0 else ema * theta_minus + (1 - ema) * theta
    return theta


@dataclass(frozen=True)
class ClaimCheck:
    claim: str
    computed: float
    reference: float
    tolerance: str
    passed: bool


def empirical_order(dsigmas, errors):
    """Slope of ``log|error|`` against ``log(dsigma)`` by least squares."""
    return float(np.polyfit(np.log(dsigmas), np.log(np.abs(errors)), 1)[0])


PRESETS = {
    "paper-defaults": dict(
        xi=1.0,
        theta=0.5,
        theta_minus=0.3,
        sigma_min=0.002,
        sigma_max=80.0,
        loss_ns=(10**3, 10**4, 10**5, 10**6),
        grad_ns=(10**5, 10**6, 10**7),
        divergence_ns=(10**3, 10**4, 10**5, 10**6),
        min_order=0.9,
    ),
}


def prop1_checks(preset="paper-defaults"):
    """Run the four claim checks; returns ``(checks, curves)``.

    ``curves`` rows are ``(series, n, dsigma, computed, reference)`` for
    plotting convergence.
    """
    p = PRESETS[preset]
    base = ToySpec(p["xi"], p["theta"], p["theta_minus"], p["sigma_min"], p["sigma_max"], 2)
    checks, curves = [], []

    limit = toy_loss_limit(base.theta, base.theta_minus, base.sigma_min, base.sigma_max)
    ds, errs = [], []
    for n in p["loss_ns"]:
        spec = replace(base, n=n)
        value = toy_loss(spec)
        ds.append(spec.dsigma)
        errs.append(value - limit)
        curves.append(("loss", n, spec.dsigma, value, limit))
    order = empirical_order(ds, errs)
    checks.append(ClaimCheck("loss -> limit (theta_minus != theta), order in dsigma", order,
                             p["min_order"], f">= {p['min_order']}", order >= p["min_order"]))

    glimit = toy_grad_limit(base.theta, base.xi, base.sigma_min, base.sigma_max)
    ds, errs = [], []
    for n in p["grad_ns"]:
        spec = replace(base, theta_minus=base.theta, n=n)
        value = toy_scaled_grad(spec)
        ds.append(spec.dsigma)
        errs.append(value - glimit)
        curves.append(("scaled_grad", n, spec.dsigma, value, glimit))
    order = empirical_order(ds, errs)
    checks.append(ClaimCheck("scaled grad -> limit (theta_minus == theta), order in dsigma", order,
                             p["min_order"], f">= {p['min_order']}", order >= p["min_order"]))

    for label, tm, sign in (("+inf (theta_minus < theta)", base.theta - 0.2, 1.0),
                            ("-inf (theta_minus > theta)", base.theta + 0.2, -1.0)):
        values = []
        for n in p["divergence_ns"]:
            spec = replace(base, theta_minus=tm, n=n)
            values.append(toy_scaled_grad(spec))
            curves.append((f"diverge_{'pos' if sign > 0 else 'neg'}", n, spec.dsigma, values[-1], np.nan))
        signed = sign * np.array(values)
        growth = signed[-1] / signed[0]
        span = p["divergence_ns"][-1] / p["divergence_ns"][0]
        ok = bool(np.all(signed > 0) and np.all(np.diff(signed) > 0) and growth > 0.5 * span)
        checks.append(ClaimCheck(f"scaled grad -> {label}", float(values[-1]), float(growth),
                                 f"monotone, growth > {0.5 * span:g}", ok))
    return checks, curves
