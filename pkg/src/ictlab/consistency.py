"""Consistency model ``f(x, sigma) = c_skip(sigma) x + c_out(sigma) F(c_in(sigma) x, sigma)``
and one-step / multistep sampling.

Samplers accept anything with ``dim``, ``sigma_min`` and ``__call__(x, sigma)``,
so an exact oracle (:class:`ictlab.synthetic.ExactConsistency`) can stand in
for a trained network.
"""

from __future__ import annotations

import numpy as np

from .net import DropoutState, Network
from .schedules import NoiseGrid


def skip_scales(sigma, sigma_min=0.002, sigma_data=0.5):
    """Return ``(c_skip, c_out)``; exactly ``(1, 0)`` at ``sigma_min``."""
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma < sigma_min):
        raise ValueError(f"sigma below sigma_min={sigma_min}")
    shifted = sigma - sigma_min
    c_skip = sigma_data**2 / (shifted**2 + sigma_data**2)
    c_out = sigma_data * shifted / np.sqrt(sigma_data**2 + sigma**2)
    return c_skip, c_out


def input_scale(sigma, sigma_data=0.5):
    return 1.0 / np.sqrt(np.asarray(sigma, dtype=float) ** 2 + sigma_data**2)


class ConsistencyModel:
    def __init__(self, network: Network, sigma_min=0.002, sigma_max=80.0, sigma_data=0.5):
        self.network = network
        self.sigma_min = float(sigma_min)
        self.sigma_max = float(sigma_max)
        self.sigma_data = float(sigma_data)

    @property
    def dim(self):
        return self.network.in_dim

    @property
    def params(self):
        return self.network.params

    def forward(self, x, sigma, train=False, drop: DropoutState | None = None, params=None):
        """Return ``(f(x, sigma), tape)``; the tape feeds :meth:`backward`."""
        x = np.asarray(x, dtype=float)
        sigma = np.broadcast_to(np.asarray(sigma, dtype=float), (x.shape[0],))
        if np.any(sigma < self.sigma_min) or np.any(sigma > self.sigma_max):
            raise ValueError(f"sigma outside [{self.sigma_min}, {self.sigma_max}]")
        c_skip, c_out = skip_scales(sigma, self.sigma_min, self.sigma_data)
        c_in = input_scale(sigma, self.sigma_data)
        F, tape = self.network.forward(c_in[:, None] * x, sigma, train, drop, params)
        return c_skip[:, None] * x + c_out[:, None] * F, (tape, c_out)

    def backward(self, tape, upstream):
        net_tape, c_out = tape
        return self.network.backward(net_tape, c_out[:, None] * np.asarray(upstream, dtype=float))

    def __call__(self, x, sigma, params=None):
        return self.forward(x, sigma, params=params)[0]


def one_step_sample(model, n, sigma_max, rng: np.random.Generator):
    """``f(z, sigma_max)`` with ``z ~ N(0, sigma_max^2 I)``."""
    z = sigma_max * rng.standard_normal((n, model.dim))
    return model(z, sigma_max)


def multistep_sample(model, grid: NoiseGrid, indices, n, rng: np.random.Generator):
    """Multistep sampling through the 1-based grid ``indices`` (``1 = i_1 < ... < i_K = N``).

    Starting from ``x ~ N(0, sigma_N^2 I)``, each step maps through the model
    and re-noises to the next lower level.  With ``indices = (1, N)`` this
    reproduces :func:`one_step_sample` exactly for the same ``rng`` state.
    """
    idx = [int(i) for i in indices]
    if len(idx) < 2 or idx[0] != 1 or idx[-1] != grid.n or any(a >= b for a, b in zip(idx, idx[1:])):
        raise ValueError(f"indices must increase strictly from 1 to {grid.n}, got {idx}")
    sigmas = grid.sigma(idx)
    x = sigmas[-1] * rng.standard_normal((n, model.dim))
    for k in range(len(idx) - 2, -1, -1):
        x = model(x, sigmas[k + 1])
        scale = np.sqrt(sigmas[k] ** 2 - model.sigma_min**2)
        if scale > 0:
            x = x + scale * rng.standard_normal(x.shape)
    return x


def nearest_index(grid: NoiseGrid, sigma):
    """1-based index of the grid level closest to ``sigma`` (interior levels only)."""
    if grid.n < 3:
        raise ValueError("grid has no interior levels")
    return int(np.argmin(np.abs(grid.levels[1:-1] - sigma))) + 2
