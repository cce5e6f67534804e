"""Rectified Adam and parameter EMA."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class Moments:
    first: np.ndarray
    second: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros(n), np.zeros(n), 0)


def optimizer_step(moments: Moments, grad, lr=1e-4, step=None, beta1=0.9, beta2=0.999, eps=1e-8):
    """One RAdam update.

    Returns ``(delta, new_moments)``; apply as ``params + delta``.  While the
    variance rectification term is undefined (``rho_t <= 5``) the update is
    the bias-corrected momentum step.
    """
    t = moments.step + 1 if step is None else int(step)
    if t < 1:
        raise ValueError("step must be >= 1")
    grad = np.asarray(grad, dtype=float)
    m = beta1 * moments.first + (1 - beta1) * grad
    v = beta2 * moments.second + (1 - beta2) * grad * grad
    m_hat = m / (1 - beta1**t)
    rho_inf = 2.0 / (1 - beta2) - 1.0
    b2t = beta2**t
    rho_t = rho_inf - 2.0 * t * b2t / (1 - b2t)
    if rho_t > 5.0:
        rect = math.sqrt((rho_t - 4) * (rho_t - 2) * rho_inf / ((rho_inf - 4) * (rho_inf - 2) * rho_t))
        adaptive = math.sqrt(1 - b2t) / (np.sqrt(v) + eps)
        delta = -lr * rect * m_hat * adaptive
    else:
        delta = -lr * m_hat
    return delta, Moments(m, v, t)


def ema_update(ema_params, params, rate):
    """``rate * ema + (1 - rate) * params``; ``rate = 0`` copies ``params``."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"EMA rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return np.array(params, dtype=float, copy=True)
    return rate * np.asarray(ema_params) + (1.0 - rate) * np.asarray(params)
