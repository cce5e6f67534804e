"""Distance functions for the consistency loss, with gradients.

All functions reduce over the last axis, so a batch of shape ``(B, d)``
yields ``B`` values and a ``(B, d)`` gradient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

METRIC_KINDS = ("squared_l2", "l1", "pseudo_huber")


@dataclass(frozen=True)
class Metric:
    kind: str = "pseudo_huber"
    c: float = 0.03

    def __post_init__(self):
        if self.kind not in METRIC_KINDS:
            raise ValueError(f"unknown metric {self.kind!r}")
        if self.kind == "pseudo_huber" and not self.c > 0:
            raise ValueError("pseudo_huber needs c > 0")

    def __call__(self, x, y):
        return metric_value_grad(self, x, y)[0]


def metric_value_grad(m: Metric, x, y):
    """Return ``(d(x, y), grad_x d(x, y))``.

    The l1 subgradient is 0 where ``x == y`` exactly.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {y.shape}")
    diff = x - y
    if m.kind == "squared_l2":
        return np.sum(diff * diff, axis=-1), 2.0 * diff
    if m.kind == "l1":
        return np.sum(np.abs(diff), axis=-1), np.sign(diff)
    sq = np.sum(diff * diff, axis=-1)
    root = np.sqrt(sq + m.c * m.c)
    # sq / (root + c) == root - c without cancellation when |x - y| << c
    return sq / (root + m.c), diff / root[..., None]


def huber_c(d: int) -> float:
    """Pseudo-Huber breadth for data of dimensionality ``d``: ``0.00054 * sqrt(d)``."""
    if d < 1:
        raise ValueError(f"dimension must be >= 1, got {d}")
    return 0.00054 * math.sqrt(d)
