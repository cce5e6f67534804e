"""Small fully-connected network ``F(x, sigma)`` with exact reverse-mode gradients.

The noise level enters through a fixed sinusoidal embedding of
``u = log(sigma) / 4`` concatenated to the input.  All parameters live in one
flat float64 vector; per-layer weights are views into it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

EMBEDDING_KINDS = ("fourier", "positional")
ACTIVATIONS = ("silu", "tanh")


def noise_conditioning(sigma):
    return np.log(sigma) / 4.0


@dataclass(frozen=True)
class NoiseEmbedding:
    """Sinusoidal embedding of the noise level.

    ``fourier`` uses random frequencies drawn once from N(0, 1) and scaled by
    ``2 * pi * scale``; ``positional`` uses geometrically spaced frequencies
    ``max_period ** (-j / half)``.
    """

    kind: str
    dim: int
    scale: float
    frequencies: np.ndarray = field(repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in EMBEDDING_KINDS:
            raise ValueError(f"unknown embedding kind {self.kind!r}")
        if self.dim <= 0 or self.dim % 2:
            raise ValueError("embedding dim must be positive and even")
        if len(self.frequencies) != self.dim // 2:
            raise ValueError("need dim / 2 frequencies")
        self.frequencies.setflags(write=False)

    def __call__(self, sigma):
        return embed(self, sigma)


def make_embedding(kind="fourier", dim=32, scale=0.02, rng=None, max_period=10_000.0):
    half = dim // 2
    if kind == "fourier":
        if not scale > 0:
            raise ValueError("fourier scale must be positive")
        rng = np.random.default_rng(rng)
        freqs = rng.standard_normal(half)
    else:
        freqs = max_period ** (-np.arange(half) / half)
    return NoiseEmbedding(kind, dim, float(scale), np.array(freqs, dtype=float))


def embed(e: NoiseEmbedding, sigma):
    """Embed scalar or 1-D ``sigma``; output shape ``(..., dim)``."""
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma <= 0):
        raise ValueError("sigma must be positive")
    u = noise_conditioning(sigma)[..., None]
    if e.kind == "fourier":
        angles = 2.0 * math.pi * e.scale * e.frequencies * u
    else:
        angles = e.frequencies * u
    return np.concatenate([np.cos(angles), np.sin(angles)], axis=-1)


def embedding_sensitivity(e: NoiseEmbedding, sigma, rel=1e-3):
    """L2 distance between the embeddings of ``sigma`` and ``sigma * (1 + rel)``."""
    return float(np.linalg.norm(embed(e, sigma * (1.0 + rel)) - embed(e, sigma)))


@dataclass(frozen=True)
class DropoutState:
    """Seed plus draw counter; equal states give equal masks for equal shapes."""

    seed: int
    step: int = 0

    def masks(self, shapes, rate):
        rng = np.random.default_rng([self.seed, self.step])
        keep = 1.0 - rate
        return [(rng.random(s) < keep) / keep for s in shapes]


def flatten(arrays):
    return np.concatenate([np.ravel(a) for a in arrays]) if arrays else np.zeros(0)


def unflatten(flat, shapes):
    out, pos = [], 0
    for s in shapes:
        size = int(np.prod(s))
        out.append(flat[pos : pos + size].reshape(s))
        pos += size
    if pos != flat.size:
        raise ValueError(f"flat vector has {flat.size} entries, shapes need {pos}")
    return out


def _act(kind, z):
    if kind == "tanh":
        a = np.tanh(z)
        return a, 1.0 - a * a
    s = expit(z)
    return z * s, s * (1.0 + z * (1.0 - s))


@dataclass
class Tape:
    """Activations recorded by :meth:`Network.forward` for one backward pass."""

    network_id: int
    version: int | None
    params: np.ndarray
    inputs: list
    derivs: list
    masks: list


class Network:
    """MLP ``[x, embed(sigma)] -> hidden... -> out`` with optional dropout."""

    def __init__(
        self,
        in_dim,
        out_dim=None,
        hidden=(128, 128, 128),
        embedding: NoiseEmbedding | None = None,
        activation="silu",
        dropout_rate=0.0,
        rng=None,
        params=None,
    ):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        if not 0.0 <= dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")
        rng = np.random.default_rng(rng)
        self.in_dim = int(in_dim)
        self.out_dim = int(out_dim if out_dim is not None else in_dim)
        self.hidden = tuple(int(h) for h in hidden)
        self.embedding = embedding if embedding is not None else make_embedding(rng=rng)
        self.activation = activation
        self.dropout_rate = float(dropout_rate)
        self.widths = (self.in_dim + self.embedding.dim, *self.hidden, self.out_dim)
        self.shapes = []
        for fan_in, fan_out in zip(self.widths[:-1], self.widths[1:]):
            self.shapes += [(fan_in, fan_out), (fan_out,)]
        self._version = 0
        if params is None:
            params = self._init_params(rng)
        self.params = params

    @property
    def n_params(self):
        return sum(int(np.prod(s)) for s in self.shapes)

    @property
    def params(self):
        return self._params

    @params.setter
    def params(self, value):
        value = np.array(value, dtype=np.float64)
        if value.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {value.shape}")
        self._params = value
        self._version += 1

    def _init_params(self, rng):
        arrays = []
        for fan_in, fan_out in zip(self.widths[:-1], self.widths[1:]):
            arrays.append(rng.standard_normal((fan_in, fan_out)) / math.sqrt(fan_in))
            arrays.append(np.zeros(fan_out))
        return flatten(arrays)

    def layers(self, params=None):
        p = unflatten(self._params if params is None else params, self.shapes)
        return list(zip(p[0::2], p[1::2]))

    def hidden_shapes(self, batch):
        return [(batch, h) for h in self.hidden]

    def forward(self, x, sigma, train=False, drop: DropoutState | None = None, params=None):
        """Evaluate the network on a batch.

        Args:
            x: inputs, shape ``(B, in_dim)``.
            sigma: noise levels, scalar or shape ``(B,)``.
            train: apply dropout (inverted, so eval needs no rescaling).
            drop: dropout state; required when training with a nonzero rate.
            params: evaluate with this flat vector instead of ``self.params``.

        Returns:
            ``(output, tape)`` with output of shape ``(B, out_dim)``.
        """
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ValueError(f"expected input of shape (B, {self.in_dim}), got {x.shape}")
        batch = x.shape[0]
        sigma = np.broadcast_to(np.asarray(sigma, dtype=float), (batch,))
        use_drop = train and self.dropout_rate > 0
        if use_drop and drop is None:
            raise ValueError("train mode with dropout needs a DropoutState")
        masks = drop.masks(self.hidden_shapes(batch), self.dropout_rate) if use_drop else []
        own = params is None
        p = self._params if own else np.asarray(params, dtype=float)
        h = np.concatenate([x, embed(self.embedding, sigma)], axis=1)
        inputs, derivs = [], []
        layers = self.layers(p)
        for j, (W, b) in enumerate(layers):
            inputs.append(h)
            z = h @ W + b
            if j == len(layers) - 1:
                h = z
                break
            h, dz = _act(self.activation, z)
            if use_drop:
                h = h * masks[j]
            derivs.append(dz)
        tape = Tape(id(self), self._version if own else None, p, inputs, derivs, masks)
        return h, tape

    def __call__(self, x, sigma):
        return self.forward(x, sigma)[0]

    def backward(self, tape: Tape, upstream):
        """Gradient of ``sum(output * upstream)`` with respect to the flat parameters."""
        if tape.network_id != id(self):
            raise ValueError("tape was recorded by a different network")
        if tape.version is not None and tape.version != self._version:
            raise ValueError("stale tape: parameters changed since forward")
        g = np.asarray(upstream, dtype=float)
        layers = self.layers(tape.params)
        grads = [None] * (2 * len(layers))
        for j in range(len(layers) - 1, -1, -1):
            W, _ = layers[j]
            grads[2 * j] = tape.inputs[j].T @ g
            grads[2 * j + 1] = g.sum(axis=0)
            if j == 0:
                break
            g = g @ W.T
            if tape.masks:
                g = g * tape.masks[j - 1]
            g = g * tape.derivs[j - 1]
        return flatten(grads)


def grad_check(net: Network, trials=50, rng=None, batch=4, step=1e-5, pinned_drop=True):
    """Worst relative error of :meth:`Network.backward` against central differences.

    Each trial draws a batch, noise levels, an upstream vector and one
    parameter coordinate.  With dropout, the mask state is held fixed while
    differencing.
    """
    rng = np.random.default_rng(rng)
    worst = 0.0
    base = net.params.copy()
    for t in range(trials):
        x = rng.standard_normal((batch, net.in_dim))
        sigma = np.exp(rng.uniform(np.log(0.002), np.log(80.0), size=batch))
        v = rng.standard_normal((batch, net.out_dim))
        drop = DropoutState(int(rng.integers(2**31)), t) if pinned_drop else None
        train = net.dropout_rate > 0 and pinned_drop
        _, tape = net.forward(x, sigma, train=train, drop=drop)
        grad = net.backward(tape, v)
        j = int(rng.integers(net.n_params))

        def objective(p):
            return float(np.sum(net.forward(x, sigma, train=train, drop=drop, params=p)[0] * v))

        plus, minus = base.copy(), base.copy()
        plus[j] += step
        minus[j] -= step
        numeric = (objective(plus) - objective(minus)) / (2 * step)
        denom = max(abs(numeric), abs(grad[j]), 1e-7)
        worst = max(worst, abs(numeric - grad[j]) / denom)
    return worst
