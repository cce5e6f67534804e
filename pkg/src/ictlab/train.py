"""Consistency training (CT) and exact-score consistency matching (CM).

Both objectives pair a student evaluation at ``sigma_{i+1}`` with a
stop-gradient teacher evaluation at ``sigma_i``.  They differ only in how the
teacher input is built: CT reuses the same Gaussian draw ``z``
(``x + sigma_i z``), CM takes one reverse Euler step of the PF-ODE with the
exact score.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .consistency import ConsistencyModel, multistep_sample, nearest_index, one_step_sample
from .metrics import Metric, metric_value_grad
from .net import DropoutState, Network, make_embedding
from .optim import Moments, ema_update, optimizer_step
from .schedules import NoiseGrid, WeightingFn, cached_grid, curriculum_n, sample_index, weight
from .synthetic import SyntheticDistribution, perturbed_score, sample_data

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, message, state=None, snapshot=None):
        super().__init__(message)
        self.state = state
        self.snapshot = snapshot


def ct_inputs(grid: NoiseGrid, x, z, i):
    """Student and teacher inputs sharing one noise draw ``z``."""
    i = np.asarray(i)
    s_hi, s_lo = grid.sigma(i + 1), grid.sigma(i)
    return x + s_hi[:, None] * z, s_hi, x + s_lo[:, None] * z, s_lo


def cm_inputs(grid: NoiseGrid, dist: SyntheticDistribution, x, z, i):
    """Student input plus its one-step reverse-Euler image under the exact score."""
    i = np.asarray(i)
    s_hi, s_lo = grid.sigma(i + 1), grid.sigma(i)
    x_hi = x + s_hi[:, None] * z
    score = perturbed_score(dist, x_hi, s_hi)
    x_lo = x_hi - ((s_lo - s_hi) * s_hi)[:, None] * score
    return x_hi, s_hi, x_lo, s_lo


def consistency_loss_and_grad(model, params, teacher_params, x_student, s_student, x_teacher,
                              s_teacher, lam, metric: Metric, drop=None, trace=None):
    """Batch mean of ``lam * d(f(x_student), stopgrad f_teacher(x_teacher))`` and its gradient.

    The student and teacher passes see the same dropout masks.  ``trace``, if
    a dict, receives the inputs and both tapes.
    """
    train = drop is not None
    out_s, tape_s = model.forward(x_student, s_student, train, drop, params)
    out_t, tape_t = model.forward(x_teacher, s_teacher, train, drop, teacher_params)
    values, grad_out = metric_value_grad(metric, out_s, out_t)
    batch = x_student.shape[0]
    lam = np.broadcast_to(np.asarray(lam, dtype=float), (batch,))
    loss = float(np.mean(lam * values))
    grad = model.backward(tape_s, (lam / batch)[:, None] * grad_out)
    if trace is not None:
        trace.update(x_student=x_student, s_student=s_student, x_teacher=x_teacher,
                     s_teacher=s_teacher, tape_student=tape_s, tape_teacher=tape_t)
    return loss, grad


def ct_loss_and_grad(model, params, teacher_params, grid, x, z, i, metric, weighting: WeightingFn,
                     drop=None, trace=None):
    xs, ss, xt, st = ct_inputs(grid, x, z, i)
    lam = weight(weighting, grid, i)
    return consistency_loss_and_grad(model, params, teacher_params, xs, ss, xt, st, lam, metric, drop, trace)


def cm_loss_exact_and_grad(model, params, teacher_params, grid, x, z, i, metric, weighting: WeightingFn,
                           dist: SyntheticDistribution, drop=None, trace=None):
    if not isinstance(dist, SyntheticDistribution):
        raise ValueError("exact-score CM needs a distribution with an analytic score")
    xs, ss, xt, st = cm_inputs(grid, dist, x, z, i)
    lam = weight(weighting, grid, i)
    return consistency_loss_and_grad(model, params, teacher_params, xs, ss, xt, st, lam, metric, drop, trace)


def teacher_ema_rate(rule, mu0, s0, n_levels):
    """Teacher decay at the current discretization: 0, or ``exp(s0 log mu0 / N)``."""
    if rule == "zero_ema":
        return 0.0
    return math.exp(s0 * math.log(mu0) / n_levels)


def build_model(cfg: ExperimentConfig, rng) -> ConsistencyModel:
    n = cfg.net
    emb = make_embedding(n.embedding, n.embedding_dim, n.fourier_scale, rng)
    net = Network(cfg.dim, cfg.dim, n.hidden, emb, n.activation, n.dropout, rng)
    g = cfg.grid
    return ConsistencyModel(net, g.sigma_min, g.sigma_max, g.sigma_data)


@dataclass
class TrainState:
    model: ConsistencyModel
    ema_params: np.ndarray
    teacher_params: np.ndarray
    moments: Moments
    k: int
    rng_data: np.random.Generator
    rng_noise: np.random.Generator
    rng_index: np.random.Generator
    dropout_seed: int

    @property
    def params(self):
        return self.model.network.params


def init_state(cfg: ExperimentConfig) -> TrainState:
    seeds = np.random.SeedSequence(cfg.train.seed).spawn(5)
    model = build_model(cfg, np.random.default_rng(seeds[0]))
    params = model.network.params
    dropout_seed = int(seeds[4].generate_state(1)[0])
    return TrainState(
        model=model,
        ema_params=params.copy(),
        teacher_params=params,
        moments=Moments.zeros(params.size),
        k=0,
        rng_data=np.random.default_rng(seeds[1]),
        rng_noise=np.random.default_rng(seeds[2]),
        rng_index=np.random.default_rng(seeds[3]),
        dropout_seed=dropout_seed,
    )


@dataclass
class TrainReport:
    state: TrainState
    steps: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    n_levels: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    losses: np.ndarray = field(default_factory=lambda: np.zeros(0))
    update_norms: np.ndarray = field(default_factory=lambda: np.zeros(0))
    lrs: np.ndarray = field(default_factory=lambda: np.zeros(0))
    checkpoint_path: Path | None = None
    eval: dict = field(default_factory=dict)


def train_step(state: TrainState, cfg: ExperimentConfig, dist, curriculum, sampler, weighting, metric):
    """One optimization step; returns ``(n_levels, loss, update_norm)``."""
    n_levels = curriculum_n(curriculum, state.k)
    g = cfg.grid
    grid = cached_grid(n_levels, g.sigma_min, g.sigma_max, g.rho)
    batch = cfg.train.batch_size
    x = sample_data(dist, batch, state.rng_data)
    z = state.rng_noise.standard_normal((batch, cfg.dim))
    i = sample_index(sampler, grid, state.rng_index, size=batch)
    drop = DropoutState(state.dropout_seed, state.k)
    params = state.params
    if cfg.loss.objective == "ct":
        loss, grad = ct_loss_and_grad(state.model, params, state.teacher_params, grid, x, z, i,
                                      metric, weighting, drop)
    else:
        loss, grad = cm_loss_exact_and_grad(state.model, params, state.teacher_params, grid, x, z, i,
                                            metric, weighting, dist, drop)
    if not (math.isfinite(loss) and np.all(np.isfinite(grad))):
        raise TrainingDiverged(f"non-finite loss {loss} at step {state.k} (N={n_levels})", state)
    delta, state.moments = optimizer_step(state.moments, grad, cfg.train.lr)
    new_params = params + delta
    state.model.network.params = new_params
    new_params = state.model.network.params
    state.ema_params = ema_update(state.ema_params, new_params, cfg.train.student_ema)
    mu = teacher_ema_rate(cfg.teacher.rule, cfg.teacher.mu0, cfg.curriculum.s0, n_levels)
    state.teacher_params = new_params if mu == 0.0 else ema_update(state.teacher_params, new_params, mu)
    state.k += 1
    return n_levels, loss, float(np.linalg.norm(delta))


def train(cfg: ExperimentConfig, out_dir=None, log_every=0) -> TrainReport:
    """Run ``cfg.train.steps`` CT (or exact-score CM) steps.

    With ``out_dir`` set, writes ``train_log.csv``, ``config.cfg`` and
    ``checkpoint.bin`` there; on divergence writes ``diverged.bin`` and
    re-raises :class:`TrainingDiverged`.
    """
    from . import checkpoint

    state = init_state(cfg)
    steps = cfg.train.steps
    dist = cfg.distribution()
    curriculum = cfg.curriculum_obj()
    sampler, weighting, metric = cfg.sampler_obj(), cfg.weighting_obj(), cfg.metric_obj()
    n_arr = np.zeros(steps, dtype=int)
    losses, norms = np.zeros(steps), np.zeros(steps)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    try:
        for k in range(steps):
            n_arr[k], losses[k], norms[k] = train_step(state, cfg, dist, curriculum, sampler, weighting, metric)
            if log_every and (k + 1) % log_every == 0:
                log.info("step %d N=%d loss=%.6g update=%.3g", k + 1, n_arr[k], losses[k], norms[k])
    except TrainingDiverged as exc:
        if out is not None:
            exc.snapshot = out / "diverged.bin"
            checkpoint.save(exc.snapshot, state, cfg)
        raise
    report = TrainReport(state, np.arange(steps), n_arr, losses, norms, np.full(steps, cfg.train.lr))
    if cfg.eval.samples > 0 and steps > 0:
        report.eval = evaluate_state(state, cfg)
    if out is not None:
        from .config import render

        (out / "config.cfg").write_text(render(cfg))
        write_log(out / "train_log.csv", report)
        report.checkpoint_path = out / "checkpoint.bin"
        checkpoint.save(report.checkpoint_path, state, cfg)
    return report


def write_log(path, report: TrainReport):
    with open(path, "w") as fh:
        fh.write("step,N,loss,update_norm,lr\n")
        for row in zip(report.steps, report.n_levels, report.losses, report.update_norms, report.lrs):
            fh.write(f"{row[0]},{row[1]},{row[2]:.17g},{row[3]:.17g},{row[4]:.17g}\n")


def sampling_model(state: TrainState, cfg: ExperimentConfig) -> ConsistencyModel:
    """Copy of the model carrying the parameters used for sampling (EMA or raw)."""
    net = state.model.network
    params = state.ema_params if cfg.eval.use_ema else net.params
    clone = Network(net.in_dim, net.out_dim, net.hidden, net.embedding, net.activation,
                    net.dropout_rate, params=params)
    m = state.model
    return ConsistencyModel(clone, m.sigma_min, m.sigma_max, m.sigma_data)


def final_grid(cfg: ExperimentConfig):
    n = curriculum_n(cfg.curriculum_obj(), max(cfg.train.steps - 1, 0))
    g = cfg.grid
    return cached_grid(n, g.sigma_min, g.sigma_max, g.rho)


def evaluate_state(state: TrainState, cfg: ExperimentConfig, seed=None):
    """One-step and two-step sample quality against fresh data draws."""
    from .evaluation import energy_distance, sliced_wasserstein

    seed = cfg.train.seed + 1 if seed is None else seed
    rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(4)]
    model = sampling_model(state, cfg)
    n = cfg.eval.samples
    reference = sample_data(cfg.distribution(), n, rngs[0])
    one = one_step_sample(model, n, cfg.grid.sigma_max, rngs[1])
    result = {
        "one_step_sw": sliced_wasserstein(one, reference, cfg.eval.projections, np.random.default_rng(seed)),
        "one_step_energy": energy_distance(one, reference),
        "one_step_mean": one.mean(axis=0).tolist(),
    }
    grid = final_grid(cfg)
    if grid.n >= 3:
        mid = nearest_index(grid, cfg.eval.two_step_sigma)
        two = multistep_sample(model, grid, (1, mid, grid.n), n, rngs[2])
        result["two_step_sw"] = sliced_wasserstein(two, reference, cfg.eval.projections,
                                                   np.random.default_rng(seed))
        result["two_step_energy"] = energy_distance(two, reference)
        result["two_step_sigma"] = float(grid.sigma(mid))
    return result
