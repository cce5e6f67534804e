"""Command-line interface: ``ictlab <subcommand> ...``.

Relative output paths resolve under ``$ICTLAB_OUTPUT_ROOT`` when it is set
and under the working directory otherwise.  Commands that write into a
directory hold an exclusive lock file there for their duration.

Exit codes: 0 success, 1 a check failed, 2 bad input (config, checkpoint,
arguments) or a busy output directory.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import checkpoint
from .config import ConfigError, load, parse
from .consistency import multistep_sample, nearest_index, one_step_sample
from .evaluation import evaluate_samples
from .net import Network, make_embedding, grad_check
from .schedules import (
    CURRICULUM_SHAPES,
    SAMPLER_KINDS,
    SPACINGS,
    WEIGHTING_KINDS,
    Curriculum,
    NoiseIndexSampler,
    WeightingFn,
    build_grid,
    curriculum_n,
    index_pmf,
    weight,
)
from .synthetic import sample_data

log = logging.getLogger("ictlab")

OUTPUT_ROOT_ENV = "ICTLAB_OUTPUT_ROOT"
LOCK_NAME = ".ictlab.lock"
GRADCHECK_TOLERANCE = 1e-4


class UsageError(Exception):
    pass


def output_path(path) -> Path:
    path = Path(path)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not path.is_absolute():
        return Path(root) / path
    return path


@contextlib.contextmanager
def output_lock(directory: Path):
    directory.mkdir(parents=True, exist_ok=True)
    lock = directory / LOCK_NAME
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise UsageError(f"{directory} is in use by another run (remove {lock} if stale)") from None
    try:
        os.write(fd, f"{os.getpid()}\n".encode())
        os.close(fd)
        yield directory
    finally:
        lock.unlink(missing_ok=True)


def _fmt(v):
    return f"{v:.17g}"


def _write_rows(rows, header, dest):
    fh = open(dest, "w", newline="") if dest else sys.stdout
    try:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    finally:
        if dest:
            fh.close()


def _read_samples(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"sample file not found: {path}")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.size == 0:
        raise UsageError(f"{path} holds no samples")
    return data


def _config_with_overrides(path, overrides):
    cfg = load(path)
    if overrides:
        cfg = parse("\n".join(overrides), base=cfg)
    return cfg


# -- subcommands ---------------------------------------------------------------


def cmd_train(args):
    from .train import TrainingDiverged, train

    cfg = _config_with_overrides(args.config, args.set)
    out = output_path(args.out or cfg.output.dir)
    with output_lock(out):
        try:
            report = train(cfg, out, log_every=args.log_every)
        except TrainingDiverged as exc:
            log.error("%s; state saved to %s", exc, exc.snapshot)
            return 1
        summary = {k: (float(v) if np.isscalar(v) else v) for k, v in report.eval.items()}
        (out / "report.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"wrote {out}")
    for key, value in summary.items():
        print(f"{key}: {value}")
    return 0


def _sample_indices(args, cfg):
    from .train import final_grid

    grid = build_grid(args.levels, cfg.grid.sigma_min, cfg.grid.sigma_max, cfg.grid.rho) if args.levels \
        else final_grid(cfg)
    if args.indices:
        idx = [int(v) for v in args.indices.split(",")]
    elif args.sigma_mid is not None:
        idx = [1] + [nearest_index(grid, float(s)) for s in args.sigma_mid.split(",")] + [grid.n]
        idx = sorted(set(idx))
    else:
        idx = [1, grid.n]
    return grid, idx


def cmd_sample(args):
    ck = checkpoint.load(args.checkpoint)
    cfg = ck.config
    model = ck.model
    model.network.params = ck.sampling_params()
    grid, idx = _sample_indices(args, cfg)
    rng = np.random.default_rng(args.seed)
    if idx == [1, grid.n] and not args.levels:
        x = one_step_sample(model, args.n, cfg.grid.sigma_max, rng)
    else:
        x = multistep_sample(model, grid, idx, args.n, rng)
    dest = output_path(args.out)
    with output_lock(dest.parent):
        _write_rows(([_fmt(v) for v in row] for row in x), [f"x{j}" for j in range(x.shape[1])], dest)
        sidecar = {
            "checkpoint": str(args.checkpoint),
            "checkpoint_sha256": checkpoint.file_hash(args.checkpoint),
            "seed": args.seed,
            "n": args.n,
            "levels": grid.n,
            "indices": idx,
            "sigmas": [float(s) for s in grid.sigma(idx)],
            "params": "ema" if cfg.eval.use_ema else "raw",
        }
        Path(f"{dest}.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    print(f"wrote {len(x)} samples to {dest} (indices {idx})")
    return 0


def cmd_eval(args):
    if args.config:
        cfg = load(args.config)
    elif args.checkpoint:
        cfg = checkpoint.load(args.checkpoint).config
    else:
        raise UsageError("eval needs --config or --checkpoint to know the data distribution")
    samples = _read_samples(args.samples)
    if samples.shape[1] != cfg.dim:
        raise UsageError(f"samples have {samples.shape[1]} columns, config dimension is {cfg.dim}")
    n_ref = args.reference or len(samples)
    reference = sample_data(cfg.distribution(), n_ref, np.random.default_rng(args.seed))
    report = evaluate_samples(samples, reference, args.seed, args.projections or cfg.eval.projections)
    text = report.to_json()
    if args.out:
        dest = output_path(args.out)
        with output_lock(dest.parent):
            dest.write_text(text)
    sys.stdout.write(text)
    return 0


def cmd_schedule_table(args):
    if args.levels is None:
        if args.K is None:
            raise UsageError("schedule-table needs --K (curriculum mode) or --levels (grid mode)")
        c = Curriculum(args.curriculum, args.s0, args.s1, args.K)
        ks = list(range(0, args.K, args.every))
        if ks[-1] != args.K - 1:
            ks.append(args.K - 1)
        rows = ([k, curriculum_n(c, k)] for k in ks)
        header = ["k", "N"]
    else:
        g = build_grid(args.levels, args.sigma_min, args.sigma_max, args.rho, args.spacing)
        pmf = index_pmf(NoiseIndexSampler(args.sampler, args.p_mean, args.p_std), g)
        w = weight(WeightingFn(args.weighting), g, np.arange(1, g.n))
        # the top level is never sampled as i and has no gap above it
        pmf = np.append(pmf, 0.0)
        w = np.append(w, np.nan)
        rows = ([i + 1, _fmt(g.levels[i]), _fmt(pmf[i]), _fmt(w[i])] for i in range(g.n))
        header = ["i", "sigma", "pmf", "weight"]
    dest = output_path(args.out) if args.out else None
    if dest:
        with output_lock(dest.parent):
            _write_rows(rows, header, dest)
    else:
        _write_rows(rows, header, None)
    return 0


def cmd_prop1(args):
    from .toy import prop1_checks

    checks, curves = prop1_checks(args.preset)
    width = max(len(c.claim) for c in checks)
    print(f"{'claim':<{width}}  {'computed':>14}  {'reference':>14}  {'tolerance':<24}  result")
    for c in checks:
        print(f"{c.claim:<{width}}  {c.computed:>14.6g}  {c.reference:>14.6g}  {c.tolerance:<24}  "
              f"{'PASS' if c.passed else 'FAIL'}")
    dest = output_path(args.curves)
    with output_lock(dest.parent):
        _write_rows(([s, n, _fmt(d), _fmt(v), _fmt(r)] for s, n, d, v, r in curves),
                    ["series", "n", "dsigma", "computed", "reference"], dest)
    print(f"curves: {dest}")
    return 0 if all(c.passed for c in checks) else 1


def cmd_gradcheck(args):
    if args.config:
        cfg = load(args.config)
        n = cfg.net
        dim, hidden, act, emb = cfg.dim, n.hidden, n.activation, (n.embedding, n.embedding_dim, n.fourier_scale)
        dropout = n.dropout if args.dropout is None else args.dropout
    else:
        dim, hidden, act, emb = 2, (32, 32), "silu", ("fourier", 16, 1.0)
        dropout = args.dropout or 0.0
    rng = np.random.default_rng(args.seed)
    net = Network(dim, dim, hidden, make_embedding(*emb, rng=rng), act, dropout, rng)
    worst = grad_check(net, trials=args.trials, rng=rng)
    ok = worst <= GRADCHECK_TOLERANCE
    print(f"max relative error {worst:.3e} over {args.trials} coordinates (dropout {dropout}): "
          f"{'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


# -- parser --------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="ictlab", description="Consistency training at toy scale.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a consistency model from a config file")
    t.add_argument("--config", required=True)
    t.add_argument("--out", help="output directory (default: output.dir from the config)")
    t.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key, e.g. --set train.steps=500")
    t.add_argument("--log-every", type=int, default=1000)
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sample", help="draw samples from a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--n", type=int, default=10_000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="sample CSV; a .json sidecar is written next to it")
    s.add_argument("--levels", type=int, help="grid size for multistep (default: final curriculum N)")
    how = s.add_mutually_exclusive_group()
    how.add_argument("--indices", help="comma-separated 1-based grid indices, 1 first and N last")
    how.add_argument("--sigma-mid", help="intermediate noise level(s); the nearest grid indices are used")
    s.set_defaults(func=cmd_sample)

    e = sub.add_parser("eval", help="compare a sample CSV against fresh data draws")
    e.add_argument("--samples", required=True)
    src = e.add_mutually_exclusive_group()
    src.add_argument("--config")
    src.add_argument("--checkpoint")
    e.add_argument("--seed", type=int, default=12345)
    e.add_argument("--reference", type=int, help="number of reference draws (default: sample count)")
    e.add_argument("--projections", type=int)
    e.add_argument("--out", help="write the JSON report here as well as to stdout")
    e.set_defaults(func=cmd_eval)

    st = sub.add_parser("schedule-table", help="tabulate a curriculum or a noise grid as CSV")
    st.add_argument("--curriculum", choices=CURRICULUM_SHAPES, default="exponential")
    st.add_argument("--s0", type=int, default=10)
    st.add_argument("--s1", type=int, default=1280)
    st.add_argument("--K", type=int, help="total iterations (curriculum mode)")
    st.add_argument("--every", type=int, default=1, help="row stride in k; the last k is always included")
    st.add_argument("--levels", type=int, help="grid size N (grid mode)")
    st.add_argument("--sigma-min", type=float, default=0.002)
    st.add_argument("--sigma-max", type=float, default=80.0)
    st.add_argument("--rho", type=float, default=7.0)
    st.add_argument("--spacing", choices=SPACINGS, default="rho_interpolated")
    st.add_argument("--sampler", choices=SAMPLER_KINDS, default="lognormal")
    st.add_argument("--p-mean", type=float, default=-1.1)
    st.add_argument("--p-std", type=float, default=2.0)
    st.add_argument("--weighting", choices=WEIGHTING_KINDS, default="inverse_gap")
    st.add_argument("--out", help="CSV path (default: stdout)")
    st.set_defaults(func=cmd_schedule_table)

    pr = sub.add_parser("prop1", help="check the toy-model convergence and divergence claims")
    pr.add_argument("--preset", default="paper-defaults")
    pr.add_argument("--curves", default="prop1_curves.csv")
    pr.set_defaults(func=cmd_prop1)

    g = sub.add_parser("gradcheck", help="network backward pass against finite differences")
    g.add_argument("--config", help="take the network topology from this config")
    g.add_argument("--trials", type=int, default=50)
    g.add_argument("--dropout", type=float, help="dropout rate (masks are pinned while differencing)")
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gradcheck)
    return p


def run_cli(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "prop1":
        from .toy import PRESETS

        if args.preset not in PRESETS:
            parser.error(f"unknown preset {args.preset!r}; choose from {sorted(PRESETS)}")
    try:
        return args.func(args)
    except (ConfigError, checkpoint.CheckpointError, UsageError, ValueError) as exc:
        print(f"ictlab {args.command}: error: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(run_cli())
