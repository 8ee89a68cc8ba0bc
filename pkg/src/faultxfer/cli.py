"""Command-line entry point.

Every subcommand accepts ``--seed``, ``--out`` and ``--config``; the config
file holds flat ``key=value`` lines whose keys are option names (dashes or
underscores).  Flags given on the command line win over the config file.

Exit status: 0 on success, 1 on numerical failure, 2 on usage or input errors.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from ._random import derive_seed, make_rng
from .bayes import FAULT, classify_windows
from .data import (RawTable, ScenarioSpec, build_dataset, load_csv, load_matrix, save_matrix,
                   write_csv)
from .errors import NumericalFailureError, RejectedInputError
from .estimation import FitConfig, WlsWeights, fit_ls, fit_wls
from .experiments import ExperimentResult, run_fault_study, run_mc_f1, run_transfer_curve
from .kernel import KernelConfig, TransitionMatrix, rollout


def _int_list(text):
    try:
        return [int(v) for v in str(text).replace(" ", "").split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _name_list(text):
    return [v.strip() for v in str(text).split(",") if v.strip()]


def _weights(text):
    parts = str(text).replace(" ", "").split(",")
    try:
        src, tgt = (float(v) for v in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected SOURCE,TARGET weights, got {text!r}") from None
    return WlsWeights(src, tgt)


def _optional_int(text):
    return None if str(text).lower() in ("", "none") else int(text)


def read_config(path):
    """Parse a flat ``key=value`` file; blank lines and ``#`` comments are skipped."""
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise RejectedInputError(f"cannot read config {path}: {exc.strerror}") from exc
    out = {}
    for i, line in enumerate(lines, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise RejectedInputError(f"{path}:{i}: expected key=value, got {line!r}")
        out[key.strip().replace("-", "_")] = value.strip()
    return out


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(args):
    cfg = KernelConfig(args.n, args.k, args.degree)
    W = make_rng(args.seed, 0).standard_normal((cfg.n, cfg.p))
    # keep every row's absolute sum at `scale` so bounded inputs give a bounded rollout
    W *= args.scale / np.abs(W).sum(axis=1, keepdims=True)
    A = TransitionMatrix(W, cfg)
    U = make_rng(args.seed, 1).uniform(0.0, 1.0, (args.rows, cfg.k))
    X = rollout(A, np.full(cfg.n, 0.5), U[:-1], args.noise, derive_seed(args.seed, 2))
    dep = [f"x{i}" for i in range(cfg.n)]
    ind = [f"u{j}" for j in range(cfg.k)]
    write_csv(RawTable(tuple(dep + ind), np.hstack([X, U]), np.arange(args.rows)), args.out)
    if args.matrix_out:
        save_matrix(A, args.matrix_out, dep, ind)


def cmd_fit(args):
    table = load_csv(args.data)
    dep = args.dependent
    ind = args.independent if args.independent is not None else [c for c in table.columns if c not in dep]
    cfg = KernelConfig(len(dep), len(ind), args.degree, args.window)
    target = build_dataset(table, dep, ind, cfg)
    fit_cfg = FitConfig(args.alpha, cfg)
    if args.source_data:
        source = build_dataset(load_csv(args.source_data), dep, ind, cfg)
        A = fit_wls(source, target, args.weights, fit_cfg)
    else:
        A = fit_ls(target, fit_cfg)
    save_matrix(A, args.out, dep, ind)


def cmd_classify(args):
    A, dep, ind = load_matrix(args.matrix)
    if args.dependent is not None:
        dep = args.dependent
    if args.independent is not None:
        ind = args.independent
    cfg = A.config
    if (len(dep), len(ind)) != (cfg.n, cfg.k):
        raise RejectedInputError(
            f"matrix is {cfg.n}x{cfg.p} (n={cfg.n}, k={cfg.k}) but data selects "
            f"{len(dep)} dependent and {len(ind)} independent columns"
        )
    dataset = build_dataset(load_csv(args.data), dep, ind, cfg)
    values = classify_windows(dataset, A, args.lag)
    res = ExperimentResult(
        ("seed", "window", "start_timestamp", "end_timestamp", "ratio", "decision"),
        metadata={"command": "classify", "seed": args.seed, "lag": args.lag,
                  "windows": "non-overlapping", "matrix": Path(args.matrix).name,
                  "data": Path(args.data).name},
    )
    ts = dataset.timestamps
    for i, v in enumerate(values):
        lo, hi = i * args.lag, (i + 1) * args.lag - 1
        res.add(args.seed, i, int(ts[lo]), int(ts[hi]), float(v), "fault" if v < 0 else "normal")
    res.write_csv(args.out)


def cmd_mc_f1(args):
    run_mc_f1(args.trials, args.samples, args.lags, args.sigma, args.seed, args.noise).write_csv(args.out)


def _scenario(args, **extra):
    return ScenarioSpec(KernelConfig(args.n, args.k, args.degree), matrix_seed=args.matrix_seed,
                        drift=args.drift, noise=args.noise, n_source=args.n_source,
                        n_target=args.n_target, inputs=args.inputs, **extra)


def cmd_transfer_curve(args):
    res = run_transfer_curve(
        _scenario(args), args.counts, args.resamples, args.model, args.weights, args.alpha,
        args.seed, args.train_fraction, args.learn_rate, args.source_epochs,
        args.target_epochs, args.batch,
    )
    res.write_csv(args.out)


def cmd_fault_study(args):
    spec = _scenario(args, n_fault=args.n_fault, fault_sigma=args.fault_sigma)
    res = run_fault_study(spec, args.window, args.seed, args.alpha, args.weights,
                          args.fit_samples, args.transfer_samples, args.learn_rate, args.epochs)
    res.write_csv(args.out)


# ---------------------------------------------------------------------------
# parser


def _scenario_options(p, drift, noise, n_source, n_target, inputs):
    p.add_argument("--n", type=int, default=1, help="dependent variables")
    p.add_argument("--k", type=int, default=7, help="independent variables")
    p.add_argument("--degree", type=int, default=2)
    p.add_argument("--matrix-seed", type=_optional_int, default=None,
                   help="seed for the building matrices (defaults to --seed)")
    p.add_argument("--drift", type=float, default=drift, help="building-2 drift scale")
    p.add_argument("--noise", type=float, default=noise)
    p.add_argument("--n-source", type=int, default=n_source)
    p.add_argument("--n-target", type=int, default=n_target)
    p.add_argument("--inputs", choices=("seasonal", "iid"), default=inputs)
    p.add_argument("--weights", type=_weights, default="0.01,10", help="SOURCE,TARGET WLS weights")
    p.add_argument("--alpha", type=float, default=0.5, help="ridge penalty")


def build_parser():
    parser = argparse.ArgumentParser(prog="faultxfer", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command")

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", help="output file")
        p.add_argument("--config", help="flat key=value option file")
        p.set_defaults(func=func)
        return p

    p = add("simulate", cmd_simulate, "simulate a random stable kernel model to CSV")
    p.add_argument("--rows", type=int, default=500)
    p.add_argument("--n", type=int, default=1)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--degree", type=int, default=2)
    p.add_argument("--noise", type=float, default=0.01)
    p.add_argument("--scale", type=float, default=0.5, help="absolute row sum of the matrix")
    p.add_argument("--matrix-out", help="also write the generating matrix here")

    p = add("fit", cmd_fit, "fit a transition matrix by ridge LS, or WLS with --source-data")
    p.add_argument("--data")
    p.add_argument("--dependent", type=_name_list)
    p.add_argument("--independent", type=_name_list, default=None,
                   help="defaults to every other column")
    p.add_argument("--degree", type=int, default=2)
    p.add_argument("--window", type=int, default=1)
    p.add_argument("--alpha", type=float, default=0.0)
    p.add_argument("--source-data", help="source-building CSV for a WLS transfer fit")
    p.add_argument("--weights", type=_weights, default="0.01,10")

    p = add("classify", cmd_classify, "per-window normal/fault decisions from a matrix file")
    p.add_argument("--matrix")
    p.add_argument("--data")
    p.add_argument("--lag", type=int, default=1, help="samples per window")
    p.add_argument("--dependent", type=_name_list, default=None)
    p.add_argument("--independent", type=_name_list, default=None)

    p = add("mc-f1", cmd_mc_f1, "Monte Carlo F1 versus matrix divergence")
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--lags", type=_int_list, default="1,5,10")
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--noise", type=float, default=1.0)

    p = add("transfer-curve", cmd_transfer_curve, "validation MSE versus target sample count")
    _scenario_options(p, 0.1, 0.1, 4000, 2000, "seasonal")
    p.add_argument("--counts", type=_int_list, default="24,48,72,168")
    p.add_argument("--resamples", type=int, default=100)
    p.add_argument("--model", choices=("linear", "mlp"), default="linear")
    p.add_argument("--train-fraction", type=float, default=0.5)
    p.add_argument("--learn-rate", type=float, default=0.05)
    p.add_argument("--source-epochs", type=int, default=50)
    p.add_argument("--target-epochs", type=int, default=100)
    p.add_argument("--batch", type=int, default=32)

    p = add("fault-study", cmd_fault_study, "logistic fault classifier before and after transfer")
    _scenario_options(p, 0.05, 0.5, 44000, 40336, "iid")
    p.add_argument("--n-fault", type=int, default=40000)
    p.add_argument("--fault-sigma", type=float, default=1.0)
    p.add_argument("--window", type=int, default=10)
    p.add_argument("--fit-samples", type=int, default=4000)
    p.add_argument("--transfer-samples", type=int, default=336)
    p.add_argument("--learn-rate", type=float, default=0.5)
    p.add_argument("--epochs", type=int, default=2000)
    return parser, sub.choices


REQUIRED = {"fit": ("data", "dependent"), "classify": ("matrix", "data")}


def parse_args(argv=None):
    parser, subparsers = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        sp = subparsers[args.command]
        known = {a.dest for a in sp._actions} - {"help", "config", "func"}
        try:
            values = read_config(args.config)
        except RejectedInputError as exc:
            sp.error(str(exc))
        unknown = sorted(set(values) - known)
        if unknown:
            sp.error(f"unknown config keys: {', '.join(unknown)}")
        # string defaults go through each option's type; explicit flags still win
        sp.set_defaults(**values)
        args = parser.parse_args(argv)
    for name in ("out",) + REQUIRED.get(args.command, ()):
        if getattr(args, name) in (None, []):
            flag = "--" + name.replace("_", "-")
            subparsers[args.command].error(f"{flag} is required (flag or config)")
    return args


def main(argv=None) -> int:
    args = parse_args(argv)
    try:
        args.func(args)
    except NumericalFailureError as exc:
        print(f"faultxfer {args.command}: numerical failure: {exc}", file=sys.stderr)
        return 1
    except (RejectedInputError, OSError) as exc:
        print(f"faultxfer {args.command}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
