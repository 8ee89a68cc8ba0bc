"""Reproduction harnesses emitting long-form result tables.

Every row carries the base seed; together with the trial/resample index
that is enough to rerun the row in isolation (see the ``*_trial``
helpers).
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ._random import derive_seed, make_rng
from .bayes import (FAULT, NORMAL, feature_matrix, loglik_ratios, predict_logistic_batch,
                    train_logistic, window_sums)
from .data import ScenarioSpec, generate_scenario
from .errors import RejectedInputError
from .estimation import FitConfig, WlsWeights, fit_ls, fit_wls, mse
from .kernel import TransitionMatrix, perturb_matrix, simulate
from .mlp import mlp_fit, mlp_loss

MC_MATRIX = np.diag([0.9, -0.4])
DEFAULT_WEIGHTS = WlsWeights(0.01, 10.0)


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return "" if v is None else str(v)


@dataclass
class ExperimentResult:
    """Long-form table: one metric value per row, plus run metadata."""

    columns: tuple
    rows: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def add(self, *values):
        if len(values) != len(self.columns):
            raise ValueError(f"row has {len(values)} values, expected {len(self.columns)}")
        self.rows.append(tuple(values))

    def records(self):
        return [dict(zip(self.columns, r)) for r in self.rows]

    def select(self, **match):
        return [r for r in self.records() if all(r[k] == v for k, v in match.items())]

    def to_csv(self) -> str:
        buf = io.StringIO()
        for k in sorted(self.metadata):
            buf.write(f"# {k}={_fmt(self.metadata[k])}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for r in self.rows:
            w.writerow([_fmt(v) for v in r])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_csv())


def precision_recall_f1(y_true, y_pred):
    """Scores with fault (1) as the positive class; empty denominators give 0."""
    y_true = np.asarray(y_true).astype(bool)
    y_pred = np.asarray(y_pred).astype(bool)
    tp = int(np.sum(y_true & y_pred))
    fp = int(np.sum(~y_true & y_pred))
    fn = int(np.sum(y_true & ~y_pred))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


# ---------------------------------------------------------------------------
# Monte Carlo F1 versus divergence


def mc_f1_trial(seed: int, trial: int, samples: int, lags: Sequence[int],
                sigma: float = 1.0, noise: float = 1.0):
    """One Monte Carlo realization.

    Draws ``B`` around the fixed diagonal matrix, simulates ``samples``
    pairs under each matrix with standard normal inputs, and scores
    non-overlapping windows of each lag.  Returns ``(||A - B||_F,
    {lag: (precision, recall, f1)})``.
    """
    A = TransitionMatrix(MC_MATRIX)
    B = perturb_matrix(A, sigma, derive_seed(seed, trial, 0))
    rng = make_rng(seed, trial, 1)
    SA = rng.standard_normal((2, samples))
    SB = rng.standard_normal((2, samples))
    ra = loglik_ratios(simulate(A, SA, noise, derive_seed(seed, trial, 2)), A)
    rb = loglik_ratios(simulate(B, SB, noise, derive_seed(seed, trial, 3)), A)
    scores = {}
    for lag in lags:
        va = window_sums(ra, lag)
        vb = window_sums(rb, lag)
        y = np.r_[np.zeros(va.size), np.ones(vb.size)]
        scores[lag] = precision_recall_f1(y, np.r_[va, vb] < 0)
    return float(np.linalg.norm(B.entries - A.entries)), scores


def run_mc_f1(trials: int = 200, samples: int = 1000, lags: Sequence[int] = (1, 5, 10),
              sigma: float = 1.0, seed: int = 0, noise: float = 1.0) -> ExperimentResult:
    lags = [int(l) for l in lags]
    if trials < 1 or not lags or min(lags) < 1 or samples < max(lags):
        raise RejectedInputError("need trials >= 1, lags >= 1 and samples >= max(lags)")
    res = ExperimentResult(
        ("seed", "trial", "frobenius", "lag", "metric", "value"),
        metadata={"command": "mc-f1", "seed": seed, "trials": trials, "samples": samples,
                  "lags": " ".join(map(str, lags)), "sigma": sigma, "noise": noise,
                  "windows": "non-overlapping", "positive_class": "fault"},
    )
    for trial in range(trials):
        frob, scores = mc_f1_trial(seed, trial, samples, lags, sigma, noise)
        for lag in lags:
            for name, value in zip(("precision", "recall", "f1"), scores[lag]):
                res.add(seed, trial, frob, lag, name, value)
    return res


def mean_metric_by_lag(result: ExperimentResult, metric: str = "f1", min_frobenius: float = 0.0):
    out = {}
    for r in result.records():
        if r["metric"] == metric and r["frobenius"] >= min_frobenius:
            out.setdefault(r["lag"], []).append(r["value"])
    return {lag: float(np.mean(v)) for lag, v in sorted(out.items())}


# ---------------------------------------------------------------------------
# Transfer curves


TRANSFER_SPEC = ScenarioSpec(n_source=4000, n_target=2000, drift=0.1, noise=0.1, inputs="seasonal")


def _split(dataset, fraction):
    cut = math.ceil(fraction * dataset.T)
    if not 0 < cut < dataset.T:
        raise RejectedInputError(f"cannot split {dataset.T} samples at fraction {fraction}")
    return dataset[:cut], dataset[cut:]


def run_transfer_curve(spec: ScenarioSpec = TRANSFER_SPEC, counts: Sequence[int] = (24, 48, 72, 168),
                       resamples: int = 100, model: str = "linear",
                       weights: WlsWeights = DEFAULT_WEIGHTS, alpha: float = 0.5, seed: int = 0,
                       train_fraction: float = 0.5, learn_rate: float = 0.05,
                       source_epochs: int = 50, target_epochs: int = 100,
                       batch: int = 32) -> ExperimentResult:
    """Validation MSE of target-building fits versus consecutive training hours.

    For every count and resample a contiguous window of target training
    data is drawn; the ``transfer`` arm fits it together with the full
    source data (WLS, or SGD warm-started from the source network) and the
    ``scratch`` arm fits it alone.  A ``baseline`` row scores a scratch fit
    on the full target training split.
    """
    counts = [int(c) for c in counts]
    if counts != sorted(counts) or not counts or counts[0] < 1:
        raise RejectedInputError("counts must be positive and sorted ascending")
    if model not in ("linear", "mlp"):
        raise RejectedInputError(f"model must be 'linear' or 'mlp', got {model!r}")
    sc = generate_scenario(spec, seed)
    source = sc.building1
    train, valid = _split(sc.building2, train_fraction)
    if counts[-1] > train.T:
        raise RejectedInputError(f"largest count {counts[-1]} exceeds {train.T} training samples")
    cfg = FitConfig(alpha, spec.kernel)
    res = ExperimentResult(
        ("seed", "model", "count", "resample", "arm", "metric", "value"),
        metadata={"command": "transfer-curve", "seed": seed, "model": model,
                  "counts": " ".join(map(str, counts)), "resamples": resamples,
                  "source_weight": weights.source_weight, "target_weight": weights.target_weight,
                  "alpha": alpha, "train_fraction": train_fraction, "drift": spec.drift,
                  "noise": spec.noise, "inputs": spec.inputs, "n_source": spec.n_source,
                  "n_target": spec.n_target, "degree": spec.kernel.d, "n": spec.kernel.n,
                  "k": spec.kernel.k},
    )
    if model == "mlp":
        res.metadata.update(learn_rate=learn_rate, source_epochs=source_epochs,
                            target_epochs=target_epochs, batch=batch)
        source_net = mlp_fit(source, None, learn_rate, source_epochs, batch, derive_seed(seed, 8))
        base = mlp_fit(train, None, learn_rate, source_epochs, batch, derive_seed(seed, 9))
        res.add(seed, model, train.T, -1, "baseline", "mse", mlp_loss(base, valid))
    else:
        res.add(seed, model, train.T, -1, "baseline", "mse", mse(fit_ls(train, cfg), valid))

    for count in counts:
        for r in range(resamples):
            start = int(make_rng(seed, 7, count, r).integers(0, train.T - count + 1))
            window = train[start:start + count]
            if model == "mlp":
                s = derive_seed(seed, 10, count, r)
                warm = mlp_fit(window, source_net, learn_rate, target_epochs, batch, s)
                cold = mlp_fit(window, None, learn_rate, target_epochs, batch, s)
                scores = (mlp_loss(warm, valid), mlp_loss(cold, valid))
            else:
                scores = (mse(fit_wls(source, window, weights, cfg), valid),
                          mse(fit_ls(window, cfg), valid))
            res.add(seed, model, count, r, "transfer", "mse", scores[0])
            res.add(seed, model, count, r, "scratch", "mse", scores[1])
    return res


def mean_mse_by_count(result: ExperimentResult, arm: str):
    out = {}
    for r in result.records():
        if r["arm"] == arm and r["metric"] == "mse":
            out.setdefault(r["count"], []).append(r["value"])
    return {c: float(np.mean(v)) for c, v in sorted(out.items())}


# ---------------------------------------------------------------------------
# Logistic fault study


FAULT_SPEC = ScenarioSpec(n_source=44000, n_target=40336, n_fault=40000, drift=0.05,
                          noise=0.5, fault_sigma=1.0, inputs="iid")


def _classify_phase(A, normal, fault, window, learn_rate, epochs):
    fn = window_sums(feature_matrix(normal, A), window)
    ff = window_sums(feature_matrix(fault, A), window)
    m = min(len(fn), len(ff))
    if m < 2:
        raise RejectedInputError(f"need at least two windows per class, got {m}")
    fn, ff = fn[:m], ff[:m]
    # alternate windows between train and validation so both see the same regimes
    F_tr = np.vstack([fn[0::2], ff[0::2]])
    y_tr = np.r_[np.zeros(len(fn[0::2])), np.ones(len(ff[0::2]))]
    model = train_logistic(F_tr, y_tr, learn_rate, epochs)
    F_va = np.vstack([fn[1::2], ff[1::2]])
    y_va = np.r_[np.zeros(len(fn[1::2])), np.ones(len(ff[1::2]))]
    prob, pred = predict_logistic_batch(model, F_va)
    n_out = normal.n
    llr = 0.5 * (F_va[:, 1] - F_va[:, 0]) - 0.5 * n_out * F_va[:, 2]
    return model, y_va, prob, pred, (llr < 0).astype(int)


def run_fault_study(spec: ScenarioSpec = FAULT_SPEC, window: int = 10, seed: int = 0,
                    alpha: float = 0.5, weights: WlsWeights = DEFAULT_WEIGHTS,
                    fit_samples: int = 4000, transfer_samples: int = 336,
                    learn_rate: float = 0.5, epochs: int = 2000) -> ExperimentResult:
    """Train the logistic classifier on one building, then again after WLS transfer.

    ``source`` phase: the matrix is fit on the first ``fit_samples``
    normal samples of building 1; the remaining normal samples and the
    fault samples are cut into non-overlapping windows with summed
    features.  ``transfer`` phase: the matrix for building 2 is the WLS fit
    of those building-1 samples with ``transfer_samples`` building-2
    samples, and the classifier is retrained on building-2 windows.

    Windows alternate between logistic training and validation.  Per
    validation window the table holds the +1 (fault) / -1 (normal)
    prediction and probability; summary rows hold precision, recall and F1
    for the logistic layer and for the raw log-likelihood-ratio sign.
    """
    if window < 1:
        raise RejectedInputError(f"window must be >= 1, got {window}")
    sc = generate_scenario(spec, seed)
    b1 = sc.building1
    if fit_samples >= b1.T or transfer_samples >= sc.building2.T:
        raise RejectedInputError("fit/transfer sample counts leave no data for the classifier")
    cfg = FitConfig(alpha, spec.kernel)
    A1_hat = fit_ls(b1[:fit_samples], cfg)
    A2_hat = fit_wls(b1[:fit_samples], sc.building2[:transfer_samples], weights, cfg)
    phases = [
        ("source", A1_hat, b1[fit_samples:], sc.building1_fault),
        ("transfer", A2_hat, sc.building2[transfer_samples:], sc.building2_fault),
    ]
    res = ExperimentResult(
        ("seed", "phase", "window", "label", "metric", "value"),
        metadata={"command": "fault-study", "seed": seed, "window": window,
                  "windows": "non-overlapping; alternate windows train/validate",
                  "trace": "validation windows in time order, normal then fault; +1 fault, -1 normal",
                  "alpha": alpha, "source_weight": weights.source_weight,
                  "target_weight": weights.target_weight, "fit_samples": fit_samples,
                  "transfer_samples": transfer_samples, "drift": spec.drift,
                  "fault_sigma": spec.fault_sigma, "noise": spec.noise, "inputs": spec.inputs,
                  "degree": spec.kernel.d, "n": spec.kernel.n, "k": spec.kernel.k},
    )
    for phase, A_hat, normal, fault in phases:
        model, y, prob, pred, llr_pred = _classify_phase(A_hat, normal, fault, window, learn_rate, epochs)
        for i in range(len(y)):
            label = FAULT if y[i] else NORMAL
            res.add(seed, phase, i, label, "prediction", 1 if pred[i] else -1)
            res.add(seed, phase, i, label, "probability", float(prob[i]))
        for prefix, p in (("", pred), ("llr_", llr_pred)):
            for name, value in zip(("precision", "recall", "f1"), precision_recall_f1(y, p)):
                res.add(seed, phase, None, None, prefix + name, value)
    return res


def phase_scores(result: ExperimentResult, phase: str, prefix: str = ""):
    recs = {r["metric"]: r["value"] for r in result.select(phase=phase, window=None)}
    return recs[prefix + "precision"], recs[prefix + "recall"]
