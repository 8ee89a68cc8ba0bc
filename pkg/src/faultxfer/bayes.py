"""Log-likelihood-ratio fault test under a matrix-normal prior on the fault matrix.

Normal operation: ``x = A s + eps`` with ``eps ~ N(0, I)``.  Fault: ``x = B s + eps``
with ``B ~ MN(A, I, I)``.  Integrating ``B`` out gives ``x ~ N(A s, (1 + s's) I)``;
:func:`loglik_fault` reaches that value through the completed-square trace form
with ``C = s s' + I`` and ``D = x s' + A``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit, logsumexp

from ._random import make_rng
from .errors import NumericalFailureError, RejectedInputError
from .kernel import Dataset, as_matrix

LOG_2PI = math.log(2.0 * math.pi)

NORMAL = 0
FAULT = 1


def _check(x, s, A):
    W = as_matrix(A)
    x = np.asarray(x, dtype=float).ravel()
    s = np.asarray(s, dtype=float).ravel()
    if W.shape != (x.size, s.size):
        raise RejectedInputError(
            f"matrix is {W.shape[0]}x{W.shape[1]} but x has length {x.size} "
            f"and s has length {s.size}"
        )
    return x, s, W


def _check_batch(S, X, A):
    W = as_matrix(A)
    S = np.asarray(S, dtype=float)
    X = np.asarray(X, dtype=float)
    if S.ndim != 2 or X.ndim != 2 or S.shape[1] != X.shape[1]:
        raise RejectedInputError(f"incompatible batch shapes S{S.shape} X{X.shape}")
    if W.shape != (X.shape[0], S.shape[0]):
        raise RejectedInputError(
            f"matrix is {W.shape[0]}x{W.shape[1]} but data has n={X.shape[0]}, p={S.shape[0]}"
        )
    return S, X, W


# ---------------------------------------------------------------------------
# Rank-one identities for C = I + s s'


def rank_one_inverse(s) -> np.ndarray:
    """``(I + s s')^{-1} = I - s s' / (1 + s's)`` (Sherman-Morrison)."""
    s = np.asarray(s, dtype=float).ravel()
    return np.eye(s.size) - np.outer(s, s) / (1.0 + s @ s)


def rank_one_logdet(s) -> float:
    """``log|I + s s'| = log(1 + s's)`` (matrix determinant lemma)."""
    s = np.asarray(s, dtype=float).ravel()
    return math.log1p(float(s @ s))


# ---------------------------------------------------------------------------
# Likelihoods


def loglik_normal(x, s, A) -> float:
    """``log N(x; A s, I)``."""
    x, s, W = _check(x, s, A)
    r = x - W @ s
    return -0.5 * x.size * LOG_2PI - 0.5 * float(r @ r)


def loglik_fault_marginal(x, s, A) -> float:
    """Closed-form marginal ``log N(x; A s, (1 + s's) I)``."""
    x, s, W = _check(x, s, A)
    r = x - W @ s
    v = 1.0 + float(s @ s)
    return -0.5 * x.size * (LOG_2PI + math.log(v)) - 0.5 * float(r @ r) / v


@dataclass(frozen=True)
class ClassifierFeatures:
    """Separated terms of the per-sample log-likelihood ratio.

    residual_trace
        ``Tr[(x - As)'(x - As)]``
    cross_trace
        ``Tr[x x' + A A' - (D C^{-1})' D]``
    logdet_term
        ``log|C^{-1}| = -log(1 + s's)``
    """

    residual_trace: float
    cross_trace: float
    logdet_term: float

    def as_array(self) -> np.ndarray:
        return np.array([self.residual_trace, self.cross_trace, self.logdet_term])


def _coldot(P, Q):
    """Column-wise inner products, accumulated row by row.

    A fixed left-to-right order keeps every column's value independent of
    how many other columns share the batch.
    """
    acc = P[0] * Q[0]
    for i in range(1, P.shape[0]):
        acc = acc + P[i] * Q[i]
    return acc


def _matcols(W, S):
    """``W @ S`` with the same batch-independent accumulation order."""
    acc = W[:, :1] * S[0]
    for j in range(1, W.shape[1]):
        acc = acc + W[:, j:j + 1] * S[j]
    return acc


def _trace_terms(S, X, W):
    """Batched (residual, cross, logdet) for columns of ``S``/``X``.

    ``Tr[(D C^{-1})' D] = ||D||_F^2 - ||D s||^2 / (1 + s's)`` with
    ``||D||_F^2 = |x|^2 s's + 2 x'As + ||A||_F^2`` and ``D s = x s's + As``.
    """
    AS = _matcols(W, S)
    ss = _coldot(S, S)
    xx = _coldot(X, X)
    R = X - AS
    residual = _coldot(R, R)
    aa = math.fsum((W * W).ravel())
    xas = _coldot(X, AS)
    Ds = X * ss + AS
    d_frob = xx * ss + 2.0 * xas + aa
    quad = d_frob - _coldot(Ds, Ds) / (1.0 + ss)
    cross = xx + (aa - quad)
    logdet = -np.log1p(ss)
    return residual, cross, logdet


def extract_features(s, x, A) -> ClassifierFeatures:
    x, s, W = _check(x, s, A)
    r, c, l = _trace_terms(s[:, None], x[:, None], W)
    return ClassifierFeatures(float(r[0]), float(c[0]), float(l[0]))


def feature_matrix(dataset: Dataset, A) -> np.ndarray:
    """``T x 3`` array of per-sample (residual, cross, logdet) features."""
    S, X, W = _check_batch(dataset.S, dataset.X, A)
    return np.column_stack(_trace_terms(S, X, W))


def loglik_fault(x, s, A) -> float:
    """Log marginal likelihood of ``x`` when the generating matrix is ``B ~ MN(A, I, I)``.

    Evaluated from the completed-square trace form; equals
    :func:`loglik_fault_marginal` up to rounding.
    """
    f = extract_features(s, x, A)
    n = np.asarray(x).size
    return -0.5 * n * LOG_2PI - 0.5 * f.cross_trace + 0.5 * n * f.logdet_term


def mc_posterior_oracle(x, s, A, draws: int = 100_000, seed: int = 0):
    """Monte Carlo estimate of the fault marginal by sampling ``B`` from its prior.

    Returns ``(log_mean, std_error)`` where the standard error is the
    delta-method approximation ``sd(w) / (sqrt(draws) * mean(w))``.
    """
    x, s, W = _check(x, s, A)
    if draws < 1000:
        raise RejectedInputError(f"draws must be >= 1000, got {draws}")
    rng = make_rng(seed)
    n, p = W.shape
    logw = np.empty(draws)
    chunk = 20_000
    for start in range(0, draws, chunk):
        m = min(chunk, draws - start)
        B = W + rng.standard_normal((m, n, p))
        r = x - B @ s
        logw[start:start + m] = -0.5 * n * LOG_2PI - 0.5 * np.einsum("ij,ij->i", r, r)
    est = float(logsumexp(logw) - math.log(draws))
    w = np.exp(logw - est)
    se = float(np.std(w, ddof=1) / math.sqrt(draws))
    if not (math.isfinite(est) and math.isfinite(se)):
        raise NumericalFailureError("Monte Carlo oracle produced a non-finite estimate")
    return est, se


# ---------------------------------------------------------------------------
# Classifier


@dataclass(frozen=True)
class LogLikRatio:
    value: float

    @property
    def decision(self) -> int:
        # ties go to normal: only a strictly negative ratio signals a fault
        return FAULT if self.value < 0 else NORMAL


def classify_single(s, x, A) -> LogLikRatio:
    """``loglik_normal - loglik_fault`` for one pair, assembled from the shared features."""
    f = extract_features(s, x, A)
    n = np.asarray(x).size
    return LogLikRatio(float(_ratio_from_features(f.as_array()[None, :], n)[0]))


def loglik_ratios(dataset: Dataset, A) -> np.ndarray:
    """Per-sample log-likelihood ratios, vectorized over the dataset."""
    F = feature_matrix(dataset, A)
    return _ratio_from_features(F, dataset.n)


def _ratio_from_features(F, n):
    # normal - fault = -r/2 + c/2 - (n/2) logdet
    return 0.5 * (F[:, 1] - F[:, 0]) - 0.5 * n * F[:, 2]


def classify_sequence(dataset: Dataset, A) -> LogLikRatio:
    """Sum of per-sample ratios over the whole dataset."""
    if dataset.T == 0:
        raise RejectedInputError("cannot classify an empty dataset")
    return LogLikRatio(math.fsum(loglik_ratios(dataset, A)))


def window_sums(values: np.ndarray, window: int) -> np.ndarray:
    """Sums over consecutive non-overlapping windows; a trailing partial window is dropped."""
    values = np.asarray(values, dtype=float)
    if window < 1:
        raise RejectedInputError(f"window must be >= 1, got {window}")
    m = values.shape[0] // window
    trimmed = values[: m * window]
    return trimmed.reshape((m, window) + values.shape[1:]).sum(axis=1)


def classify_windows(dataset: Dataset, A, window: int) -> np.ndarray:
    """Summed log-likelihood ratio for each non-overlapping window."""
    return window_sums(loglik_ratios(dataset, A), window)


# ---------------------------------------------------------------------------
# Logistic layer over the separated features


TRANSFORMS = {
    "identity": lambda F: F,
    # cube root pulls chi-square-like window sums close to symmetric
    "cbrt": np.cbrt,
}


@dataclass(frozen=True, eq=False)
class LogisticModel:
    """Logistic regression over the three classifier features.

    Features pass through ``transform`` (element-wise, monotone) and are
    standardized with ``center``/``scale`` before the linear layer; the
    defaults leave them untouched.
    """

    weights: np.ndarray
    bias: float = 0.0
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))
    scale: np.ndarray = field(default_factory=lambda: np.ones(3))
    transform: str = "identity"
    iterations: int = 0
    final_loss: float = float("nan")

    def __post_init__(self):
        if self.transform not in TRANSFORMS:
            raise RejectedInputError(f"unknown feature transform {self.transform!r}")
        w = np.asarray(self.weights, dtype=float).ravel()
        if w.shape != (3,):
            raise RejectedInputError(f"expected 3 weights, got {w.shape[0]}")
        params = np.concatenate([w, [self.bias], self.center, self.scale])
        if not np.all(np.isfinite(params)):
            raise NumericalFailureError("logistic model parameters are not finite")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        object.__setattr__(self, "scale", np.asarray(self.scale, dtype=float))

    def decision_function(self, F) -> np.ndarray:
        F = TRANSFORMS[self.transform](np.atleast_2d(np.asarray(F, dtype=float)))
        return ((F - self.center) / self.scale) @ self.weights + self.bias


def logistic_loss_and_grad(weights, bias, F, y):
    """Mean cross-entropy and its gradient for a sigmoid-link linear model."""
    z = F @ weights + bias
    # log(1 + e^z) - y z, stable for large |z|
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z))
    r = expit(z) - y
    return loss, F.T @ r / len(y), float(np.mean(r))


def _features_array(features) -> np.ndarray:
    if isinstance(features, np.ndarray):
        F = np.asarray(features, dtype=float)
    else:
        F = np.array([f.as_array() if isinstance(f, ClassifierFeatures) else f for f in features], dtype=float)
    return F.reshape(-1, 3)


def train_logistic(features, labels, learn_rate: float = 0.5, epochs: int = 2000,
                   seed: int = 0, transform: str = "cbrt", standardize: bool = True) -> LogisticModel:
    """Full-batch gradient descent from zero weights.

    ``labels`` use 1 for fault, 0 for normal.  Features are transformed,
    then standardized with training statistics.  ``seed`` is accepted for
    interface symmetry; the procedure itself draws no random numbers.
    """
    if transform not in TRANSFORMS:
        raise RejectedInputError(f"unknown feature transform {transform!r}")
    F = _features_array(features)
    y = np.asarray(labels, dtype=float).ravel()
    if F.shape[0] == 0:
        raise RejectedInputError("no training examples")
    if F.shape[0] != y.size:
        raise RejectedInputError(f"{F.shape[0]} feature rows but {y.size} labels")
    F = TRANSFORMS[transform](F)
    if standardize:
        center = F.mean(axis=0)
        scale = F.std(axis=0)
        scale[scale == 0] = 1.0
    else:
        center, scale = np.zeros(3), np.ones(3)
    Z = (F - center) / scale
    w = np.zeros(3)
    b = 0.0
    loss = float("nan")
    # overflow is detected below and reported as a numerical failure
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(epochs):
            loss, gw, gb = logistic_loss_and_grad(w, b, Z, y)
            if not math.isfinite(loss):
                raise NumericalFailureError(f"logistic loss became non-finite at epoch {epoch}")
            w = w - learn_rate * gw
            b = b - learn_rate * gb
        if epochs:
            loss = logistic_loss_and_grad(w, b, Z, y)[0]
    if epochs and not (math.isfinite(loss) and np.all(np.isfinite(w)) and math.isfinite(b)):
        raise NumericalFailureError("logistic training diverged")
    return LogisticModel(w, b, center, scale, transform, epochs, loss)


def predict_logistic(model: LogisticModel, features):
    """``(probability, label)`` for one ClassifierFeatures; label 1 iff probability > 0.5."""
    f = features.as_array() if isinstance(features, ClassifierFeatures) else np.asarray(features, dtype=float)
    prob = float(expit(model.decision_function(f)[0]))
    return prob, int(prob > 0.5)


def predict_logistic_batch(model: LogisticModel, F) -> tuple:
    prob = expit(model.decision_function(F))
    return prob, (prob > 0.5).astype(int)
