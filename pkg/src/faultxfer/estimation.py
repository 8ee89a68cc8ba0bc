"""Ridge and weighted least-squares estimation of transition matrices."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Optional, Sequence

import numpy as np
from scipy import linalg

from .data import build_dataset
from .errors import RejectedInputError, SingularityError
from .kernel import Dataset, KernelConfig, TransitionMatrix, as_matrix


@dataclass(frozen=True)
class FitConfig:
    ridge_alpha: float = 0.0
    kernel: Optional[KernelConfig] = None

    def __post_init__(self):
        if not math.isfinite(self.ridge_alpha) or self.ridge_alpha < 0:
            raise RejectedInputError(f"ridge_alpha must be finite and >= 0, got {self.ridge_alpha}")


@dataclass(frozen=True)
class WlsWeights:
    source_weight: float
    target_weight: float

    def __post_init__(self):
        for name in ("source_weight", "target_weight"):
            w = getattr(self, name)
            if not (math.isfinite(w) and w > 0):
                raise RejectedInputError(f"{name} must be finite and > 0, got {w}")


@dataclass(frozen=True)
class CvEntry:
    params: dict
    mse: float
    error: Optional[str] = None


@dataclass(frozen=True)
class CvReport:
    grid: list
    best: dict
    best_mse: float


def _weighted_ridge(blocks, alpha: float, n: int, p: int) -> np.ndarray:
    """Solve ``min_W sum_i w_i ||W S_i - X_i||^2 + alpha ||W||_F^2``.

    ``blocks`` is a sequence of ``(S, X, w)`` with ``w >= 0``.  The normal
    equations ``(sum w S S' + alpha I) W' = sum w S X'`` are solved through a
    Cholesky factorization.
    """
    G = alpha * np.eye(p)
    R = np.zeros((p, n))
    total = 0
    for S, X, w in blocks:
        if w < 0:
            raise RejectedInputError(f"weights must be non-negative, got {w}")
        if w == 0 or S.shape[1] == 0:
            continue
        Sw = S * math.sqrt(w)
        G += Sw @ Sw.T
        R += Sw @ (X * math.sqrt(w)).T
        total += S.shape[1]
    if alpha == 0:
        stacked = [S for S, _, w in blocks if w > 0 and S.shape[1]]
        rank = np.linalg.matrix_rank(np.hstack(stacked)) if stacked else 0
        if rank < p:
            raise SingularityError(
                f"S S' is singular: rank {rank} < p={p} with {total} samples; "
                f"use ridge_alpha > 0"
            )
    try:
        factor = linalg.cho_factor(G, lower=True, check_finite=False)
    except linalg.LinAlgError as exc:
        raise SingularityError(f"normal-equation matrix of size p={p} is not positive definite") from exc
    return linalg.cho_solve(factor, R, check_finite=False).T


def _dims(*datasets: Dataset):
    n, p = datasets[0].n, datasets[0].p
    for d in datasets[1:]:
        if (d.n, d.p) != (n, p):
            raise RejectedInputError(
                f"datasets disagree on dimensions: (n={n}, p={p}) vs (n={d.n}, p={d.p})"
            )
    return n, p


def _wrap(W, config: FitConfig):
    kern = config.kernel
    if kern is not None and W.shape != (kern.n, kern.p):
        raise RejectedInputError(
            f"fitted matrix is {W.shape[0]}x{W.shape[1]} but kernel expects {kern.n}x{kern.p}"
        )
    return TransitionMatrix(W, kern)


def fit_ls(dataset: Dataset, config: FitConfig = FitConfig()) -> TransitionMatrix:
    """Closed-form ridge fit ``X S' (S S' + alpha I)^{-1}``."""
    if dataset.T < 1:
        raise RejectedInputError("cannot fit an empty dataset")
    n, p = _dims(dataset)
    W = _weighted_ridge([(dataset.S, dataset.X, 1.0)], config.ridge_alpha, n, p)
    return _wrap(W, config)


def fit_wls(source: Dataset, target: Dataset, weights: WlsWeights,
            config: FitConfig = FitConfig()) -> TransitionMatrix:
    """Pooled ridge fit with per-building sample weights."""
    n, p = _dims(source, target)
    if source.T + target.T < 1:
        raise RejectedInputError("cannot fit empty datasets")
    W = _weighted_ridge(
        [(source.S, source.X, weights.source_weight), (target.S, target.X, weights.target_weight)],
        config.ridge_alpha, n, p,
    )
    return _wrap(W, config)


def mse(A, dataset: Dataset) -> float:
    """Mean of ``(X - A S)^2`` over all ``n * T`` entries."""
    W = as_matrix(A)
    if dataset.T == 0:
        raise RejectedInputError("cannot score an empty dataset")
    if W.shape != (dataset.n, dataset.p):
        raise RejectedInputError(
            f"matrix is {W.shape[0]}x{W.shape[1]} but data has n={dataset.n}, p={dataset.p}"
        )
    R = dataset.X - W @ dataset.S
    return float(np.mean(R * R))


def transfer(source_data: Dataset, target_train: Dataset, target_valid: Dataset,
             weight_grid: Sequence[WlsWeights], config: FitConfig = FitConfig()):
    """Fit a WLS model for each weight pair and keep the best on target validation.

    Returns ``(matrix, CvReport)``.  Ties on validation MSE go to the larger
    target weight.
    """
    if not weight_grid:
        raise RejectedInputError("weight grid is empty")
    entries = []
    best = None
    for weights in weight_grid:
        A = fit_wls(source_data, target_train, weights, config)
        score = mse(A, target_valid)
        params = {"source_weight": weights.source_weight, "target_weight": weights.target_weight}
        entries.append(CvEntry(params, score))
        if best is None or score < best[0] or (
            score == best[0] and weights.target_weight > best[1].target_weight
        ):
            best = (score, weights, A, params)
    return best[2], CvReport(entries, best[3], best[0])


def cross_validate_model(train, valid, dependent: Sequence[str], independent: Sequence[str],
                         degree_grid: Sequence[int], alpha_grid: Sequence[float],
                         window: int = 1) -> CvReport:
    """Grid search over polynomial degree and ridge weight.

    ``train`` and ``valid`` are raw tables; each cell is featurized at its
    degree, fitted on ``train`` and scored on ``valid``.  Cells whose fit is
    singular are kept in the report with infinite MSE and the error text.
    Ties keep the earliest cell in grid order.
    """
    if not degree_grid or not alpha_grid:
        raise RejectedInputError("degree and alpha grids must be non-empty")
    entries = []
    best = None
    for d in degree_grid:
        kern = KernelConfig(len(dependent), len(independent), int(d), window)
        tr = build_dataset(train, dependent, independent, kern)
        va = build_dataset(valid, dependent, independent, kern)
        for alpha in alpha_grid:
            params = {"degree": int(d), "alpha": float(alpha)}
            try:
                A = fit_ls(tr, FitConfig(float(alpha), kern))
            except SingularityError as exc:
                entries.append(CvEntry(params, math.inf, str(exc)))
                continue
            score = mse(A, va)
            entries.append(CvEntry(params, score))
            if best is None or score < best[0]:
                best = (score, params)
    if best is None:
        raise SingularityError("every grid cell was singular")
    return CvReport(entries, best[1], best[0])
