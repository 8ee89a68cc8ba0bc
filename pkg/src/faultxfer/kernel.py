"""Polynomial-kernel state-transition model.

Each step maps a featurized state ``s_t`` to the next dependent state,
``x_{t+1} = A s_t + eps_t``.  The feature vector stacks element-wise powers
``d, d-1, ..., 1`` of the dependent variables, then of the independent
variables, and ends with a single constant 1.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ._random import make_rng
from .errors import NumericalFailureError, RejectedInputError


@dataclass(frozen=True)
class KernelConfig:
    """Dimensions of the kernelized model.

    ``window`` stacks that many consecutive raw states into one feature
    vector (oldest first); the constant term is still appended once.
    """

    n: int
    k: int
    d: int
    window: int = 1

    def __post_init__(self):
        if self.n < 1 or self.k < 0 or self.d < 1 or self.window < 1:
            raise RejectedInputError(
                f"invalid kernel dimensions n={self.n} k={self.k} d={self.d} window={self.window}"
            )

    @property
    def p(self) -> int:
        return self.window * self.d * (self.n + self.k) + 1


def _as_2d(a, name):
    arr = np.asarray(a, dtype=float)
    if arr.ndim != 2:
        raise RejectedInputError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


@dataclass(frozen=True, eq=False)
class TransitionMatrix:
    """An ``n x p`` transition matrix, optionally tied to a kernel layout.

    ``config`` may be None for plain linear maps whose inputs carry no
    constant term (the Monte Carlo study uses this).
    """

    entries: np.ndarray
    config: Optional[KernelConfig] = None

    def __post_init__(self):
        entries = _as_2d(self.entries, "transition matrix").copy()
        if not np.all(np.isfinite(entries)):
            raise RejectedInputError("transition matrix has non-finite entries")
        if self.config is not None and entries.shape != (self.config.n, self.config.p):
            raise RejectedInputError(
                f"transition matrix shape {entries.shape} does not match "
                f"config (n={self.config.n}, p={self.config.p})"
            )
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)

    @property
    def shape(self):
        return self.entries.shape

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    @property
    def p(self) -> int:
        return self.entries.shape[1]

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self.entries
        return self.entries.astype(dtype)


def as_matrix(A) -> np.ndarray:
    """Entries of ``A`` (a TransitionMatrix or array-like) as a 2-D float array."""
    if isinstance(A, TransitionMatrix):
        return A.entries
    return _as_2d(A, "transition matrix")


@dataclass(frozen=True, eq=False)
class SamplePair:
    s: np.ndarray
    x: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.s, dtype=float).ravel()
        x = np.asarray(self.x, dtype=float).ravel()
        if s.size == 0 or s[-1] != 1.0:
            raise RejectedInputError("featurized input must end with the constant term 1")
        if not (np.all(np.isfinite(s)) and np.all(np.isfinite(x))):
            raise RejectedInputError("sample pair has non-finite entries")
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "x", x)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Column-stacked sample pairs: ``S`` is ``p x T``, ``X`` is ``n x T``.

    With ``intercept=True`` every column of ``S`` must end in 1.
    """

    S: np.ndarray
    X: np.ndarray
    timestamps: Optional[np.ndarray] = None
    intercept: bool = True

    def __post_init__(self):
        S = _as_2d(self.S, "S").copy()
        X = _as_2d(self.X, "X").copy()
        if S.shape[1] != X.shape[1]:
            raise RejectedInputError(
                f"S has {S.shape[1]} columns but X has {X.shape[1]}"
            )
        if not (np.all(np.isfinite(S)) and np.all(np.isfinite(X))):
            raise RejectedInputError("dataset has non-finite entries")
        if self.intercept and S.shape[1] and not np.all(S[-1] == 1.0):
            raise RejectedInputError("every column of S must end with the constant term 1")
        ts = None
        if self.timestamps is not None:
            ts = np.asarray(self.timestamps).copy()
            if ts.shape != (S.shape[1],):
                raise RejectedInputError(
                    f"timestamps length {ts.shape} does not match T={S.shape[1]}"
                )
            ts.setflags(write=False)
        S.setflags(write=False)
        X.setflags(write=False)
        object.__setattr__(self, "S", S)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "timestamps", ts)

    @property
    def T(self) -> int:
        return self.S.shape[1]

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.S.shape[0]

    def __len__(self):
        return self.T

    def __getitem__(self, idx):
        """Column slice as a new Dataset (integer index yields a SamplePair)."""
        if isinstance(idx, (int, np.integer)):
            return SamplePair(self.S[:, idx], self.X[:, idx])
        ts = None if self.timestamps is None else self.timestamps[idx]
        return Dataset(self.S[:, idx], self.X[:, idx], ts, self.intercept)

    @classmethod
    def from_pairs(cls, pairs: Sequence[SamplePair]) -> "Dataset":
        if not pairs:
            raise RejectedInputError("no sample pairs given")
        S = np.column_stack([pr.s for pr in pairs])
        X = np.column_stack([pr.x for pr in pairs])
        return cls(S, X)


def concat(*datasets: Dataset) -> Dataset:
    """Concatenate datasets along time."""
    if not datasets:
        raise RejectedInputError("nothing to concatenate")
    ts = None
    if all(d.timestamps is not None for d in datasets):
        ts = np.concatenate([d.timestamps for d in datasets])
    return Dataset(
        np.hstack([d.S for d in datasets]),
        np.hstack([d.X for d in datasets]),
        ts,
        all(d.intercept for d in datasets),
    )


def _powers(v: np.ndarray, d: int) -> np.ndarray:
    # [v^d, ..., v^1] by repeated multiplication so negative bases keep exact signs
    out = np.empty((d,) + v.shape)
    acc = v.copy()
    out[d - 1] = acc
    for i in range(d - 2, -1, -1):
        acc = acc * v
        out[i] = acc
    return out.reshape(-1)


def featurize(x, u, config: KernelConfig) -> np.ndarray:
    """Kernel feature vector ``[x^d..x^1, u^d..u^1, 1]`` for one time step.

    Powers are grouped by exponent: for ``n=2, d=2`` the dependent block is
    ``[x0^2, x1^2, x0, x1]``.

    >>> featurize([2.0], [3.0], KernelConfig(n=1, k=1, d=2))
    array([4., 2., 9., 3., 1.])
    """
    if config.window != 1:
        raise RejectedInputError("featurize handles one step; use featurize_window")
    x = np.asarray(x, dtype=float).ravel()
    u = np.asarray(u, dtype=float).ravel()
    if x.size != config.n or u.size != config.k:
        raise RejectedInputError(
            f"expected x of length {config.n} and u of length {config.k}, "
            f"got {x.size} and {u.size}"
        )
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(u))):
        raise RejectedInputError("featurize inputs must be finite")
    return np.concatenate([_powers(x, config.d), _powers(u, config.d), [1.0]])


def featurize_window(xs, us, config: KernelConfig) -> np.ndarray:
    """Stack per-step kernel blocks for ``config.window`` consecutive steps.

    ``xs`` is ``window x n`` and ``us`` is ``window x k``, oldest row first.
    """
    xs = np.asarray(xs, dtype=float).reshape(config.window, -1)
    us = np.asarray(us, dtype=float).reshape(config.window, -1) if config.k else np.empty((config.window, 0))
    if xs.shape[1] != config.n or us.shape[1] != config.k:
        raise RejectedInputError(
            f"expected window of {config.n} dependent and {config.k} independent "
            f"variables, got {xs.shape[1]} and {us.shape[1]}"
        )
    if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(us))):
        raise RejectedInputError("featurize inputs must be finite")
    blocks = []
    for x, u in zip(xs, us):
        blocks.append(_powers(x, config.d))
        blocks.append(_powers(u, config.d))
    blocks.append([1.0])
    return np.concatenate(blocks)


def featurize_series(xs, us, config: KernelConfig) -> np.ndarray:
    """Featurize every length-``window`` run of a raw series at once.

    ``xs`` is ``R x n`` and ``us`` is ``R x k``; returns ``p x (R - window + 1)``
    whose column ``j`` equals ``featurize_window(xs[j:j+window], us[j:j+window])``.
    """
    xs = np.asarray(xs, dtype=float).reshape(-1, config.n)
    us = np.asarray(us, dtype=float).reshape(xs.shape[0], config.k)
    if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(us))):
        raise RejectedInputError("featurize inputs must be finite")
    L = config.window
    T = xs.shape[0] - L + 1
    if T < 1:
        raise RejectedInputError(f"need at least {L} rows to featurize, got {xs.shape[0]}")
    blocks = []
    for lag in range(L):
        for raw in (xs[lag:lag + T], us[lag:lag + T]):
            # (T, m) -> (d*m, T), grouped by exponent like _powers
            acc = raw.copy()
            pw = [acc]
            for _ in range(config.d - 1):
                acc = acc * raw
                pw.append(acc)
            blocks.extend(a.T for a in reversed(pw))
    blocks.append(np.ones((1, T)))
    return np.vstack(blocks)


def _input_matrix(inputs, p) -> np.ndarray:
    if isinstance(inputs, np.ndarray) and inputs.ndim == 2:
        S = np.asarray(inputs, dtype=float)
    else:
        cols = [np.asarray(s, dtype=float).ravel() for s in inputs]
        if any(c.size != p for c in cols):
            raise RejectedInputError(f"every input vector must have length p={p}")
        S = np.column_stack(cols) if cols else np.empty((p, 0))
    if S.shape[0] != p:
        raise RejectedInputError(f"inputs have {S.shape[0]} rows, expected p={p}")
    return S


def simulate(A, inputs, noise_scale: float = 1.0, seed: int = 0) -> Dataset:
    """Generate outputs ``x = A s + eps`` for each featurized input.

    ``inputs`` is either a ``p x T`` array or a sequence of length-``p``
    vectors.  Noise is i.i.d. Gaussian with standard deviation
    ``noise_scale``.
    """
    W = as_matrix(A)
    if noise_scale < 0 or not np.isfinite(noise_scale):
        raise RejectedInputError(f"noise_scale must be finite and >= 0, got {noise_scale}")
    S = _input_matrix(inputs, W.shape[1])
    X = W @ S
    if noise_scale > 0:
        X = X + noise_scale * make_rng(seed).standard_normal(X.shape)
    intercept = isinstance(A, TransitionMatrix) and A.config is not None
    return Dataset(S, X, intercept=intercept)


def perturb_matrix(A, sigma: float, seed: int = 0) -> TransitionMatrix:
    """Copy of ``A`` with i.i.d. ``N(0, sigma^2)`` noise added to each entry."""
    W = as_matrix(A)
    if not np.isfinite(sigma) or sigma < 0:
        raise RejectedInputError(f"sigma must be finite and >= 0, got {sigma}")
    config = A.config if isinstance(A, TransitionMatrix) else None
    if sigma == 0:
        return TransitionMatrix(W.copy(), config)
    return TransitionMatrix(W + sigma * make_rng(seed).standard_normal(W.shape), config)


def rollout(A: TransitionMatrix, x0, U, noise_scale: float = 1.0, seed: int = 0) -> np.ndarray:
    """Open-loop trajectory of the dependent state driven by inputs ``U``.

    ``U`` is ``T x k``; returns the ``(T + 1) x n`` state trajectory
    starting at ``x0``.  Raises NumericalFailureError if the trajectory
    diverges.
    """
    if A.config is None or A.config.window != 1:
        raise RejectedInputError("rollout needs a single-step kernel configuration")
    cfg = A.config
    U = np.asarray(U, dtype=float).reshape(-1, cfg.k) if cfg.k else np.empty((len(U), 0))
    rng = make_rng(seed)
    noise = noise_scale * rng.standard_normal((U.shape[0], cfg.n)) if noise_scale > 0 else np.zeros((U.shape[0], cfg.n))
    X = np.empty((U.shape[0] + 1, cfg.n))
    X[0] = np.asarray(x0, dtype=float).ravel()
    for t in range(U.shape[0]):
        X[t + 1] = A.entries @ featurize(X[t], U[t], cfg) + noise[t]
        if not np.all(np.isfinite(X[t + 1])) or np.max(np.abs(X[t + 1])) > 1e100:
            raise NumericalFailureError(f"rollout diverged at step {t + 1}")
    return X


def feature_names(config: KernelConfig, dependent: Sequence[str], independent: Sequence[str]) -> list:
    """Column labels matching the feature layout, e.g. ``x0^2`` or ``u1^1@t-1``."""
    if (len(dependent), len(independent)) != (config.n, config.k):
        raise RejectedInputError(
            f"config expects n={config.n}, k={config.k} but got {len(dependent)} "
            f"and {len(independent)} names"
        )
    names = []
    for lag in range(config.window):
        back = config.window - 1 - lag
        suffix = f"@t-{back}" if back else ""
        for group in (dependent, independent):
            for e in range(config.d, 0, -1):
                names.extend(f"{v}^{e}{suffix}" for v in group)
    names.append("1")
    return names
