"""One-hidden-layer sigmoid network trained with plain mini-batch SGD.

The hidden layer is twice as wide as the input and the output layer is
linear.  Transfer between buildings is done by warm-starting
:func:`mlp_fit` from a model trained on the source building.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy.special import expit

from ._random import make_rng
from .errors import NumericalFailureError, RejectedInputError
from .kernel import Dataset

PARAM_NAMES = ("W1", "b1", "W2", "b2")


@dataclass(frozen=True, eq=False)
class MlpModel:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    epochs_trained: int = 0
    final_loss: float = float("nan")

    def __post_init__(self):
        W1 = np.array(self.W1, dtype=float)
        b1 = np.array(self.b1, dtype=float).ravel()
        W2 = np.array(self.W2, dtype=float)
        b2 = np.array(self.b2, dtype=float).ravel()
        h, p = W1.shape
        if h != 2 * p:
            raise RejectedInputError(f"hidden width must be 2p={2 * p}, got {h}")
        if b1.shape != (h,) or W2.shape[1] != h or b2.shape != (W2.shape[0],):
            raise RejectedInputError("inconsistent MLP parameter shapes")
        for name, arr in zip(PARAM_NAMES, (W1, b1, W2, b2)):
            if not np.all(np.isfinite(arr)):
                raise NumericalFailureError(f"MLP parameter {name} is not finite")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def p(self) -> int:
        return self.W1.shape[1]

    @property
    def n(self) -> int:
        return self.W2.shape[0]

    def params(self):
        return [self.W1, self.b1, self.W2, self.b2]


def init_mlp(p: int, n: int, seed: int = 0) -> MlpModel:
    """Uniform ``+-1/sqrt(fan_in)`` initialization."""
    rng = make_rng(seed)
    h = 2 * p
    lim1 = 1.0 / math.sqrt(p)
    lim2 = 1.0 / math.sqrt(h)
    return MlpModel(
        rng.uniform(-lim1, lim1, (h, p)),
        rng.uniform(-lim1, lim1, h),
        rng.uniform(-lim2, lim2, (n, h)),
        rng.uniform(-lim2, lim2, n),
    )


def zeros_mlp(p: int, n: int) -> MlpModel:
    return MlpModel(np.zeros((2 * p, p)), np.zeros(2 * p), np.zeros((n, 2 * p)), np.zeros(n))


def _forward(params, S):
    W1, b1, W2, b2 = params
    H = expit(W1 @ S + b1[:, None])
    return H, W2 @ H + b2[:, None]


def mlp_predict(model: MlpModel, s) -> np.ndarray:
    """Network output for one input vector, or column-wise for a ``p x T`` matrix."""
    s = np.asarray(s, dtype=float)
    S = s[:, None] if s.ndim == 1 else s
    if S.shape[0] != model.p:
        raise RejectedInputError(f"model expects inputs of length {model.p}, got {S.shape[0]}")
    out = _forward(model.params(), S)[1]
    return out[:, 0] if s.ndim == 1 else out


def mlp_loss(model: MlpModel, dataset: Dataset) -> float:
    """Mean squared error over all output entries."""
    R = mlp_predict(model, dataset.S) - dataset.X
    return float(np.mean(R * R))


def _loss_and_grads(params, S, X):
    # loss = mean over n*T entries of squared error
    W1, b1, W2, b2 = params
    H, Y = _forward(params, S)
    R = Y - X
    m = R.size
    loss = float(np.sum(R * R) / m)
    dY = 2.0 * R / m
    gW2 = dY @ H.T
    gb2 = dY.sum(axis=1)
    dZ = (W2.T @ dY) * H * (1.0 - H)
    gW1 = dZ @ S.T
    gb1 = dZ.sum(axis=1)
    return loss, [gW1, gb1, gW2, gb2]


def mlp_fit(dataset: Dataset, init: Optional[MlpModel] = None, learn_rate: float = 0.05,
            epochs: int = 100, batch: int = 32, seed: int = 0) -> MlpModel:
    """Mini-batch SGD on squared error.

    Starts from ``init`` (warm start) or a fresh seeded initialization.
    Each epoch visits the samples in a seeded random order.  ``epochs=0``
    returns the starting model unchanged.
    """
    if learn_rate <= 0 or epochs < 0 or batch < 1:
        raise RejectedInputError(
            f"need learn_rate > 0, epochs >= 0, batch >= 1; got {learn_rate}, {epochs}, {batch}"
        )
    model = init if init is not None else init_mlp(dataset.p, dataset.n, seed)
    if (model.p, model.n) != (dataset.p, dataset.n):
        raise RejectedInputError(
            f"model is for p={model.p}, n={model.n} but data has p={dataset.p}, n={dataset.n}"
        )
    if epochs == 0:
        return model
    params = [a.copy() for a in model.params()]
    rng = make_rng(seed, 1)
    S, X = dataset.S, dataset.X
    T = dataset.T
    for epoch in range(epochs):
        order = rng.permutation(T)
        for start in range(0, T, batch):
            idx = order[start:start + batch]
            loss, grads = _loss_and_grads(params, S[:, idx], X[:, idx])
            if not math.isfinite(loss):
                raise NumericalFailureError(f"MLP loss became non-finite in epoch {epoch}")
            for a, g in zip(params, grads):
                a -= learn_rate * g
    final = _loss_and_grads(params, S, X)[0]
    if not math.isfinite(final):
        raise NumericalFailureError(f"MLP loss became non-finite in epoch {epochs - 1}")
    return replace(MlpModel(*params), epochs_trained=model.epochs_trained + epochs, final_loss=final)


def mlp_gradient_check(model: MlpModel, s, x, epsilon: float = 1e-5, atol: float = 1e-8) -> float:
    """Largest disagreement between backprop and central differences.

    Per entry the error is ``|g - g_fd| / max(|g|, |g_fd|)``; where both
    gradients are below ``atol`` the absolute difference is used instead.
    """
    if not 0 < epsilon <= 1e-2:
        raise RejectedInputError(f"epsilon must be in (0, 1e-2], got {epsilon}")
    S = np.asarray(s, dtype=float).reshape(-1, 1)
    X = np.asarray(x, dtype=float).reshape(-1, 1)
    params = [a.copy() for a in model.params()]
    _, grads = _loss_and_grads(params, S, X)
    worst = 0.0
    for a, g in zip(params, grads):
        flat = a.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            up = _loss_and_grads(params, S, X)[0]
            flat[i] = orig - epsilon
            down = _loss_and_grads(params, S, X)[0]
            flat[i] = orig
            fd = (up - down) / (2.0 * epsilon)
            scale = max(abs(gflat[i]), abs(fd))
            err = abs(gflat[i] - fd)
            if scale >= atol:
                err /= scale
            worst = max(worst, err)
    return worst
