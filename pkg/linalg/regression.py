"""Mean-squared-error surrogate loss over linear chains, with analytic gradients."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from utils.errors import AccountingError, ShapeError


def mse(predictions: np.ndarray, targets: np.ndarray) -> float:
    """Mean over samples of ||residual||^2 / d_out. Columns are samples."""
    if predictions.shape != targets.shape:
        raise ShapeError("mse", predictions.shape, targets.shape)
    d_out, n = targets.shape
    if n == 0:
        raise AccountingError("mse over an empty batch")
    residual = predictions - targets
    return float(np.sum(residual * residual) / (n * d_out))


def chain_mse_gradients(mats: Sequence[np.ndarray], x: np.ndarray, y: np.ndarray) -> tuple[float, list[np.ndarray]]:
    """Loss and dL/dM_l for the chain y_hat = M_L ... M_1 x."""
    acts = [x]
    for m in mats:
        acts.append(m @ acts[-1])
    pred = acts[-1]
    loss = mse(pred, y)
    d_out, n = y.shape
    g = (2.0 / (n * d_out)) * (pred - y)
    grads: list[np.ndarray] = [np.empty(0)] * len(mats)
    for idx in range(len(mats) - 1, -1, -1):
        grads[idx] = g @ acts[idx].T
        if idx:
            g = mats[idx].T @ g
    return loss, grads
