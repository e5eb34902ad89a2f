"""First-order group importance for structured pruning.

A group is an output row of a single-layer backbone, or a hidden unit of a
chain (row j of ``up`` together with column j of ``down``). With a calibration
batch each weight contributes |dL/dW * W| under the surrogate loss; a chain
group multiplies the per-layer sums. Without calibration the group's L2 norm
is used instead.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from linalg.regression import chain_mse_gradients
from pruning.backbone import CHAIN, Backbone
from utils.errors import DataError, ParameterError, ShapeError
from utils.types import Batch

logger = logging.getLogger(__name__)

LOSSES = ("mse",)


@dataclass(frozen=True)
class GroupImportance:
    """Nonnegative score per group, plus the layout needed to build a prune map."""

    scores: tuple[float, ...]
    topology: str
    layer_shapes: tuple[tuple[str, int, int], ...]

    def __post_init__(self):
        if not self.scores:
            raise ParameterError("importance has no groups")
        arr = np.asarray(self.scores, dtype=np.float64)
        if not np.all(np.isfinite(arr)) or np.any(arr < 0):
            raise DataError("importance scores must be finite and nonnegative")

    @property
    def num_groups(self) -> int:
        return len(self.scores)


def group_importance(backbone: Backbone, calibration: Batch | None = None, loss: str = "mse") -> GroupImportance:
    if loss not in LOSSES:
        raise ParameterError(f"unsupported surrogate loss {loss!r}; expected one of {LOSSES}")
    mats = [w.values for _, w in backbone]
    shapes = tuple((name, w.rows, w.cols) for name, w in backbone)

    if calibration is None or calibration.size == 0:
        logger.debug("no calibration batch; using magnitude importance")
        per_layer = [m * m for m in mats]
        scores = _group_sums(per_layer, backbone.topology)
        scores = [float(np.sqrt(s)) for s in scores]
    else:
        if calibration.inputs.shape[0] != backbone.d_in or calibration.targets.shape[0] != backbone.d_out:
            raise ShapeError(
                "group_importance", (backbone.d_out, backbone.d_in), calibration.inputs.shape, calibration.targets.shape
            )
        _, grads = chain_mse_gradients(mats, calibration.inputs, calibration.targets)
        per_layer = [np.abs(g * m) for g, m in zip(grads, mats)]
        scores = [float(s) for s in _group_sums(per_layer, backbone.topology)]

    return GroupImportance(scores=tuple(scores), topology=backbone.topology, layer_shapes=shapes)


def _group_sums(per_layer: list[np.ndarray], topology: str) -> np.ndarray:
    """Sum entries per group; for chains, multiply the two member-layer sums.

    The magnitude path passes squared entries so the products of sums become
    products of squared norms, and the caller's square root yields the product
    of the two L2 norms.
    """
    if topology == CHAIN:
        up, down = per_layer
        return up.sum(axis=1) * down.sum(axis=0)
    (only,) = per_layer
    return only.sum(axis=1)
