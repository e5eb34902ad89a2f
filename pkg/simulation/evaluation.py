"""Mean-squared-error evaluation of backbones, with or without adapters."""
from __future__ import annotations

from typing import Mapping

from adapters.lora import LoraAdapter
from linalg.regression import mse
from pruning.backbone import Backbone
from simulation.training import adapted_mats
from utils.errors import AccountingError, ShapeError
from utils.types import Batch


def evaluate(backbone: Backbone, batch: Batch) -> float:
    """Mean over samples of ||W x - y||^2 / d_out."""
    if batch.size == 0:
        raise AccountingError("cannot evaluate on an empty batch")
    if batch.inputs.shape[0] != backbone.d_in:
        raise ShapeError("evaluate", (backbone.d_out, backbone.d_in), batch.inputs.shape)
    return mse(backbone.forward(batch.inputs), batch.targets)


def adapted_forward(backbone: Backbone, adapters: Mapping[str, LoraAdapter], batch: Batch):
    """Outputs of the backbone with each layer's adapter update added."""
    h = batch.inputs
    for m in adapted_mats(backbone, adapters):
        h = m @ h
    return h


def evaluate_adapted(backbone: Backbone, adapters: Mapping[str, LoraAdapter], batch: Batch) -> float:
    if batch.size == 0:
        raise AccountingError("cannot evaluate on an empty batch")
    return mse(adapted_forward(backbone, adapters, batch), batch.targets)
