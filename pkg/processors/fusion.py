"""One-shot cloud fusion of client adapters: FedAvg, FFA-LoRA and FedSA-LoRA."""
from __future__ import annotations

import logging
from typing import Mapping, Sequence

import numpy as np

from adapters.lora import LoraAdapter, materialize
from linalg.matrix import DenseMatrix
from processors.conflict import refactor
from pruning.backbone import Backbone
from utils.errors import ParameterError, ProtocolError, ShapeError

logger = logging.getLogger(__name__)

FEDAVG = "fedavg"
FFA = "ffa"
FEDSA = "fedsa"
FUSION_METHODS = (FEDAVG, FFA, FEDSA)


def fedavg(updates: Sequence[DenseMatrix]) -> DenseMatrix:
    """Entrywise mean (1/N) Σ ΔW_i."""
    _check_same("fedavg", [u.shape for u in updates])
    return DenseMatrix.of(np.mean(np.stack([u.values for u in updates]), axis=0))


def fedavg_factors(adapters: Sequence[LoraAdapter]) -> DenseMatrix:
    """Factor-averaging variant: scale · mean(B) · mean(A).

    Differs from ``fedavg`` over materialized updates whenever clients disagree.
    """
    scale = _common_scale(adapters)
    return _mean_product([a.B for a in adapters], [a.A for a in adapters], scale, "fedavg_factors")


def shared_frozen_factor(a_factors: Sequence[DenseMatrix]) -> DenseMatrix:
    """The A shared by every FFA client; clients must agree bitwise."""
    if not a_factors:
        raise ParameterError("no client factors")
    first = a_factors[0]
    for idx, a in enumerate(a_factors[1:], start=1):
        if a != first:
            raise ProtocolError(f"client {idx} carries a different frozen A than client 0")
    return first


def ffa_fuse(b_factors: Sequence[DenseMatrix], a_frozen: DenseMatrix, scale: float) -> DenseMatrix:
    """scale · ((1/N) Σ B_i) · A0."""
    _check_same("ffa_fuse", [b.shape for b in b_factors])
    b_mean = np.mean(np.stack([b.values for b in b_factors]), axis=0)
    if b_mean.shape[1] != a_frozen.rows:
        raise ShapeError("ffa_fuse", b_mean.shape, a_frozen.shape)
    return DenseMatrix.of(scale * (b_mean @ a_frozen.values))


def fedsa_fuse(a_factors: Sequence[DenseMatrix], b_factors: Sequence[DenseMatrix], scale: float) -> DenseMatrix:
    """One-shot FedSA-LoRA: scale · mean(B) · mean(A)."""
    return _mean_product(b_factors, a_factors, scale, "fedsa_fuse")


def refactor_onto(update: DenseMatrix, a_frozen: DenseMatrix, scale: float, layer_name: str, alpha: float) -> LoraAdapter:
    """Solve scale · B · A0 ≈ update for B by least squares.

    Exact when every row of ``update`` lies in the row space of A0, which holds
    for de-conflicted FFA updates.
    """
    if update.cols != a_frozen.cols:
        raise ShapeError("refactor_onto", update.shape, a_frozen.shape, where=f"layer {layer_name!r}")
    solution, *_ = np.linalg.lstsq(a_frozen.values.T, update.values.T, rcond=None)
    b = solution.T / scale
    return LoraAdapter(layer_name=layer_name, B=DenseMatrix.of(b), A=a_frozen, alpha=alpha)


def fuse_layer(
    method: str,
    adapters: Sequence[LoraAdapter],
    *,
    factor_avg: bool = False,
    updates: Sequence[DenseMatrix] | None = None,
    rank: int | None = None,
) -> DenseMatrix:
    """Fuse one layer's full-space client adapters.

    ``updates``, when given, are the de-conflicted matrices ΔW_i^CR replacing the
    adapters' own products; FFA/FedSA and factor averaging then consume them in
    factored form.
    """
    if not adapters:
        raise ParameterError("fusion needs at least one client adapter")
    name = adapters[0].layer_name
    if method == FEDAVG:
        if updates is None:
            if factor_avg:
                return fedavg_factors(adapters)
            return fedavg([materialize(a) for a in adapters])
        if factor_avg:
            return fedavg_factors([refactor(u, rank or adapters[0].rank, name) for u in updates])
        return fedavg(updates)

    if method == FFA:
        a0 = shared_frozen_factor([a.A for a in adapters])
        scale = _common_scale(adapters)
        if updates is None:
            b_factors = [a.B for a in adapters]
        else:
            alpha = adapters[0].alpha
            b_factors = [refactor_onto(u, a0, scale, name, alpha).B for u in updates]
        return ffa_fuse(b_factors, a0, scale)

    if method == FEDSA:
        if updates is None:
            return fedsa_fuse([a.A for a in adapters], [a.B for a in adapters], _common_scale(adapters))
        factored = [refactor(u, rank or adapters[0].rank, name) for u in updates]
        return fedsa_fuse([f.A for f in factored], [f.B for f in factored], 1.0)

    raise ParameterError(f"unknown fusion method {method!r}; expected one of {FUSION_METHODS}")


def apply_fusion(backbone: Backbone, fused: Mapping[str, DenseMatrix]) -> Backbone:
    """W = W0 + ΔW_fusion per layer; the input backbone is left untouched."""
    weights = {}
    for name, delta in fused.items():
        try:
            w0 = backbone.layer(name)
        except KeyError:
            raise ShapeError("apply_fusion", delta.shape, where=f"unknown layer {name!r}") from None
        if w0.shape != delta.shape:
            raise ShapeError("apply_fusion", w0.shape, delta.shape, where=f"layer {name!r}")
        weights[name] = w0 + delta
    return backbone.replace(weights)


def _mean_product(b_factors, a_factors, scale: float, op: str) -> DenseMatrix:
    _check_same(op, [b.shape for b in b_factors])
    _check_same(op, [a.shape for a in a_factors])
    if len(a_factors) != len(b_factors):
        raise ShapeError(op, (len(b_factors),), (len(a_factors),))
    b_mean = np.mean(np.stack([b.values for b in b_factors]), axis=0)
    a_mean = np.mean(np.stack([a.values for a in a_factors]), axis=0)
    if b_mean.shape[1] != a_mean.shape[0]:
        raise ShapeError(op, b_mean.shape, a_mean.shape)
    return DenseMatrix.of(scale * (b_mean @ a_mean))


def _common_scale(adapters: Sequence[LoraAdapter]) -> float:
    scales = {a.scale for a in adapters}
    if len(scales) != 1:
        raise ProtocolError(f"clients use different LoRA scales {sorted(scales)}")
    return scales.pop()


def _check_same(op: str, shapes: list[tuple[int, ...]]) -> None:
    if not shapes:
        raise ParameterError(f"{op} needs at least one client")
    distinct = sorted(set(shapes))
    if len(distinct) != 1:
        raise ShapeError(op, *distinct)
