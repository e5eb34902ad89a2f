"""Conflict-aware preprocessing of recovered LoRA updates (LoRA-CR).

For one layer, the recovered updates are concatenated column-wise and their
leading left singular vectors form a shared subspace. Each update is projected
onto it; along every shared direction k the projected rows z_{i,k} are compared
with their energy-weighted consensus to give a conflict score c_k in [0, 1].
Directions are then gated by 1 - c_k and each adapter's row is further scaled
by its clipped agreement with the consensus before mapping back to the full
space.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from adapters.lora import LoraAdapter
from linalg.matrix import NORM_TOL, DenseMatrix
from linalg.svd import svd_thin
from utils.errors import AccountingError, ParameterError, ShapeError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SharedSubspace:
    """Orthonormal columns U_share (d_out x r_sub) and their singular values."""

    U: DenseMatrix
    singular_values: tuple[float, ...]

    @property
    def r_sub(self) -> int:
        return self.U.cols


@dataclass(frozen=True)
class DirectionScores:
    """Per-direction conflict statistics for N projected updates."""

    scores: np.ndarray  # c_k, shape (r_sub,)
    consensus: np.ndarray  # z̄_k as rows, shape (r_sub, d_in)
    energies: np.ndarray  # α_{i,k}, shape (N, r_sub)
    cosines: np.ndarray  # cos(z_{i,k}, z̄_k), shape (N, r_sub)


@dataclass(frozen=True)
class LayerConflict:
    """Conflict report for one parameter matrix."""

    layer_name: str
    scores: tuple[float, ...]
    gates: tuple[float, ...]
    consensus: tuple[tuple[float, ...], ...]
    energies: tuple[tuple[float, ...], ...]
    consistency: tuple[tuple[float, ...], ...]
    singular_values: tuple[float, ...]

    @property
    def mean_conflict(self) -> float:
        return mean_conflict(self)

    def to_dict(self) -> dict[str, Any]:
        return {
            "layer": self.layer_name,
            "r_sub": len(self.scores),
            "scores": list(self.scores),
            "gates": list(self.gates),
            "mean_conflict": self.mean_conflict,
            "singular_values": list(self.singular_values),
            "energies": [list(row) for row in self.energies],
            "consistency": [list(row) for row in self.consistency],
            "consensus": [list(row) for row in self.consensus],
        }


@dataclass(frozen=True)
class ConflictReport:
    """Per-layer conflict reports keyed by layer name."""

    layers: Mapping[str, LayerConflict] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "layers": {name: rep.to_dict() for name, rep in self.layers.items()},
            "mean_conflict": mean_conflict(self),
        }


@dataclass(frozen=True)
class DeconflictedAdapterSet:
    updates: tuple[DenseMatrix, ...]
    report: LayerConflict
    subspace: SharedSubspace

    def span_residual(self, index: int) -> float:
        """||(I - U U^T) ΔW_i^CR||_F."""
        u = self.subspace.U.values
        w = self.updates[index].values
        return float(np.linalg.norm(w - u @ (u.T @ w)))


def shared_subspace(updates: Sequence[DenseMatrix], max_dirs: int, tol: float) -> SharedSubspace:
    """Leading left singular vectors of [ΔW_1, ..., ΔW_N]."""
    _check_common_shape(updates, "shared_subspace")
    if max_dirs < 1:
        raise ParameterError(f"max_dirs must be >= 1, got {max_dirs}")
    if not tol > 0:
        raise ParameterError(f"tol must be positive, got {tol!r}")
    stacked = DenseMatrix.of(np.hstack([u.values for u in updates]))
    svd = svd_thin(stacked)
    sigma = np.asarray(svd.singular_values)
    cutoff = tol * sigma[0]
    significant = int(np.count_nonzero(sigma >= cutoff))
    keep = max(1, min(max_dirs, significant))
    if sigma[0] == 0.0:
        logger.warning("all updates are zero; shared subspace is arbitrary")
    return SharedSubspace(U=svd.U.select(cols=range(keep)), singular_values=tuple(float(s) for s in sigma[:keep]))


def project(subspace: SharedSubspace, update: DenseMatrix) -> DenseMatrix:
    """Z_i = U_share^T ΔW_i; row k is z_{i,k}."""
    if update.rows != subspace.U.rows:
        raise ShapeError("project", subspace.U.shape, update.shape)
    return DenseMatrix.of(subspace.U.values.T @ update.values)


def conflict_scores(projections: Sequence[DenseMatrix], tol: float = NORM_TOL) -> DirectionScores:
    """Energy-weighted consensus and conflict score along every shared direction."""
    _check_common_shape(projections, "conflict_scores")
    z = np.stack([p.values for p in projections])  # (N, r, d)
    energies = np.linalg.norm(z, axis=2)  # (N, r)
    total = energies.sum(axis=0)  # (r,)
    live = total > tol
    weighted = np.einsum("nk,nkd->kd", energies, z)
    consensus = np.zeros_like(weighted)
    consensus[live] = weighted[live] / total[live, None]

    cosines = _row_cosines(z, consensus)
    scores = np.zeros_like(total)
    scores[live] = (energies[:, live] * (1.0 - cosines[:, live])).sum(axis=0) / (2.0 * total[live])
    scores = np.clip(scores, 0.0, 1.0)
    return DirectionScores(scores=scores, consensus=consensus, energies=energies, cosines=cosines)


def resolve(subspace: SharedSubspace, updates: Sequence[DenseMatrix], layer_name: str = "proj") -> DeconflictedAdapterSet:
    """Gate, attenuate and reconstruct within a given shared subspace."""
    projections = [project(subspace, u) for u in updates]
    stats = conflict_scores(projections)
    gates = 1.0 - stats.scores
    consistency = np.maximum(0.0, stats.cosines)  # (N, r)

    u = subspace.U.values
    fused_updates = []
    for i, z in enumerate(projections):
        z_fuse = (gates * consistency[i])[:, None] * z.values
        fused_updates.append(DenseMatrix.of(u @ z_fuse))

    report = LayerConflict(
        layer_name=layer_name,
        scores=tuple(float(c) for c in stats.scores),
        gates=tuple(float(g) for g in gates),
        consensus=tuple(tuple(float(x) for x in row) for row in stats.consensus),
        energies=tuple(tuple(float(x) for x in row) for row in stats.energies),
        consistency=tuple(tuple(float(x) for x in row) for row in consistency),
        singular_values=subspace.singular_values,
    )
    return DeconflictedAdapterSet(updates=tuple(fused_updates), report=report, subspace=subspace)


def deconflict(updates: Sequence[DenseMatrix], max_dirs: int, tol: float, layer_name: str = "proj") -> DeconflictedAdapterSet:
    """Full LoRA-CR for one layer: subspace, scores, gating, reconstruction."""
    subspace = shared_subspace(updates, max_dirs, tol)
    result = resolve(subspace, updates, layer_name)
    logger.debug("layer %s: r_sub=%d mean conflict %.6f", layer_name, subspace.r_sub, result.report.mean_conflict)
    return result


def mean_conflict(report: LayerConflict | ConflictReport, layer: str | None = None) -> float:
    """Arithmetic mean of c_k within a layer, or pooled over all layers."""
    if isinstance(report, ConflictReport):
        if layer is not None:
            return mean_conflict(report.layers[layer])
        pooled = [c for rep in report.layers.values() for c in rep.scores]
    else:
        pooled = list(report.scores)
    if not pooled:
        raise AccountingError("conflict report has no directions")
    return float(np.mean(pooled))


def refactor(update: DenseMatrix, rank: int, layer_name: str = "proj") -> LoraAdapter:
    """Truncated-SVD factorization with the scale folded in (alpha = rank).

    Exact whenever ``update`` has rank <= ``rank``.
    """
    if rank < 1:
        raise ParameterError(f"refactor rank must be >= 1, got {rank}")
    svd = svd_thin(update)
    k = min(rank, svd.k)
    sigma = np.asarray(svd.singular_values[:k])
    b = svd.U.values[:, :k] * sigma
    a = svd.V.values[:, :k].T
    return LoraAdapter(layer_name=layer_name, B=DenseMatrix.of(b), A=DenseMatrix.of(a), alpha=float(k))


def _row_cosines(z: np.ndarray, consensus: np.ndarray) -> np.ndarray:
    """cos(z_{i,k}, z̄_k) with the zero-vector convention; shape (N, r)."""
    zn = np.linalg.norm(z, axis=2)
    cn = np.linalg.norm(consensus, axis=1)
    dots = np.einsum("nkd,kd->nk", z, consensus)
    out = np.zeros_like(dots)
    ok = (zn >= NORM_TOL) & (cn >= NORM_TOL)[None, :]
    denom = zn * cn[None, :]
    out[ok] = dots[ok] / denom[ok]
    return np.clip(out, -1.0, 1.0)


def _check_common_shape(mats: Sequence[DenseMatrix], op: str) -> None:
    if not mats:
        raise ParameterError(f"{op} needs at least one matrix")
    shapes = {m.shape for m in mats}
    if len(shapes) != 1:
        raise ShapeError(op, *sorted(shapes))
