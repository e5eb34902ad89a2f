"""LoRA factor pairs, initialization and materialization."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from linalg.matrix import DenseMatrix, matmul
from utils.errors import ParameterError, ShapeError


@dataclass(frozen=True)
class LoraAdapter:
    """Low-rank update ``(alpha / rank) * B @ A`` for one layer.

    B is d_out x rank, A is rank x d_in. When the adapter was trained on a
    pruned layer, d_out/d_in are the pruned dimensions.
    """

    layer_name: str
    B: DenseMatrix
    A: DenseMatrix
    alpha: float

    def __post_init__(self):
        if self.B.cols != self.A.rows:
            raise ShapeError("LoraAdapter", self.B.shape, self.A.shape, where=f"layer {self.layer_name!r}")
        rank = self.B.cols
        if rank < 1:
            raise ParameterError(f"layer {self.layer_name!r}: rank must be >= 1")
        if rank > min(self.B.rows, self.A.cols):
            raise ParameterError(
                f"layer {self.layer_name!r}: rank {rank} exceeds min(d_out={self.B.rows}, d_in={self.A.cols})"
            )
        if not self.alpha > 0:
            raise ParameterError(f"layer {self.layer_name!r}: alpha must be positive, got {self.alpha!r}")

    @property
    def rank(self) -> int:
        return self.B.cols

    @property
    def d_out(self) -> int:
        return self.B.rows

    @property
    def d_in(self) -> int:
        return self.A.cols

    @property
    def scale(self) -> float:
        return self.alpha / self.rank

    def with_factors(self, B: DenseMatrix, A: DenseMatrix) -> "LoraAdapter":
        return LoraAdapter(layer_name=self.layer_name, B=B, A=A, alpha=self.alpha)


def init_adapter(d_out: int, d_in: int, rank: int, alpha: float, seed: int, *, layer_name: str = "proj") -> LoraAdapter:
    """B = 0 and A ~ N(0, 1/d_in), so the initial update is exactly zero."""
    if rank < 1 or rank > min(d_out, d_in):
        raise ParameterError(f"rank {rank} must lie in [1, min(d_out={d_out}, d_in={d_in})]")
    rng = np.random.default_rng(seed)
    a = rng.normal(0.0, np.sqrt(1.0 / d_in), size=(rank, d_in))
    return LoraAdapter(layer_name=layer_name, B=DenseMatrix.zeros(d_out, rank), A=DenseMatrix.of(a), alpha=float(alpha))


def materialize(adapter: LoraAdapter) -> DenseMatrix:
    """Effective update ΔW = (alpha / rank) · B · A."""
    return matmul(adapter.B, adapter.A) * adapter.scale
