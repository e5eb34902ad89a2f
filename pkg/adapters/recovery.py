"""Zero-pad pruned-space LoRA factors back into the full backbone dimensions.

The binary selection matrices S_row and S_col are never built: scattering the
pruned rows of B to I_row (and the pruned columns of A to I_col) is the same
operation as B_R = S_row B_P and A_R = A_P S_col^T.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from adapters.lora import LoraAdapter
from linalg.matrix import DenseMatrix
from pruning.selection import LayerPrune, PruneMap
from utils.errors import MapError, RecoveryError


@dataclass(frozen=True)
class RecoveredAdapter:
    adapter: LoraAdapter
    prune: LayerPrune

    @property
    def layer_name(self) -> str:
        return self.adapter.layer_name


def recover(adapter: LoraAdapter, prune_map: PruneMap | LayerPrune, full_dims: tuple[int, int]) -> RecoveredAdapter:
    """Scatter B rows to I_row and A columns to I_col; rank and alpha are kept."""
    name = adapter.layer_name
    if isinstance(prune_map, PruneMap):
        try:
            lp = prune_map.layer(name)
        except MapError as e:
            raise RecoveryError(name, str(e)) from e
    else:
        lp = prune_map

    d_out, d_in = full_dims
    if (adapter.d_out, adapter.d_in) != (len(lp.rows), len(lp.cols)):
        raise RecoveryError(
            name,
            f"adapter is {adapter.d_out}x{adapter.d_in} but the map retains {len(lp.rows)}x{len(lp.cols)}",
        )
    if lp.rows[-1] >= d_out or lp.cols[-1] >= d_in:
        raise RecoveryError(name, f"retained indices exceed full dims {d_out}x{d_in}")

    b = np.zeros((d_out, adapter.rank))
    b[np.asarray(lp.rows, dtype=np.intp), :] = adapter.B.values
    a = np.zeros((adapter.rank, d_in))
    a[:, np.asarray(lp.cols, dtype=np.intp)] = adapter.A.values
    full = LoraAdapter(layer_name=name, B=DenseMatrix.of(b), A=DenseMatrix.of(a), alpha=adapter.alpha)
    return RecoveredAdapter(adapter=full, prune=lp)


def select_back(recovered: RecoveredAdapter) -> LoraAdapter:
    """Inverse of ``recover``: restrict the full factors to the retained indices."""
    lp = recovered.prune
    full = recovered.adapter
    return full.with_factors(full.B.select(rows=lp.rows), full.A.select(cols=lp.cols))
