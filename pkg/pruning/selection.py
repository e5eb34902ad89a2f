"""Quantile group retention, prune maps and pruning-ratio accounting."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Mapping

from pruning.backbone import CHAIN, SINGLE, Backbone
from pruning.importance import GroupImportance
from utils.errors import AccountingError, MapError, ParameterError

# Documented parameter reduction of the reference 8B backbone:
# nominal ratio -> (exact ratio, params before, params after).
PARAMETER_TABLE: dict[float, tuple[float, int, int]] = {
    0.2: (0.16, 8_030_261_248, 6_734_745_600),
    0.4: (0.34, 8_030_261_248, 5_271_851_008),
    0.6: (0.50, 8_030_261_248, 3_976_728_576),
    0.8: (0.69, 8_030_261_248, 2_513_833_984),
}


@dataclass(frozen=True)
class LayerPrune:
    """Retained index sets of one layer and the layer's full shape."""

    name: str
    rows: tuple[int, ...]
    cols: tuple[int, ...]
    full_rows: int
    full_cols: int

    def __post_init__(self):
        for label, idx, bound in (("row", self.rows, self.full_rows), ("col", self.cols, self.full_cols)):
            if not idx:
                raise MapError(f"layer {self.name!r}: empty retained {label} set")
            if any(b <= a for a, b in zip(idx, idx[1:])):
                raise MapError(f"layer {self.name!r}: retained {label} indices must be strictly increasing")
            if idx[0] < 0 or idx[-1] >= bound:
                raise MapError(f"layer {self.name!r}: {label} index out of bounds for size {bound}")

    @classmethod
    def full(cls, name: str, rows: int, cols: int) -> "LayerPrune":
        return cls(name=name, rows=tuple(range(rows)), cols=tuple(range(cols)), full_rows=rows, full_cols=cols)

    @property
    def params_before(self) -> int:
        return self.full_rows * self.full_cols

    @property
    def params_after(self) -> int:
        return len(self.rows) * len(self.cols)

    @property
    def is_identity(self) -> bool:
        return len(self.rows) == self.full_rows and len(self.cols) == self.full_cols

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "rows": list(self.rows),
            "cols": list(self.cols),
            "full_rows": self.full_rows,
            "full_cols": self.full_cols,
        }


@dataclass(frozen=True)
class PruneMap:
    """Per-layer retained indices; houses S (before) and S^P (after)."""

    layers: tuple[LayerPrune, ...]
    topology: str = SINGLE

    def __post_init__(self):
        if not self.layers:
            raise MapError("prune map has no layers")
        if self.topology == CHAIN and len(self.layers) == 2:
            up, down = self.layers
            if up.rows != down.cols:
                raise MapError("chain coupling violated: up rows and down cols must retain the same hidden units")

    def layer(self, name: str) -> LayerPrune:
        for lp in self.layers:
            if lp.name == name:
                return lp
        raise MapError(f"prune map has no layer {name!r}")

    @property
    def output_rows(self) -> tuple[int, ...] | None:
        """Retained rows of the output layer, or None when every output survives."""
        last = self.layers[-1]
        return None if len(last.rows) == last.full_rows else last.rows

    @property
    def total_params_before(self) -> int:
        return sum(lp.params_before for lp in self.layers)

    @property
    def total_params_after(self) -> int:
        return sum(lp.params_after for lp in self.layers)

    @property
    def ratio(self) -> float:
        return pruning_ratio(self.total_params_before, self.total_params_after)

    @classmethod
    def identity(cls, backbone: Backbone) -> "PruneMap":
        return cls(layers=tuple(LayerPrune.full(n, w.rows, w.cols) for n, w in backbone), topology=backbone.topology)

    def to_dict(self) -> dict[str, Any]:
        return {
            "topology": self.topology,
            "layers": [lp.to_dict() for lp in self.layers],
            "total_params_before": self.total_params_before,
            "total_params_after": self.total_params_after,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "PruneMap":
        try:
            layers = tuple(
                LayerPrune(
                    name=str(d["name"]),
                    rows=tuple(int(i) for i in d["rows"]),
                    cols=tuple(int(i) for i in d["cols"]),
                    full_rows=int(d["full_rows"]),
                    full_cols=int(d["full_cols"]),
                )
                for d in data["layers"]
            )
            return cls(layers=layers, topology=str(data.get("topology", SINGLE)))
        except (KeyError, TypeError, ValueError) as e:
            raise MapError(f"malformed prune map: {e}") from e


def select_groups(importance: GroupImportance, prune_ratio: float) -> PruneMap:
    """Keep the top ceil((1 - ratio) * G) groups; ties keep the lower index."""
    if not 0.0 <= prune_ratio <= 1.0:
        raise ParameterError(f"prune ratio must lie in [0, 1], got {prune_ratio!r}")
    g = importance.num_groups
    # round first so ratios like 2/3 do not pick up a spurious extra group
    keep = max(1, math.ceil(round((1.0 - prune_ratio) * g, 9)))
    order = sorted(range(g), key=lambda i: (-importance.scores[i], i))
    retained = tuple(sorted(order[:keep]))

    layers = []
    if importance.topology == CHAIN:
        (up_name, up_rows, up_cols), (down_name, down_rows, down_cols) = importance.layer_shapes
        layers.append(LayerPrune(up_name, retained, tuple(range(up_cols)), up_rows, up_cols))
        layers.append(LayerPrune(down_name, tuple(range(down_rows)), retained, down_rows, down_cols))
    else:
        ((name, rows, cols),) = importance.layer_shapes
        layers.append(LayerPrune(name, retained, tuple(range(cols)), rows, cols))
    return PruneMap(layers=tuple(layers), topology=importance.topology)


def apply_prune(backbone: Backbone, prune_map: PruneMap) -> Backbone:
    """Each layer becomes W0[I_row, I_col]."""
    if prune_map.topology != backbone.topology:
        raise MapError(f"map topology {prune_map.topology!r} does not match backbone {backbone.topology!r}")
    weights = {}
    for name, w in backbone:
        lp = prune_map.layer(name)
        if (lp.full_rows, lp.full_cols) != w.shape:
            raise MapError(f"layer {name!r}: map built for {lp.full_rows}x{lp.full_cols}, layer is {w.rows}x{w.cols}")
        weights[name] = w.select(lp.rows, lp.cols)
    return backbone.replace(weights)


def pruning_ratio(s_before: int, s_after: int) -> float:
    """(S - S^P) / S."""
    if s_before <= 0:
        raise AccountingError(f"parameter count before pruning must be positive, got {s_before}")
    if s_after < 0 or s_after > s_before:
        raise AccountingError(f"parameter count after pruning ({s_after}) must lie in [0, {s_before}]")
    return (s_before - s_after) / s_before
