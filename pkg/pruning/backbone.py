"""Backbone models: one linear layer, or a two-layer linear chain."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Mapping

import numpy as np

from linalg.matrix import DenseMatrix
from utils.errors import ParameterError, ShapeError

SINGLE = "single"
CHAIN = "chain"
TOPOLOGIES = (SINGLE, CHAIN)

# Layer names used by the simulator. In a chain, hidden units couple the rows
# of UP with the columns of DOWN.
PROJ = "proj"
UP = "up"
DOWN = "down"


@dataclass(frozen=True)
class Backbone:
    """Ordered layers applied input-to-output: y = W_L ... W_1 x."""

    layers: tuple[tuple[str, DenseMatrix], ...]
    topology: str = SINGLE

    def __post_init__(self):
        if not self.layers:
            raise ParameterError("backbone has no layers")
        if self.topology not in TOPOLOGIES:
            raise ParameterError(f"unknown topology {self.topology!r}")
        expected = 1 if self.topology == SINGLE else 2
        if len(self.layers) != expected:
            raise ParameterError(f"{self.topology} backbone needs {expected} layer(s), got {len(self.layers)}")
        names = [name for name, _ in self.layers]
        if len(set(names)) != len(names):
            raise ParameterError(f"duplicate layer names {names}")
        for (prev_name, prev), (name, w) in zip(self.layers, self.layers[1:]):
            if w.cols != prev.rows:
                raise ShapeError("chain", prev.shape, w.shape, where=f"{prev_name} -> {name}")

    @classmethod
    def single(cls, w: DenseMatrix, name: str = PROJ) -> "Backbone":
        return cls(layers=((name, DenseMatrix.of(w)),), topology=SINGLE)

    @classmethod
    def chain(cls, up: DenseMatrix, down: DenseMatrix) -> "Backbone":
        return cls(layers=((UP, DenseMatrix.of(up)), (DOWN, DenseMatrix.of(down))), topology=CHAIN)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.layers)

    @property
    def d_in(self) -> int:
        return self.layers[0][1].cols

    @property
    def d_out(self) -> int:
        return self.layers[-1][1].rows

    @property
    def num_params(self) -> int:
        return sum(w.rows * w.cols for _, w in self.layers)

    def __iter__(self) -> Iterator[tuple[str, DenseMatrix]]:
        return iter(self.layers)

    def layer(self, name: str) -> DenseMatrix:
        for layer_name, w in self.layers:
            if layer_name == name:
                return w
        raise KeyError(name)

    def replace(self, weights: Mapping[str, DenseMatrix]) -> "Backbone":
        """New backbone with some layers swapped out; shapes may change."""
        unknown = set(weights) - set(self.names)
        if unknown:
            raise KeyError(f"unknown layer(s): {sorted(unknown)}")
        layers = tuple((name, DenseMatrix.of(weights.get(name, w))) for name, w in self.layers)
        return Backbone(layers=layers, topology=self.topology)

    def effective(self) -> DenseMatrix:
        """The end-to-end linear map (product of all layers)."""
        out = self.layers[0][1].values
        for _, w in self.layers[1:]:
            out = w.values @ out
        return DenseMatrix.of(out)

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Apply to a batch of column inputs (d_in x n)."""
        h = np.asarray(x, dtype=np.float64)
        if h.shape[0] != self.d_in:
            raise ShapeError("forward", (self.d_in,), h.shape)
        for _, w in self.layers:
            h = w.values @ h
        return h
