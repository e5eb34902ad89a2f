"""Small value types shared across packages."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from utils.errors import ShapeError


@dataclass(frozen=True)
class Batch:
    """Column-sample batch: ``inputs`` is d_in x n, ``targets`` is d_out x n."""

    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        if self.inputs.ndim != 2 or self.targets.ndim != 2 or self.inputs.shape[1] != self.targets.shape[1]:
            raise ShapeError("Batch", self.inputs.shape, self.targets.shape)
        for arr in (self.inputs, self.targets):
            arr.flags.writeable = False

    @classmethod
    def of(cls, inputs, targets) -> "Batch":
        return cls(np.array(inputs, dtype=np.float64), np.array(targets, dtype=np.float64))

    @property
    def size(self) -> int:
        return self.inputs.shape[1]

    def select_outputs(self, rows) -> "Batch":
        """Keep only the target rows in ``rows``, in the given order."""
        idx = np.asarray(rows, dtype=np.intp)
        if idx.size and (idx.min() < 0 or idx.max() >= self.targets.shape[0]):
            raise ShapeError("select_outputs", self.targets.shape, (idx.size, self.size))
        return Batch(self.inputs, self.targets[idx])
