"""Immutable row-major matrix carrier and the products built on it."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from utils.errors import DataError, ShapeError

NORM_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class DenseMatrix:
    """A finite float64 matrix backed by a read-only numpy array.

    Construct through ``DenseMatrix.of`` (copies and validates) or the
    ``zeros``/``identity``/``from_rows`` helpers.
    """

    values: np.ndarray

    def __post_init__(self):
        arr = self.values
        if not isinstance(arr, np.ndarray) or arr.ndim != 2 or arr.dtype != np.float64:
            raise DataError("DenseMatrix needs a 2-D float64 array; use DenseMatrix.of()")
        if not np.all(np.isfinite(arr)):
            raise DataError("DenseMatrix entries must be finite")
        if arr.flags.writeable:
            arr.flags.writeable = False

    @classmethod
    def of(cls, data: "DenseMatrix | np.ndarray | Sequence[Sequence[float]]") -> "DenseMatrix":
        if isinstance(data, DenseMatrix):
            return data
        arr = np.array(data, dtype=np.float64, order="C", copy=True)
        if arr.ndim == 1 and arr.size == 0:
            arr = arr.reshape(0, 0)
        if arr.ndim != 2:
            raise DataError(f"expected a 2-D matrix, got {arr.ndim} dimension(s)")
        return cls(arr)

    @classmethod
    def from_rows(cls, rows: Iterable[Iterable[float]]) -> "DenseMatrix":
        return cls.of([list(r) for r in rows])

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "DenseMatrix":
        return cls(np.zeros((rows, cols), dtype=np.float64))

    @classmethod
    def identity(cls, n: int) -> "DenseMatrix":
        return cls(np.eye(n, dtype=np.float64))

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape  # type: ignore[return-value]

    @property
    def data(self) -> tuple[float, ...]:
        """Entries in row-major order."""
        return tuple(self.values.ravel().tolist())

    @property
    def T(self) -> "DenseMatrix":
        return DenseMatrix.of(self.values.T)

    def frobenius(self) -> float:
        return float(np.linalg.norm(self.values))

    def select(self, rows: Sequence[int] | None = None, cols: Sequence[int] | None = None) -> "DenseMatrix":
        """Sub-matrix on the given row and column index lists."""
        arr = self.values
        if rows is not None:
            arr = arr[np.asarray(rows, dtype=np.intp), :]
        if cols is not None:
            arr = arr[:, np.asarray(cols, dtype=np.intp)]
        return DenseMatrix.of(arr)

    def __add__(self, other: "DenseMatrix") -> "DenseMatrix":
        _same_shape("add", self, other)
        return DenseMatrix.of(self.values + other.values)

    def __sub__(self, other: "DenseMatrix") -> "DenseMatrix":
        _same_shape("subtract", self, other)
        return DenseMatrix.of(self.values - other.values)

    def __mul__(self, scalar: float) -> "DenseMatrix":
        return DenseMatrix.of(self.values * float(scalar))

    __rmul__ = __mul__

    def __neg__(self) -> "DenseMatrix":
        return DenseMatrix.of(-self.values)

    def __matmul__(self, other: "DenseMatrix") -> "DenseMatrix":
        return matmul(self, other)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DenseMatrix):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self.values, other.values))

    def __hash__(self) -> int:
        return hash((self.shape, self.values.tobytes()))

    def __repr__(self) -> str:
        return f"DenseMatrix({self.rows}x{self.cols})"


def matmul(a: DenseMatrix, b: DenseMatrix) -> DenseMatrix:
    """Standard matrix product ``a @ b``."""
    if a.cols != b.rows:
        raise ShapeError("matmul", a.shape, b.shape)
    return DenseMatrix.of(a.values @ b.values)


def cosine(u: Sequence[float] | np.ndarray, v: Sequence[float] | np.ndarray) -> float:
    """Cosine similarity; 0.0 when either vector is (numerically) zero."""
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise ShapeError("cosine", u.shape, v.shape)
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu < NORM_TOL or nv < NORM_TOL:
        return 0.0
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def _same_shape(op: str, a: DenseMatrix, b: DenseMatrix) -> None:
    if a.shape != b.shape:
        raise ShapeError(op, a.shape, b.shape)
