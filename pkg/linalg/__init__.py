"""Dense linear algebra for desk-scale adapters."""
from linalg.matrix import DenseMatrix, cosine, matmul
from linalg.svd import SvdResult, svd_thin

__all__ = ["DenseMatrix", "SvdResult", "cosine", "matmul", "svd_thin"]
