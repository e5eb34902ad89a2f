"""Thin singular value decomposition by one-sided (Hestenes) Jacobi rotations."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from linalg.matrix import DenseMatrix
from utils.errors import DataError, ParameterError

logger = logging.getLogger(__name__)

MAX_SWEEPS = 80


@dataclass(frozen=True)
class SvdResult:
    """``m = U @ diag(singular_values) @ V.T`` with k = min(rows, cols)."""

    U: DenseMatrix
    singular_values: tuple[float, ...]
    V: DenseMatrix

    @property
    def k(self) -> int:
        return len(self.singular_values)

    def reconstruct(self) -> DenseMatrix:
        u = self.U.values
        return DenseMatrix.of((u * np.asarray(self.singular_values)) @ self.V.values.T)


def svd_thin(m: DenseMatrix, tol: float = 1e-14) -> SvdResult:
    """Thin SVD of ``m``.

    Columns of a working copy are rotated pairwise until every pair is
    orthogonal to within ``tol`` (relative to the column norms). Column norms
    are then the singular values. Within each column of U the entry of largest
    magnitude (lowest index on ties) is made nonnegative.
    """
    m = DenseMatrix.of(m)
    if m.rows == 0 or m.cols == 0:
        raise ParameterError("svd_thin needs a nonempty matrix")
    if not tol > 0:
        raise ParameterError(f"svd_thin tolerance must be positive, got {tol!r}")

    transposed = m.rows < m.cols
    work = (m.values.T if transposed else m.values).copy()
    u, sigma, v = _one_sided_jacobi(work, tol)
    if transposed:
        u, v = v, u

    u, v = _fix_signs(u, v)
    return SvdResult(U=DenseMatrix.of(u), singular_values=tuple(float(s) for s in sigma), V=DenseMatrix.of(v))


def _one_sided_jacobi(g: np.ndarray, tol: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Orthogonalize the columns of a tall matrix ``g`` (rows >= cols)."""
    rows, n = g.shape
    eps = np.finfo(np.float64).eps
    # rounding keeps |gamma| near eps*sqrt(alpha*beta); never demand better than that
    threshold = max(tol, 4.0 * rows * eps)
    # a column this short is rounding noise of the others and is treated as zero
    dead = 8.0 * rows * eps * float(np.linalg.norm(g))
    floor = dead * dead
    v = np.eye(n)
    for sweep in range(MAX_SWEEPS):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                gp = g[:, p]
                gq = g[:, q]
                alpha = float(gp @ gp)
                beta = float(gq @ gq)
                gamma = float(gp @ gq)
                if alpha <= floor or beta <= floor:
                    continue
                if gamma == 0.0 or abs(gamma) <= threshold * np.sqrt(alpha * beta):
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                t = np.copysign(1.0, zeta) / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                new_p = c * gp - s * gq
                new_q = s * gp + c * gq
                g[:, p] = new_p
                g[:, q] = new_q
                vp = v[:, p].copy()
                vq = v[:, q]
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
        if not rotated:
            logger.debug("jacobi converged after %d sweep(s) on %dx%d", sweep + 1, rows, n)
            break
    else:
        raise DataError(f"jacobi SVD did not converge within {MAX_SWEEPS} sweeps")

    sigma = np.linalg.norm(g, axis=0)
    sigma[sigma <= dead] = 0.0
    order = np.argsort(-sigma, kind="stable")
    sigma = sigma[order]
    g = g[:, order]
    v = v[:, order]

    u = np.zeros_like(g)
    live = sigma > 0.0
    u[:, live] = g[:, live] / sigma[live]
    if not np.all(live):
        u = _complete_basis(u, live)
    return u, sigma, v


def _complete_basis(u: np.ndarray, live: np.ndarray) -> np.ndarray:
    """Fill the dead columns of ``u`` with unit vectors orthogonal to the rest."""
    rows = u.shape[0]
    basis = [u[:, j] for j in range(u.shape[1]) if live[j]]
    candidates = iter(np.eye(rows))
    for j in range(u.shape[1]):
        if live[j]:
            continue
        for e in candidates:
            w = e.copy()
            for _ in range(2):
                for b in basis:
                    w -= (b @ w) * b
            norm = np.linalg.norm(w)
            if norm > 0.5:
                w /= norm
                u[:, j] = w
                basis.append(w)
                break
    return u


def _fix_signs(u: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    u = u.copy()
    v = v.copy()
    for j in range(u.shape[1]):
        pivot = int(np.argmax(np.abs(u[:, j])))
        if u[pivot, j] < 0:
            u[:, j] = -u[:, j]
            v[:, j] = -v[:, j]
    return u, v
