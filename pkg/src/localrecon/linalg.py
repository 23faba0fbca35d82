"""Rank-revealing helpers shared by the dynamics and observability code."""

from __future__ import annotations

import numpy as np

EPS = np.finfo(float).eps

# Residuals of in-span rows after two projection passes sit at ~1e-13 of the
# block norm on D = 16 systems; genuinely new directions are >~1e-3.
INCREMENTAL_RTOL = 1e-10


def default_rtol(shape) -> float:
    """Relative singular-value cutoff ``max(rows, cols) * eps``."""
    return max(shape) * EPS


def numerical_rank(s: np.ndarray, shape, rtol: float | None = None) -> int:
    """Count singular values above ``rtol * s_max`` (``rtol`` defaults to :func:`default_rtol`)."""
    s = np.asarray(s)
    if s.size == 0 or s[0] == 0:
        return 0
    rtol = default_rtol(shape) if rtol is None else rtol
    return int(np.sum(s > rtol * s[0]))


class RowSpace:
    """Orthonormal basis of a growing row space.

    New rows are projected against the current basis twice (classical
    Gram-Schmidt with one re-orthogonalization pass); the residual is
    accepted through an SVD with a relative cutoff (default
    :data:`INCREMENTAL_RTOL`) applied to the largest singular value of the
    incoming block.
    """

    def __init__(self, n: int, rtol: float | None = None):
        self.n = n
        self.rtol = rtol
        self.basis = np.zeros((0, n), dtype=complex)
        self.residual_spectra: list[np.ndarray] = []

    @property
    def rank(self) -> int:
        return self.basis.shape[0]

    def add(self, rows: np.ndarray) -> np.ndarray:
        """Add ``rows``; return the newly accepted orthonormal rows."""
        rows = np.atleast_2d(np.asarray(rows, dtype=complex))
        if rows.shape[0] == 0:
            return np.zeros((0, self.n), dtype=complex)
        scale = np.linalg.norm(rows, 2)
        if scale == 0:
            self.residual_spectra.append(np.zeros(0))
            return np.zeros((0, self.n), dtype=complex)
        W = rows
        for _ in range(2):
            if self.rank:
                W = W - (W @ self.basis.conj().T) @ self.basis
        _, s, vh = np.linalg.svd(W, full_matrices=False)
        self.residual_spectra.append(s / scale)
        rtol = INCREMENTAL_RTOL if self.rtol is None else self.rtol
        keep = s > rtol * scale
        new = vh[keep]
        if self.rank and new.shape[0]:
            # one more pass keeps the accumulated basis orthonormal to ~eps
            new = new - (new @ self.basis.conj().T) @ self.basis
            q, _ = np.linalg.qr(new.T)
            new = q.T
        self.basis = np.vstack([self.basis, new])
        return new

    def complement(self) -> np.ndarray:
        """Orthonormal columns spanning the orthogonal complement (``n x (n - rank)``)."""
        if self.rank == 0:
            return np.eye(self.n, dtype=complex)
        _, _, vh = np.linalg.svd(self.basis, full_matrices=True)
        return vh[self.rank :].conj().T


def block_krylov(rows0: np.ndarray, op: np.ndarray, max_blocks: int, rtol: float | None = None):
    """Grow ``span{rows0 @ op^j}`` block by block until it stops growing.

    Only the directions accepted at the previous block are propagated, which
    spans the same space as propagating the whole stack. Returns the list of
    cumulative ranks (one entry per block, starting with ``rows0``) and the
    :class:`RowSpace`.
    """
    n = op.shape[0]
    space = RowSpace(n, rtol)
    new = space.add(rows0)
    ranks = [space.rank]
    while len(ranks) < max_blocks and new.shape[0] and space.rank < n:
        new = space.add(new @ op)
        ranks.append(space.rank)
    return ranks, space
