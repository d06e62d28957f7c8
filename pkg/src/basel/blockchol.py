"""Block-structured SPD matrices, Cholesky factors, and persistent
bordered extension.

The extension path is the workhorse of greedy selection: given a factor L
of the current submatrix M0 and a candidate border (B, D), the factor of
``[[M0, B], [B^T, D]]`` is obtained from a triangular solve and a small
Cholesky of the candidate's Schur block, never rescanning existing
columns.  The marginal log-determinant gain falls out of the new diagonal
entries.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import NotPositiveDefinite

PD_TOL_REL = 1e-12


# -------------------------------------------------------------------
# optional flop instrumentation (used by the no-rescan property test)
# -------------------------------------------------------------------

_COUNTER = None


@contextmanager
def flop_counter():
    """Count model flops of chol/solve work done inside the block.

    Yields a dict with keys ``chol``, ``solve``, ``syrk`` (float flop
    tallies) and ``chol_sizes`` (list of factored matrix dimensions).
    """
    global _COUNTER
    prev = _COUNTER
    _COUNTER = {"chol": 0.0, "solve": 0.0, "syrk": 0.0, "chol_sizes": []}
    try:
        yield _COUNTER
    finally:
        _COUNTER = prev


def _count(kind, flops, size=None):
    if _COUNTER is not None:
        _COUNTER[kind] += flops
        if size is not None:
            _COUNTER["chol_sizes"].append(size)


# -------------------------------------------------------------------
# matrix / factor containers
# -------------------------------------------------------------------

class BlockSparseSPD:
    """Symmetric positive (semi)definite matrix with a block partition.

    Stored dense internally (problem sizes here are a few hundred rows);
    the block map records which off-diagonal blocks are structurally
    non-zero so sparsity can be audited.
    """

    def __init__(self, dense, block_sizes, presence=None):
        dense = np.asarray(dense, dtype=np.float64)
        block_sizes = [int(b) for b in block_sizes]
        if dense.shape[0] != dense.shape[1]:
            raise ValueError("matrix must be square")
        if sum(block_sizes) != dense.shape[0]:
            raise ValueError("block sizes do not tile the matrix")
        if not np.allclose(dense, dense.T, atol=1e-9 * (1.0 + np.abs(dense).max(initial=0.0))):
            raise ValueError("matrix must be symmetric")
        self._dense = 0.5 * (dense + dense.T)  # exact symmetry
        self.block_sizes = tuple(block_sizes)
        self.offsets = np.concatenate([[0], np.cumsum(block_sizes)]).astype(np.int64)
        n = len(block_sizes)
        if presence is None:
            presence = np.ones((n, n), dtype=bool)
        self.presence = np.asarray(presence, dtype=bool)

    @property
    def dim(self):
        return self._dense.shape[0]

    @property
    def n_blocks(self):
        return len(self.block_sizes)

    def block(self, i, j):
        """Dense (i, j) block; stored symmetric, any (i, j) is valid."""
        oi, oj = self.offsets[i], self.offsets[j]
        return self._dense[oi:oi + self.block_sizes[i], oj:oj + self.block_sizes[j]]

    def nonzero_blocks(self):
        """Lower-triangle (i, j), j <= i, of structurally non-zero blocks."""
        out = []
        for i in range(self.n_blocks):
            for j in range(i + 1):
                if self.presence[i, j]:
                    out.append((i, j))
        return out

    def submatrix(self, block_ids):
        """Dense principal submatrix for the given block indices, in order."""
        rows = np.concatenate([
            np.arange(self.offsets[b], self.offsets[b] + self.block_sizes[b])
            for b in block_ids]) if block_ids else np.empty(0, dtype=np.int64)
        return self._dense[np.ix_(rows, rows)]

    def to_dense(self):
        return self._dense.copy()


@dataclass(frozen=True, eq=False)
class CholFactor:
    """Lower-triangular factor with cached logDet; immutable value."""

    L: np.ndarray
    block_sizes: tuple
    logdet: float
    indices: tuple  # appended block-column labels, in factorization order

    @property
    def dim(self):
        return self.L.shape[0]

    def recompute_logdet(self):
        return 2.0 * float(np.sum(np.log(np.diag(self.L)))) if self.dim else 0.0

    def solve(self, b):
        """Solve (L L^T) x = b."""
        y = kernels.trisolve_lower(self.L, np.asarray(b, dtype=np.float64).reshape(self.dim, -1))
        x = kernels.trisolve_lower(self.L.T[::-1, ::-1].copy(), y[::-1])[::-1]
        return x.reshape(np.shape(b))


def _piv_tol(diag):
    top = float(np.max(diag, initial=0.0))
    return PD_TOL_REL * top if top > 0 else 0.0


def cholesky(M) -> CholFactor:
    """Factor an SPD matrix (BlockSparseSPD or dense array)."""
    if isinstance(M, BlockSparseSPD):
        dense = M.to_dense()
        sizes = M.block_sizes
    else:
        dense = np.asarray(M, dtype=np.float64)
        sizes = (dense.shape[0],) if dense.shape[0] else ()
    n = dense.shape[0]
    if n == 0:
        return CholFactor(np.zeros((0, 0)), (), 0.0, ())
    L, pivot = kernels.chol_lower(dense, _piv_tol(np.diag(dense)))
    _count("chol", n ** 3 / 3.0, size=n)
    if pivot >= 0:
        raise NotPositiveDefinite(pivot)
    logdet_val = 2.0 * float(np.sum(np.log(np.diag(L))))
    return CholFactor(L, tuple(sizes), logdet_val, tuple(range(len(sizes))))


def _extension_parts(factor: CholFactor, B, D):
    """Shared work of gain evaluation and committed extension."""
    n = factor.dim
    D = np.asarray(D, dtype=np.float64)
    d = D.shape[0]
    B = np.asarray(B, dtype=np.float64).reshape(n, d)
    if n:
        L1 = kernels.trisolve_lower(factor.L, B)
        _count("solve", float(n) * n * d)
        S = D - L1.T @ L1
        _count("syrk", float(n) * d * d)
    else:
        L1 = np.zeros((0, d))
        S = D.copy()
    L2, pivot = kernels.chol_lower(S, _piv_tol(np.diag(D)))
    _count("chol", d ** 3 / 3.0, size=d)
    if pivot >= 0:
        raise NotPositiveDefinite(n + pivot)
    gain = 2.0 * float(np.sum(np.log(np.diag(L2))))
    return L1, L2, gain


def extension_gain(factor: CholFactor, B, D) -> float:
    """Marginal logDet of appending border (B, D), without committing."""
    return _extension_parts(factor, B, D)[2]


def extend_cholesky(factor: CholFactor, B, D, index=None):
    """Persistent bordered extension; returns ``(new_factor, gain)``.

    The input factor is never modified; the new factor copies the old
    columns and appends ``[L1^T, L2]`` as the new block row.
    """
    L1, L2, gain = _extension_parts(factor, B, D)
    n, d = factor.dim, L2.shape[0]
    L = np.zeros((n + d, n + d))
    L[:n, :n] = factor.L
    L[n:, :n] = L1.T
    L[n:, n:] = L2
    if index is None:
        index = len(factor.indices)
    return (CholFactor(L, factor.block_sizes + (d,), factor.logdet + gain,
                       factor.indices + (index,)),
            gain)


def logdet(factor: CholFactor) -> float:
    """Cached log-determinant of the factored matrix."""
    return factor.logdet
