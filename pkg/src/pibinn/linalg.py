"""Dense and block-diagonal linear algebra used by every other module.

Dense matrices are plain ``float64`` numpy arrays. Block-diagonal operators
keep only their diagonal blocks and are never materialized outside tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, NonConvergenceError

__all__ = [
    "BlockDiagOperator",
    "as_dense",
    "dct_matrix",
    "index_set",
    "matvec",
    "spectral_norm",
    "submatrix",
    "transpose_matvec",
]


def as_dense(M) -> np.ndarray:
    """Validate ``M`` as a finite 2-D float64 array and return it."""
    arr = np.asarray(M, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"expected a 2-D matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("matrix has non-finite entries")
    return arr


@dataclass(frozen=True, eq=False)
class BlockDiagOperator:
    """Block-diagonal operator ``BlockDiag(B_1, ..., B_u)`` with ``v x p`` blocks.

    ``blocks`` has shape ``(1, v, p)`` when one block is repeated ``repeat``
    times (``I_u kron B``), or ``(repeat, v, p)`` for distinct blocks.
    """

    blocks: np.ndarray
    repeat: int

    def __post_init__(self):
        blocks = np.asarray(self.blocks, dtype=np.float64)
        if blocks.ndim == 2:
            blocks = blocks[None]
        if blocks.ndim != 3:
            raise DimensionError(f"blocks must be 2-D or 3-D, got shape {blocks.shape}")
        if self.repeat < 1:
            raise ValueError("repeat must be >= 1")
        if blocks.shape[0] not in (1, self.repeat):
            raise DimensionError(
                f"{blocks.shape[0]} distinct blocks do not match repeat={self.repeat}")
        if not np.all(np.isfinite(blocks)):
            raise ValueError("block has non-finite entries")
        blocks.setflags(write=False)
        object.__setattr__(self, "blocks", blocks)

    @classmethod
    def repeated(cls, block, repeat: int) -> "BlockDiagOperator":
        return cls(np.asarray(block, dtype=np.float64)[None], repeat)

    @classmethod
    def from_blocks(cls, blocks) -> "BlockDiagOperator":
        blocks = np.asarray(blocks, dtype=np.float64)
        return cls(blocks, blocks.shape[0])

    @property
    def block_shape(self) -> tuple[int, int]:
        return self.blocks.shape[1], self.blocks.shape[2]

    @property
    def shape(self) -> tuple[int, int]:
        v, p = self.block_shape
        return v * self.repeat, p * self.repeat

    @property
    def tied(self) -> bool:
        return self.blocks.shape[0] == 1

    def apply_blocks(self, X: np.ndarray) -> np.ndarray:
        """Apply to a batch arranged as ``(batch, u, p)``; returns ``(batch, u, v)``."""
        if self.tied:
            return X @ self.blocks[0].T
        return np.einsum("bup,uvp->buv", X, self.blocks)

    def apply_blocks_T(self, R: np.ndarray) -> np.ndarray:
        """Adjoint of :meth:`apply_blocks`: ``(batch, u, v) -> (batch, u, p)``."""
        if self.tied:
            return R @ self.blocks[0]
        return np.einsum("buv,uvp->bup", R, self.blocks)

    def materialize(self) -> np.ndarray:
        """Dense equivalent. Only meant for tests and tiny operators."""
        v, p = self.block_shape
        out = np.zeros(self.shape)
        for i in range(self.repeat):
            blk = self.blocks[0] if self.tied else self.blocks[i]
            out[i * v:(i + 1) * v, i * p:(i + 1) * p] = blk
        return out


def _vector(x, length: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != length:
        raise DimensionError(f"vector of length {length} expected, got shape {x.shape}")
    return x


def matvec(M, x) -> np.ndarray:
    """Compute ``M @ x`` for a dense matrix or a :class:`BlockDiagOperator`."""
    if isinstance(M, BlockDiagOperator):
        v, p = M.block_shape
        x = _vector(x, p * M.repeat)
        return M.apply_blocks(x.reshape(1, M.repeat, p)).reshape(-1)
    M = as_dense(M)
    return M @ _vector(x, M.shape[1])


def transpose_matvec(M, x) -> np.ndarray:
    """Compute ``M.T @ x``."""
    if isinstance(M, BlockDiagOperator):
        v, p = M.block_shape
        x = _vector(x, v * M.repeat)
        return M.apply_blocks_T(x.reshape(1, M.repeat, v)).reshape(-1)
    M = as_dense(M)
    return M.T @ _vector(x, M.shape[0])


def spectral_norm(M, tol: float = 1e-9, max_iter: int = 10_000, seed: int = 0) -> float:
    """Largest singular value by power iteration on ``M.T @ M``.

    The start vector is a seeded pseudo-random unit vector, so repeated calls
    give identical results. Raises :class:`NonConvergenceError` (carrying the
    last estimate) when the relative change never drops below ``tol``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    M = as_dense(M)
    if M.size == 0 or not np.any(M):
        return 0.0
    G = M.T @ M
    x = np.random.default_rng(seed).standard_normal(G.shape[0])
    x /= np.linalg.norm(x)
    est = 0.0
    for _ in range(max_iter):
        y = G @ x
        ny = np.linalg.norm(y)
        if ny == 0.0:
            return 0.0
        new = float(np.sqrt(ny))
        x = y / ny
        if abs(new - est) <= tol * max(new, 1e-300):
            return float(np.sqrt(x @ G @ x))
        est = new
    raise NonConvergenceError(
        f"power iteration did not converge in {max_iter} iterations", estimate=est)


def index_set(indices, ambient: int) -> np.ndarray:
    """Return sorted distinct indices, checking they lie in ``[0, ambient)``."""
    idx = np.unique(np.asarray(indices, dtype=np.int64).reshape(-1))
    if idx.size and (idx[0] < 0 or idx[-1] >= ambient):
        raise IndexError(f"index set {idx.tolist()} out of range for size {ambient}")
    return idx


def submatrix(M, rows=None, cols=None) -> np.ndarray:
    """Select rows and/or columns by index set; ``None`` keeps the whole axis."""
    M = as_dense(M)
    r = slice(None) if rows is None else index_set(rows, M.shape[0])
    c = slice(None) if cols is None else index_set(cols, M.shape[1])
    return M[r][:, c].copy()


def dct_matrix(n: int) -> np.ndarray:
    """Orthonormal DCT-II matrix ``D`` so that ``D @ x`` gives DCT coefficients."""
    if n < 1:
        raise ValueError("n must be >= 1")
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    D = np.cos(np.pi * (2 * i + 1) * k / (2 * n)) * np.sqrt(2.0 / n)
    D[0] /= np.sqrt(2.0)
    return D
