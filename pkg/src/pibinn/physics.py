"""Problem-driven sparsity: block structures, masks, parameter counts, overlap."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError

__all__ = [
    "BlockStructure",
    "SparsityMask",
    "apply_mask",
    "dense_weight_count",
    "fcn_param_count",
    "mask_from_block",
    "mask_from_sensing",
    "overlap_fraction",
    "structured_param_count",
]


@dataclass(frozen=True)
class BlockStructure:
    """``u`` diagonal blocks of size ``v x p``; the full operator is ``vu x pu``."""

    u: int
    v: int
    p: int

    def __post_init__(self):
        if min(self.u, self.v, self.p) < 1:
            raise ValueError(f"block structure needs u, v, p >= 1, got {self}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.v * self.u, self.p * self.u

    def to_json(self) -> dict:
        return {"block": {"u": self.u, "v": self.v, "p": self.p}}


class SparsityMask:
    """Boolean pattern of weight positions allowed to be nonzero."""

    def __init__(self, active):
        active = np.array(active, dtype=bool)
        if active.ndim != 2:
            raise DimensionError(f"mask must be 2-D, got shape {active.shape}")
        active.setflags(write=False)
        self.active = active

    @classmethod
    def from_coords(cls, rows: int, cols: int, coords) -> "SparsityMask":
        active = np.zeros((rows, cols), dtype=bool)
        coords = np.asarray(coords, dtype=np.int64).reshape(-1, 2)
        if coords.size and (coords.min() < 0 or coords[:, 0].max() >= rows
                            or coords[:, 1].max() >= cols):
            raise IndexError("mask coordinate out of bounds")
        active[coords[:, 0], coords[:, 1]] = True
        return cls(active)

    @property
    def shape(self) -> tuple[int, int]:
        return self.active.shape

    @property
    def n_active(self) -> int:
        return int(self.active.sum())

    def coords(self) -> list[tuple[int, int]]:
        return [(int(i), int(j)) for i, j in zip(*np.nonzero(self.active))]

    def to_json(self) -> dict:
        r, c = self.shape
        return {"rows": r, "cols": c, "active": [list(rc) for rc in self.coords()]}

    @classmethod
    def from_json(cls, obj: dict) -> "SparsityMask":
        return cls.from_coords(obj["rows"], obj["cols"], obj["active"])

    def __eq__(self, other):
        return isinstance(other, SparsityMask) and np.array_equal(self.active, other.active)

    def __repr__(self):
        return f"SparsityMask(shape={self.shape}, n_active={self.n_active})"


def mask_from_block(structure: BlockStructure) -> SparsityMask:
    """Union of the ``u`` diagonal ``v x p`` blocks of the ``vu x pu`` grid."""
    u, v, p = structure.u, structure.v, structure.p
    return SparsityMask(np.kron(np.eye(u, dtype=bool), np.ones((v, p), dtype=bool)))


def mask_from_sensing(pattern, tol: float = 0.0) -> SparsityMask:
    """Weights may be nonzero exactly where the sensing operator couples entries.

    Weights are stored with the same orientation as the sensing matrix
    (``W.T`` multiplies the residual), so the pattern is used as is.
    """
    if tol < 0:
        raise ValueError("tol must be >= 0")
    pattern = np.asarray(pattern, dtype=np.float64)
    return SparsityMask(np.abs(pattern) > tol)


def apply_mask(W, mask: SparsityMask) -> np.ndarray:
    W = np.asarray(W, dtype=np.float64)
    if W.shape != mask.shape:
        raise DimensionError(f"weight shape {W.shape} does not match mask {mask.shape}")
    return np.where(mask.active, W, 0.0)


def structured_param_count(structure: BlockStructure, K: int,
                           include_scalars: bool = False) -> int:
    """Trainable weight entries of a tied block-diagonal net: one ``v x p`` block per layer.

    With ``include_scalars`` the ``K`` thresholds and the global scale are added.
    """
    n = K * structure.v * structure.p
    return n + K + 1 if include_scalars else n


def dense_weight_count(structure: BlockStructure, K: int = 1) -> int:
    """Weight entries of the dense (unstructured) equivalent net."""
    rows, cols = structure.shape
    return K * rows * cols


def fcn_param_count(K: int, m: int, n: int) -> int:
    """Weights of a ``K``-layer fully connected net with ``m x n`` and ``n x n`` layers."""
    return K * (m * n + n * n)


def overlap_fraction(mask_a: SparsityMask, mask_b: SparsityMask) -> float | None:
    """Fraction of ``mask_a``'s zeros that are also zeros of ``mask_b``.

    ``mask_a`` is the reference (e.g. ternary-induced zeros). Returns ``None``
    when ``mask_a`` has no zeros, since the fraction is undefined.
    """
    if mask_a.shape != mask_b.shape:
        raise DimensionError(f"mask shapes differ: {mask_a.shape} vs {mask_b.shape}")
    zeros_a = ~mask_a.active
    n = int(zeros_a.sum())
    if n == 0:
        return None
    return float((zeros_a & ~mask_b.active).sum() / n)
