"""Dense tensor algebra: vectorization, matricization, Kronecker/Khatri-Rao
products and CP reconstruction.

Tensors are plain ``numpy.ndarray`` objects of dtype float64.  Every
flattening in this module uses the mode-1-fastest ordering: entry
``(i_1, ..., i_D)`` lands at offset ``i_1 + p_1*i_2 + p_1*p_2*i_3 + ...``
(0-based).  Under this convention the Kronecker chain
``w_D (x) ... (x) w_1`` lines up with ``vec(X)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "CPFactors",
    "as_tensor",
    "cp_reconstruct",
    "khatri_rao",
    "khatri_rao_chain",
    "kronecker",
    "kronecker_chain",
    "matricize",
    "vec",
]


def as_tensor(data, dims: Sequence[int] | None = None) -> np.ndarray:
    """Build a float64 tensor.

    If ``dims`` is given, ``data`` is read as a flat array in mode-1-fastest
    order and reshaped accordingly.
    """
    arr = np.asarray(data, dtype=np.float64)
    if dims is None:
        if arr.ndim == 0:
            raise ValueError("a tensor needs at least one mode")
        if 0 in arr.shape:
            raise ValueError(f"tensor dimensions must be positive, got {arr.shape}")
        return arr
    dims = tuple(int(p) for p in dims)
    if len(dims) == 0 or any(p < 1 for p in dims):
        raise ValueError(f"tensor dimensions must be positive, got {dims}")
    if arr.size != int(np.prod(dims)):
        raise ValueError(f"{arr.size} entries cannot fill a tensor of shape {dims}")
    return arr.reshape(dims, order="F")


def vec(t: np.ndarray) -> np.ndarray:
    """Stack the entries of ``t`` into a vector, mode 1 varying fastest."""
    return np.asarray(t, dtype=np.float64).reshape(-1, order="F")


def matricize(t: np.ndarray, mode: int) -> np.ndarray:
    """Mode-``mode`` unfolding of ``t`` (0-based mode index).

    Returns a ``p_mode x prod(other dims)`` matrix whose columns are the
    mode fibers; the remaining indices are enumerated with lower modes
    varying fastest.
    """
    t = np.asarray(t, dtype=np.float64)
    if not 0 <= mode < t.ndim:
        raise IndexError(f"mode {mode} out of range for a {t.ndim}-order tensor")
    return np.moveaxis(t, mode, 0).reshape(t.shape[mode], -1, order="F")


def kronecker(a, b) -> np.ndarray:
    """Kronecker product of two vectors: ``out[i*len(b) + j] = a[i] * b[j]``."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    return np.outer(a, b).ravel()


def kronecker_chain(vectors: Sequence) -> np.ndarray:
    """``vectors[0] (x) vectors[1] (x) ...`` evaluated left to right."""
    if len(vectors) == 0:
        raise ValueError("need at least one vector")
    out = np.asarray(vectors[0], dtype=np.float64).ravel()
    for v in vectors[1:]:
        out = kronecker(out, v)
    return out


def khatri_rao(a, b) -> np.ndarray:
    """Column-wise Kronecker product of ``a`` (p x R) and ``b`` (q x R)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("khatri_rao expects two matrices")
    if a.shape[1] != b.shape[1]:
        raise ValueError(
            f"column counts differ: {a.shape[1]} vs {b.shape[1]}"
        )
    return np.einsum("ir,jr->ijr", a, b).reshape(a.shape[0] * b.shape[0], a.shape[1])


def khatri_rao_chain(matrices: Sequence, skip: int | None = None) -> np.ndarray:
    """Khatri-Rao product of ``matrices`` in *reverse* order, optionally
    leaving one out.

    For factors ``[B_1, ..., B_D]`` this returns
    ``B_D . ... . B_{d+1} . B_{d-1} . ... . B_1`` when ``skip=d``, which is the
    right-hand factor of the mode-d unfolding of a CP tensor.  Returns a
    ``1 x R`` matrix of ones if nothing is left.
    """
    mats = [np.asarray(m, dtype=np.float64) for k, m in enumerate(matrices) if k != skip]
    if not matrices:
        raise ValueError("need at least one matrix")
    if not mats:
        return np.ones((1, np.asarray(matrices[0]).shape[1]))
    out = mats[-1]
    for m in reversed(mats[:-1]):
        out = khatri_rao(out, m)
    return out


@dataclass(frozen=True)
class CPFactors:
    """Factor matrices ``B_1, ..., B_D`` (each ``p_d x R``) of a rank-R tensor."""

    factors: tuple

    def __post_init__(self):
        mats = tuple(np.asarray(f, dtype=np.float64) for f in self.factors)
        if not mats:
            raise ValueError("CPFactors needs at least one factor matrix")
        if any(m.ndim != 2 for m in mats):
            raise ValueError("every factor must be a 2-D matrix")
        ranks = {m.shape[1] for m in mats}
        if len(ranks) != 1 or 0 in ranks:
            raise ValueError(f"factor column counts must agree and be >= 1, got {sorted(ranks)}")
        object.__setattr__(self, "factors", mats)

    @property
    def rank(self) -> int:
        return self.factors[0].shape[1]

    @property
    def shape(self) -> tuple:
        return tuple(m.shape[0] for m in self.factors)


def cp_reconstruct(f: CPFactors) -> np.ndarray:
    """Sum of outer products ``sum_r b_1^(r) o ... o b_D^(r)``."""
    out = np.zeros(f.shape)
    for r in range(f.rank):
        term = f.factors[0][:, r]
        for m in f.factors[1:]:
            term = np.multiply.outer(term, m[:, r])
        out += term
    return out
