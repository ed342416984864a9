"""Tensor-train format: evaluation, densification, sequential-SVD construction.

A tensor-train represents an order-``D`` tensor through a chain of order-3
cores, core ``k`` of shape ``(r_{k-1}, K_k, r_k)`` with boundary ranks
``r_0 = r_D = 1``; an entry is the product of the ``D`` matrices obtained by
fixing the middle index of each core.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import SizeLimitError
from .tensor import frobenius_norm, numerical_rank, thin_svd

__all__ = [
    "TTTensor",
    "tt_eval",
    "tt_eval_many",
    "tt_to_full",
    "tt_svd",
    "tt_contract_all",
    "tt_ranks",
]

#: singular values below this multiple of the largest one count as zero
#: inside :func:`tt_svd` at ``eps = 0``
ZERO_RANK_RTOL = 1e-12

#: default cap on dense materialization (entries)
DENSE_ENTRY_BUDGET = 1 << 27


@dataclass
class TTTensor:
    """Chain of order-3 cores with matching adjacent ranks."""

    cores: list[np.ndarray] = field()

    def __post_init__(self) -> None:
        if not self.cores:
            raise ValueError("TTTensor needs at least one core")
        self.cores = [np.asarray(c, dtype=np.float64) for c in self.cores]
        for k, core in enumerate(self.cores):
            if core.ndim != 3:
                raise ValueError(f"core {k} is not order-3")
        if self.cores[0].shape[0] != 1 or self.cores[-1].shape[2] != 1:
            raise ValueError("boundary ranks must be 1")
        for k in range(len(self.cores) - 1):
            if self.cores[k].shape[2] != self.cores[k + 1].shape[0]:
                raise ValueError(f"rank mismatch between cores {k} and {k + 1}")

    @property
    def order(self) -> int:
        return len(self.cores)

    @property
    def mode_sizes(self) -> tuple[int, ...]:
        return tuple(c.shape[1] for c in self.cores)

    @property
    def ranks(self) -> tuple[int, ...]:
        return (1,) + tuple(c.shape[2] for c in self.cores)


def tt_ranks(t: TTTensor) -> tuple[int, ...]:
    """Rank chain ``(r_0, ..., r_D)``."""
    return t.ranks


def _check_index(t: TTTensor, j) -> tuple[int, ...]:
    j = tuple(int(v) for v in j)
    sizes = t.mode_sizes
    if len(j) != len(sizes):
        raise ValueError(f"index has {len(j)} entries, tensor has order {len(sizes)}")
    for k, (jk, nk) in enumerate(zip(j, sizes)):
        if not 0 <= jk < nk:
            raise ValueError(f"index {jk} out of range for mode {k} of size {nk}")
    return j


def tt_eval(t: TTTensor, j) -> float:
    """Entry at multi-index ``j`` (0-based)."""
    j = _check_index(t, j)
    v = t.cores[0][:, j[0], :]
    for k in range(1, t.order):
        v = v @ t.cores[k][:, j[k], :]
    return float(v[0, 0])


def tt_eval_many(t: TTTensor, indices: np.ndarray) -> np.ndarray:
    """Entries at the rows of ``indices`` (shape ``(P, D)``), vectorized."""
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 2 or idx.shape[1] != t.order:
        raise ValueError("indices must be a (P, D) array")
    v = np.moveaxis(t.cores[0][:, idx[:, 0], :], 1, 0)  # (P, 1, r1)
    for k in range(1, t.order):
        slabs = np.moveaxis(t.cores[k][:, idx[:, k], :], 1, 0)  # (P, r_{k-1}, r_k)
        v = v @ slabs
    return v[:, 0, 0]


def tt_to_full(t: TTTensor, max_entries: int = DENSE_ENTRY_BUDGET) -> np.ndarray:
    """Densify; raises :class:`SizeLimitError` beyond ``max_entries`` entries."""
    total = math.prod(t.mode_sizes)
    if total > max_entries:
        raise SizeLimitError(
            f"dense tensor with {total} entries exceeds budget of {max_entries}"
        )
    full = t.cores[0][0]  # (K_1, r_1)
    for core in t.cores[1:]:
        full = np.tensordot(full, core, axes=([-1], [0]))
    return full[..., 0]


def tt_svd(x: np.ndarray, eps: float = 0.0) -> TTTensor:
    """Sequential-SVD construction of a tensor-train.

    With ``eps = 0`` the interior ranks equal the numerical ranks of the
    leading matricizations of ``x`` (singular values below
    ``ZERO_RANK_RTOL`` times the largest are treated as zero) and the
    reconstruction is exact to round-off.  With ``eps > 0`` the relative
    Frobenius reconstruction error is at most ``eps``.
    """
    if eps < 0:
        raise ValueError("eps must be non-negative")
    x = np.asarray(x, dtype=np.float64)
    sizes = x.shape
    d = x.ndim
    if d == 1:
        return TTTensor([x.reshape(1, sizes[0], 1)])
    norm = frobenius_norm(x)
    # per-step discarded energy so that the total stays within eps * norm
    step_budget = (eps * norm) ** 2 / (d - 1) if eps > 0 else 0.0
    rest = x.reshape(sizes[0], -1, order="F")
    cores: list[np.ndarray] = []
    r_prev = 1
    for k in range(d - 1):
        mat = rest.reshape(r_prev * sizes[k], -1, order="F")
        u, s, v = thin_svd(mat)
        if eps == 0.0:
            r = max(numerical_rank(s, ZERO_RANK_RTOL), 1)
        else:
            tails = np.zeros(s.size + 1)
            tails[: s.size] = np.cumsum(s[::-1] ** 2)[::-1]
            r = max(int(np.argmax(tails <= step_budget)), 1)
        cores.append(u[:, :r].reshape(r_prev, sizes[k], r, order="F"))
        rest = s[:r, None] * v.T[:r]
        r_prev = r
    cores.append(rest.reshape(r_prev, sizes[-1], 1, order="F"))
    return TTTensor(cores)


def tt_contract_all(t: TTTensor, weights) -> float:
    """Contract every mode with a weight vector and multiply the chain."""
    if len(weights) != t.order:
        raise ValueError(f"need {t.order} weight vectors, got {len(weights)}")
    g = None
    for k, (core, w) in enumerate(zip(t.cores, weights)):
        w = np.asarray(w, dtype=np.float64)
        if w.ndim != 1 or w.size != core.shape[1]:
            raise ValueError(
                f"weight {k} has length {w.size}, mode size is {core.shape[1]}"
            )
        gk = np.tensordot(core, w, axes=([1], [0]))  # (r_{k-1}, r_k)
        g = gk if g is None else g @ gk
    return float(g[0, 0])
