"""Dense tensor kernels: unfoldings, mode products, thin SVD, rank truncation.

Conventions used throughout the package:

* Tensors and matrices are ``numpy.float64`` arrays.  The canonical
  linearization of a tensor of shape ``(N_1, ..., N_d)`` is Fortran order
  (first index fastest); every reshape here and the on-disk formats in
  :mod:`httrom.io` follow it.
* ``unfold(x, mode)`` puts the 0-based ``mode`` index on the rows; the
  columns run over the remaining indices in increasing mode order, the
  first of them fastest.
* ``matricize(x, k)`` groups the first ``k`` indices on the rows (first
  fastest) and the remaining indices on the columns.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import NumericalError

__all__ = [
    "unfold",
    "fold",
    "matricize",
    "mode_product",
    "frobenius_norm",
    "SvdResult",
    "thin_svd",
    "numerical_rank",
    "truncation_rank",
]


def unfold(x: np.ndarray, mode: int) -> np.ndarray:
    """Mode unfolding: rows indexed by ``mode``, columns by the rest."""
    x = np.asarray(x)
    if not 0 <= mode < x.ndim:
        raise ValueError(f"mode {mode} out of range for order-{x.ndim} tensor")
    return np.reshape(np.moveaxis(x, mode, 0), (x.shape[mode], -1), order="F")


def fold(m: np.ndarray, mode: int, shape) -> np.ndarray:
    """Inverse of :func:`unfold`; exact (pure reshaping)."""
    shape = tuple(int(n) for n in shape)
    if not 0 <= mode < len(shape):
        raise ValueError(f"mode {mode} out of range for order-{len(shape)} shape")
    rest = shape[:mode] + shape[mode + 1:]
    t = np.reshape(np.asarray(m), (shape[mode],) + rest, order="F")
    return np.moveaxis(t, 0, mode)


def matricize(x: np.ndarray, k: int) -> np.ndarray:
    """Group the first ``k`` indices on the rows, the rest on the columns."""
    x = np.asarray(x)
    if not 1 <= k <= x.ndim - 1:
        raise ValueError(f"k must be in [1, {x.ndim - 1}], got {k}")
    rows = int(np.prod(x.shape[:k]))
    return np.reshape(x, (rows, -1), order="F")


def mode_product(x: np.ndarray, m: np.ndarray, mode: int) -> np.ndarray:
    """Contract mode ``mode`` of ``x`` with the columns of matrix ``m``."""
    x = np.asarray(x)
    m = np.asarray(m)
    if m.ndim != 2:
        raise ValueError("m must be a matrix")
    if not 0 <= mode < x.ndim:
        raise ValueError(f"mode {mode} out of range for order-{x.ndim} tensor")
    if m.shape[1] != x.shape[mode]:
        raise ValueError(
            f"matrix has {m.shape[1]} columns, tensor mode {mode} has size {x.shape[mode]}"
        )
    out = np.tensordot(x, m, axes=([mode], [1]))
    return np.moveaxis(out, -1, mode)


def frobenius_norm(x: np.ndarray) -> float:
    return float(np.linalg.norm(np.asarray(x).ravel()))


class SvdResult(NamedTuple):
    """Thin SVD ``m = U @ diag(singular_values) @ V.T``."""

    U: np.ndarray
    singular_values: np.ndarray
    V: np.ndarray


def thin_svd(m: np.ndarray) -> SvdResult:
    """Thin SVD with ``min(rows, cols)`` triplets; zero singular values kept."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError("thin_svd expects a matrix")
    try:
        u, s, vt = np.linalg.svd(m, full_matrices=False)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - backend dependent
        raise NumericalError(f"SVD failed on {m.shape} matrix: {exc}") from exc
    return SvdResult(u, s, vt.T)


def numerical_rank(singular_values: np.ndarray, rtol: float = 1e-12) -> int:
    """Count singular values above ``rtol`` times the largest one."""
    s = np.asarray(singular_values)
    if s.size == 0 or s[0] <= 0.0:
        return 0
    return int(np.count_nonzero(s > rtol * s[0]))


def truncation_rank(
    singular_values: np.ndarray,
    eps_c: float,
    total_sq: float,
    rule: str = "energy",
) -> int:
    """Rank kept when truncating a spectrum at relative threshold ``eps_c``.

    ``rule="energy"`` (default) returns the smallest ``q`` whose discarded
    tail energy satisfies ``sum_{j>q} s_j**2 <= eps_c**2 * total_sq``; this
    is the behaviour the rest of the package relies on.  ``rule="literal"``
    keeps the largest ``q`` with ``sum_{j>q} s_j**2 >= eps_c * total_sq``
    and is provided for compatibility only.

    ``total_sq`` must equal the squared Frobenius norm of the matrix the
    spectrum came from (``sum(s**2)`` up to floating error).  The result is
    at least 1 except when ``total_sq == 0``, where 0 is returned.
    """
    if eps_c < 0:
        raise ValueError("eps_c must be non-negative")
    if rule not in ("energy", "literal"):
        raise ValueError(f"unknown truncation rule {rule!r}")
    s = np.asarray(singular_values, dtype=np.float64)
    n = s.size
    if n == 0 or total_sq == 0.0:
        return 0
    # tails[q] = sum_{j > q} s_j^2, computed back-to-front for accuracy
    tails = np.zeros(n + 1)
    tails[:n] = np.cumsum(s[::-1] ** 2)[::-1]
    if rule == "energy":
        threshold = eps_c * eps_c * total_sq
        q = int(np.argmax(tails <= threshold))  # first q with small enough tail
        return max(q, 1)
    # literal rule: largest q whose tail still exceeds eps_c * total_sq
    keep = np.nonzero(tails[1:] >= eps_c * total_sq)[0]
    if keep.size == 0:
        return 1
    return int(keep[-1]) + 1
