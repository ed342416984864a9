"""Rank-adaptive alternating-least-squares completion of a tensor-train.

Given scattered observed entries of an order-``D`` tensor, ``complete_tt``
fits a tensor-train by cyclic per-core least squares.  Each core update
solves one small ridge-regularized normal system per middle-index slice,
assembled from the left/right interface products of the observed entries.
Interior ranks start at 1 and grow one at a time at the interface showing
the largest residual correlation; an internal holdout of the samples guards
each rank increase against overfitting.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .tt import TTTensor, tt_eval_many

__all__ = [
    "SampleSet",
    "CompletionOptions",
    "complete_tt",
    "training_residual",
]


@dataclass
class SampleSet:
    """Observed entries of a tensor: unique in-bounds multi-indices + values."""

    sizes: tuple[int, ...]
    indices: np.ndarray  # (P, D) integer multi-indices, 0-based
    values: np.ndarray  # (P,)

    def __post_init__(self) -> None:
        self.sizes = tuple(int(n) for n in self.sizes)
        self.indices = np.ascontiguousarray(self.indices, dtype=np.intp)
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.indices.ndim != 2 or self.indices.shape[1] != len(self.sizes):
            raise ValueError("indices must be a (P, D) array matching sizes")
        if self.values.shape != (self.indices.shape[0],):
            raise ValueError("values must be a vector with one entry per index")
        if self.indices.shape[0] == 0:
            raise ValueError("sample set is empty")
        if np.any(self.indices < 0) or np.any(self.indices >= np.asarray(self.sizes)):
            raise ValueError("multi-index out of bounds")
        if np.unique(self.indices, axis=0).shape[0] != self.indices.shape[0]:
            raise ValueError("multi-indices must be unique")

    @property
    def count(self) -> int:
        return self.indices.shape[0]


@dataclass
class CompletionOptions:
    """Knobs for :func:`complete_tt`.

    ``regularization`` is the absolute ridge added to each normal system;
    ``None`` selects ``1e-12 * ||values||_2**2``.  ``holdout_fraction`` of
    the samples (when at least 10 are given) validates rank increases.
    """

    eps_q: float = 1e-6
    max_rank: int = 20
    max_sweeps_per_rank: int = 4
    rank_stagnation_factor: float = 0.05
    seed: int = 0
    regularization: float | None = None
    holdout_fraction: float = 0.1

    def __post_init__(self) -> None:
        if self.eps_q < 0:
            raise ValueError("eps_q must be non-negative")
        if self.max_rank < 1:
            raise ValueError("max_rank must be at least 1")
        if self.max_sweeps_per_rank < 1:
            raise ValueError("max_sweeps_per_rank must be at least 1")
        if not 0.0 < self.rank_stagnation_factor < 1.0:
            raise ValueError("rank_stagnation_factor must lie in (0, 1)")
        if self.regularization is not None and self.regularization < 0:
            raise ValueError("regularization must be non-negative")
        if not 0.0 <= self.holdout_fraction < 0.5:
            raise ValueError("holdout_fraction must lie in [0, 0.5)")


def training_residual(t: TTTensor, data: SampleSet) -> float:
    """l2 misfit on the observed entries divided by the l2 norm of the values."""
    if t.mode_sizes != data.sizes:
        raise ValueError(
            f"mode sizes {t.mode_sizes} do not match sample sizes {data.sizes}"
        )
    misfit = float(np.linalg.norm(tt_eval_many(t, data.indices) - data.values))
    norm = float(np.linalg.norm(data.values))
    if norm == 0.0:
        return 0.0 if misfit == 0.0 else math.inf
    return misfit / norm


def complete_tt(
    data: SampleSet,
    opts: CompletionOptions,
    log: Callable[[str], None] | None = None,
) -> tuple[TTTensor, float]:
    """Fit a tensor-train to the sample set.

    Returns the fitted train and its relative residual over all provided
    entries.  A residual above ``opts.eps_q`` is not an error: the best
    iterate found is returned and the caller decides how to react.
    """
    if not np.all(np.isfinite(data.values)):
        raise ValueError("sample values must be finite")
    norm = float(np.linalg.norm(data.values))
    if norm == 0.0:
        cores = [np.zeros((1, n, 1)) for n in data.sizes]
        return TTTensor(cores), 0.0
    solver = _AlsSolver(data, opts, log)
    cores, residual = solver.run()
    return TTTensor(cores), residual


# ---------------------------------------------------------------------------
# solver internals


class _Grouping:
    """Per-mode partition of sample rows by their index in that mode."""

    def __init__(self, sizes: tuple[int, ...], idx: np.ndarray):
        self.rows = [
            [np.nonzero(idx[:, k] == s)[0] for s in range(n)]
            for k, n in enumerate(sizes)
        ]


class _AlsSolver:
    def __init__(self, data: SampleSet, opts: CompletionOptions, log):
        self.sizes = data.sizes
        self.D = len(self.sizes)
        self.idx = data.indices
        self.y = data.values
        self.opts = opts
        self.log = log
        self.rng = np.random.default_rng(np.random.SeedSequence(opts.seed))
        norm_sq = float(self.y @ self.y)
        self.lam = (
            opts.regularization if opts.regularization is not None else 1e-12 * norm_sq
        )
        p = data.count
        n_hold = int(round(opts.holdout_fraction * p)) if p >= 10 else 0
        perm = self.rng.permutation(p)
        self.hold_rows = perm[:n_hold]
        self.fit_rows = perm[n_hold:]
        self.fit_idx = self.idx[self.fit_rows]
        self.fit_y = self.y[self.fit_rows]
        self.fit_norm = float(np.linalg.norm(self.fit_y))
        self.hold_norm = float(np.linalg.norm(self.y[self.hold_rows]))
        self.fit_groups = _Grouping(self.sizes, self.fit_idx)
        self.all_groups = _Grouping(self.sizes, self.idx)
        self.max_enrichments = 2 * (self.D - 1) * opts.max_rank + 4
        scale = (norm_sq / p) ** (0.5 / self.D)
        self.cores = [scale * self.rng.standard_normal((1, n, 1)) for n in self.sizes]
        self.sweep_no = 0

    # -- interface stacks ----------------------------------------------------

    def _left_stacks(self, idx: np.ndarray) -> list[np.ndarray]:
        """stacks[k][p] = row product of cores 0..k-1 at sample p, (P, r_{k-1})."""
        p = idx.shape[0]
        stacks = [np.ones((p, 1))]
        for k in range(self.D - 1):
            slabs = np.moveaxis(self.cores[k][:, idx[:, k], :], 1, 0)
            stacks.append((stacks[k][:, None, :] @ slabs)[:, 0, :])
        return stacks

    def _right_stacks(self, idx: np.ndarray) -> list[np.ndarray]:
        """stacks[k][p] = column product of cores k+1..D-1 at sample p, (P, r_k)."""
        p = idx.shape[0]
        stacks: list[np.ndarray | None] = [None] * self.D
        stacks[self.D - 1] = np.ones((p, 1))
        for k in range(self.D - 2, -1, -1):
            slabs = np.moveaxis(self.cores[k + 1][:, idx[:, k + 1], :], 1, 0)
            stacks[k] = (slabs @ stacks[k + 1][:, :, None])[:, :, 0]
        return stacks

    def _predict(self, idx: np.ndarray) -> np.ndarray:
        v = np.moveaxis(self.cores[0][:, idx[:, 0], :], 1, 0)
        for k in range(1, self.D):
            v = v @ np.moveaxis(self.cores[k][:, idx[:, k], :], 1, 0)
        return v[:, 0, 0]

    # -- core update -----------------------------------------------------------

    def _update_core(
        self,
        k: int,
        left: np.ndarray,
        right: np.ndarray,
        groups: _Grouping,
        y: np.ndarray,
    ) -> None:
        r0, _, r1 = self.cores[k].shape
        n_unknown = r0 * r1
        design = (left[:, :, None] * right[:, None, :]).reshape(-1, n_unknown)
        grams, rhss, slots = [], [], []
        for s, rows in enumerate(groups.rows[k]):
            if rows.size == 0:
                continue  # unobserved slice: keep current values
            a = design[rows]
            g = a.T @ a
            g.flat[:: n_unknown + 1] += self.lam
            grams.append(g)
            rhss.append(a.T @ y[rows])
            slots.append(s)
        if not grams:
            return
        try:
            sols = np.linalg.solve(np.stack(grams), np.stack(rhss))
        except np.linalg.LinAlgError:
            sols = np.stack(
                [np.linalg.lstsq(g, r, rcond=None)[0] for g, r in zip(grams, rhss)]
            )
        for s, sol in zip(slots, sols):
            self.cores[k][:, s, :] = sol.reshape(r0, r1)

    # -- orthogonalization pushes ------------------------------------------------

    def _push_left(self, k: int) -> None:
        """Left-QR core k, absorb the triangular factor into core k+1."""
        r0, n, r1 = self.cores[k].shape
        mat = self.cores[k].reshape(r0 * n, r1, order="F")
        q, rfac = np.linalg.qr(mat)
        self.cores[k] = q.reshape(r0, n, q.shape[1], order="F")
        self.cores[k + 1] = np.tensordot(rfac, self.cores[k + 1], axes=([1], [0]))

    def _push_right(self, k: int) -> None:
        """Right-QR core k, absorb the triangular factor into core k-1."""
        r0, n, r1 = self.cores[k].shape
        mat = self.cores[k].reshape(r0, n * r1, order="F")
        q, rfac = np.linalg.qr(mat.T)
        self.cores[k] = q.T.reshape(q.shape[1], n, r1, order="F")
        self.cores[k - 1] = np.tensordot(self.cores[k - 1], rfac.T, axes=([2], [0]))

    # -- sweeps --------------------------------------------------------------------

    def _sweep(self, idx: np.ndarray, y: np.ndarray, groups: _Grouping) -> float:
        """One full left-right-left pass; returns the residual on (idx, y)."""
        p = idx.shape[0]
        rights = self._right_stacks(idx)
        left = np.ones((p, 1))
        for k in range(self.D):
            self._update_core(k, left, rights[k], groups, y)
            if k < self.D - 1:
                self._push_left(k)
                slabs = np.moveaxis(self.cores[k][:, idx[:, k], :], 1, 0)
                left = (left[:, None, :] @ slabs)[:, 0, :]
        lefts = self._left_stacks(idx)
        right = np.ones((p, 1))
        for k in range(self.D - 1, -1, -1):
            self._update_core(k, lefts[k], right, groups, y)
            if k > 0:
                self._push_right(k)
            slabs = np.moveaxis(self.cores[k][:, idx[:, k], :], 1, 0)
            right = (slabs @ right[:, :, None])[:, :, 0]
        misfit = float(np.linalg.norm(right[:, 0] - y))
        norm = float(np.linalg.norm(y))
        return misfit / norm if norm > 0 else 0.0

    def _residuals(self) -> tuple[float, float, float]:
        """(fit, holdout, all-samples) relative residuals."""
        diff = self._predict(self.idx) - self.y
        all_res = float(np.linalg.norm(diff)) / float(np.linalg.norm(self.y))
        fit_res = (
            float(np.linalg.norm(diff[self.fit_rows])) / self.fit_norm
            if self.fit_norm > 0
            else all_res
        )
        if self.hold_rows.size and self.hold_norm > 0:
            hold_res = float(np.linalg.norm(diff[self.hold_rows])) / self.hold_norm
        else:
            hold_res = fit_res
        return fit_res, hold_res, all_res

    def _log_sweep(self, fit_res: float, hold_res: float) -> None:
        if self.log is None:
            return
        ranks = tuple(c.shape[2] for c in self.cores[:-1])
        self.log(
            f"sweep {self.sweep_no} ranks={ranks} train={fit_res:.6e} "
            f"holdout={hold_res:.6e}"
        )

    # -- rank adaptation ---------------------------------------------------------

    def _bond_cap(self, k: int) -> int:
        """Largest admissible rank at the bond between cores k and k+1."""
        return min(
            self.opts.max_rank,
            math.prod(self.sizes[: k + 1]),
            math.prod(self.sizes[k + 1:]),
            self.cores[k].shape[0] * self.sizes[k],
            self.sizes[k + 1] * self.cores[k + 1].shape[2],
        )

    def _interface_scores(self) -> np.ndarray:
        """Residual correlation with each interface's enlarged supercore."""
        res = self.fit_y - self._predict(self.fit_idx)
        lefts = self._left_stacks(self.fit_idx)
        rights = self._right_stacks(self.fit_idx)
        scores = np.zeros(max(self.D - 1, 0))
        for k in range(self.D - 1):
            wl = lefts[k] * res[:, None]  # (P, r_{k-1})
            wr = rights[k + 1]  # (P, r_{k+1})
            z = np.zeros((self.sizes[k], self.sizes[k + 1], wl.shape[1], wr.shape[1]))
            np.add.at(
                z,
                (self.fit_idx[:, k], self.fit_idx[:, k + 1]),
                wl[:, :, None] * wr[:, None, :],
            )
            scores[k] = np.linalg.norm(z.ravel())
        return scores

    def _enrich(self, k: int) -> None:
        """Grow the bond between cores k and k+1 by one."""
        r0, n, r1 = self.cores[k].shape
        mat = self.cores[k].reshape(r0 * n, r1, order="F")
        new_col = self.rng.standard_normal(r0 * n)
        new_col -= mat @ (mat.T @ new_col)
        nrm = np.linalg.norm(new_col)
        if nrm < 1e-12:  # degenerate draw; any unit vector keeps ranks consistent
            new_col = self.rng.standard_normal(r0 * n)
            nrm = np.linalg.norm(new_col)
        new_col /= nrm
        self.cores[k] = np.concatenate([mat, new_col[:, None]], axis=1).reshape(
            r0, n, r1 + 1, order="F"
        )
        nxt = self.cores[k + 1]
        scale = np.linalg.norm(nxt) / math.sqrt(nxt.size)
        if scale == 0.0:
            scale = 1.0
        new_row = 1e-2 * scale * self.rng.standard_normal((1,) + nxt.shape[1:])
        self.cores[k + 1] = np.concatenate([nxt, new_row], axis=0)

    # -- main loop ------------------------------------------------------------------

    def _sweep_until_stalled(self) -> tuple[float, float, float]:
        prev = math.inf
        fit_res = hold_res = all_res = math.inf
        for _ in range(self.opts.max_sweeps_per_rank):
            self.sweep_no += 1
            self._sweep(self.fit_idx, self.fit_y, self.fit_groups)
            fit_res, hold_res, all_res = self._residuals()
            self._log_sweep(fit_res, hold_res)
            if all_res <= self.opts.eps_q:
                break
            if prev - fit_res < self.opts.rank_stagnation_factor * prev:
                break
            prev = fit_res
        return fit_res, hold_res, all_res

    def run(self) -> tuple[list[np.ndarray], float]:
        best_cores = [c.copy() for c in self.cores]
        best_all = math.inf
        blocked: set[int] = set()
        enrichments = 0
        _, hold_res, all_res = self._sweep_until_stalled()
        while all_res > self.opts.eps_q and enrichments < self.max_enrichments:
            if all_res < best_all:
                best_all = all_res
                best_cores = [c.copy() for c in self.cores]
            eligible = [
                k
                for k in range(self.D - 1)
                if self.cores[k].shape[2] < self._bond_cap(k) and k not in blocked
            ]
            if not eligible:
                break
            scores = self._interface_scores()
            k_star = max(eligible, key=lambda k: (scores[k], -k))
            snapshot = [c.copy() for c in self.cores]
            hold_before = hold_res
            self._enrich(k_star)
            enrichments += 1
            _, hold_res, all_res = self._sweep_until_stalled()
            if hold_res > hold_before * (1.0 + 1e-12):
                self.cores = snapshot
                blocked.add(k_star)
                _, hold_res, all_res = self._residuals()
            else:
                blocked.clear()
        if all_res < best_all:
            best_all = all_res
            best_cores = [c.copy() for c in self.cores]
        # final refit on every provided sample at the selected ranks
        self.cores = [c.copy() for c in best_cores]
        prev = math.inf
        all_res = best_all
        for _ in range(self.opts.max_sweeps_per_rank):
            self.sweep_no += 1
            all_res = self._sweep(self.idx, self.y, self.all_groups)
            if self.log is not None:
                ranks = tuple(c.shape[2] for c in self.cores[:-1])
                self.log(
                    f"sweep {self.sweep_no} ranks={ranks} train={all_res:.6e} "
                    f"holdout=n/a"
                )
            if all_res <= self.opts.eps_q:
                break
            if prev - all_res < self.opts.rank_stagnation_factor * prev:
                break
            prev = all_res
        if all_res <= best_all:
            return self.cores, all_res
        return best_cores, best_all
