"""Certificate-driven growth of the slice training set.

``adaptive_complete`` retrieves an initial batch of slices, completes the
tensor, and measures the relative error on a held-out test set of slices.
While the certificate fails it draws more training indices (uniformly at
random or direction-stratified), retrieves the new slices and re-runs the
completion, up to a maximum number of rounds.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .completion import CompletionOptions
from .htt import HTTDecomposition, SliceData, component_values_at, d_rank_stats, slice_sampling_complete
from .tensor import mode_product

__all__ = [
    "SliceOracle",
    "AdaptiveConfig",
    "AdaptiveResult",
    "test_error",
    "adaptive_complete",
    "all_indices",
    "history_field_names",
    "history_row_values",
]


@dataclass
class SliceOracle:
    """Pure map from a sampled-mode multi-index to a full slice, with a cache."""

    slice_shape: tuple[int, ...]
    param_sizes: tuple[int, ...]
    retrieve: Callable[[tuple[int, ...]], np.ndarray]
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        self.slice_shape = tuple(int(n) for n in self.slice_shape)
        self.param_sizes = tuple(int(n) for n in self.param_sizes)

    def slice_at(self, j) -> np.ndarray:
        key = tuple(int(v) for v in j)
        if any(not 0 <= jk < nk for jk, nk in zip(key, self.param_sizes)) or len(
            key
        ) != len(self.param_sizes):
            raise ValueError(f"index {key} out of range for sizes {self.param_sizes}")
        if key not in self._cache:
            value = np.asarray(self.retrieve(key), dtype=np.float64)
            if value.shape != self.slice_shape:
                raise ValueError(
                    f"oracle returned shape {value.shape}, expected {self.slice_shape}"
                )
            self._cache[key] = value
        return self._cache[key]

    @property
    def grid_size(self) -> int:
        return math.prod(self.param_sizes)


@dataclass
class AdaptiveConfig:
    """Inputs of the adaptive loop.

    ``increments`` is either one integer used for every round or a sequence
    with one entry per round.  ``eps_c`` overrides the default projection
    threshold ``eps / sqrt(C)`` when set.
    """

    eps: float
    test_set: Sequence
    initial_train: Sequence
    n_max: int = 10
    increments: int | Sequence[int] = 20
    selection: str = "uniform"
    seed: int = 0
    allow_test_overlap: bool = False
    eps_c: float | None = None

    def __post_init__(self) -> None:
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.n_max < 1:
            raise ValueError("n_max must be at least 1")
        if self.selection not in ("uniform", "latin"):
            raise ValueError(f"unknown selection strategy {self.selection!r}")
        self.test_set = _as_index_array(self.test_set)
        self.initial_train = _as_index_array(self.initial_train)
        if self.test_set.shape[0] == 0:
            raise ValueError("test set is empty")
        if self.initial_train.shape[0] == 0:
            raise ValueError("initial training set is empty")
        incs = self.increments
        if np.isscalar(incs):
            incs = [int(incs)] * self.n_max
        incs = [int(v) for v in incs]
        if len(incs) < self.n_max:
            raise ValueError("need one increment per round")
        if any(v <= 0 for v in incs):
            raise ValueError("increments must be positive")
        self.increments = incs
        if not self.allow_test_overlap:
            overlap = set(map(tuple, self.test_set)) & set(map(tuple, self.initial_train))
            if overlap:
                raise ValueError(
                    f"test and training sets overlap in {len(overlap)} indices"
                )


@dataclass
class AdaptiveResult:
    htt: HTTDecomposition
    test_error: float
    history: list[dict]
    converged: bool
    train_indices: np.ndarray


def test_error(
    h: HTTDecomposition, test_indices: np.ndarray, test_slices: np.ndarray
) -> float:
    """Relative Frobenius misfit over the test slices (slice-wise evaluation)."""
    idx = np.asarray(test_indices, dtype=np.intp)
    if idx.shape[0] == 0:
        raise ValueError("test set is empty")
    slices = np.asarray(test_slices, dtype=np.float64)
    vals = component_values_at(h, idx)  # (Q, T)
    misfit_sq = 0.0
    norm_sq = 0.0
    for t in range(idx.shape[0]):
        approx = vals[:, t].reshape(h.c_ranks, order="F")
        for i, f in enumerate(h.factors):
            approx = mode_product(approx, f, i)
        diff = slices[t] - approx
        misfit_sq += float(np.vdot(diff, diff))
        norm_sq += float(np.vdot(slices[t], slices[t]))
    if norm_sq == 0.0:
        return 0.0 if misfit_sq == 0.0 else math.inf
    return math.sqrt(misfit_sq / norm_sq)


def adaptive_complete(
    oracle: SliceOracle,
    cfg: AdaptiveConfig,
    eps_q: float,
    opts: CompletionOptions | None = None,
    n_workers: int = 1,
    log: Callable[[str], None] | None = None,
) -> AdaptiveResult:
    """Grow the training set until the test certificate holds.

    Returns the best iterate (by test error) with its history; a
    ``converged=False`` result means the certificate never held within the
    round budget or the index pool was exhausted.
    """
    opts = opts if opts is not None else CompletionOptions()
    if opts.eps_q != eps_q:
        opts = _with_eps_q(opts, eps_q)
    c = len(oracle.slice_shape)
    eps_c = cfg.eps_c if cfg.eps_c is not None else cfg.eps / math.sqrt(c)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x5E1EC7]))

    test_idx = cfg.test_set
    test_slices = np.stack([oracle.slice_at(j) for j in test_idx])
    train = [tuple(int(v) for v in row) for row in cfg.initial_train]
    reserved = set(map(tuple, test_idx)) if not cfg.allow_test_overlap else set()

    best: AdaptiveResult | None = None
    history: list[dict] = []
    converged = False
    grid_total = oracle.grid_size
    for round_no in range(1, cfg.n_max + 1):
        slices = np.stack([oracle.slice_at(j) for j in train])
        data = SliceData(
            slice_shape=oracle.slice_shape,
            param_sizes=oracle.param_sizes,
            train_indices=np.array(train, dtype=np.intp),
            slices=slices,
        )
        h = slice_sampling_complete(data, eps_c, opts, n_workers=n_workers, log=log)
        err = test_error(h, test_idx, test_slices)
        r_max, r_mean = d_rank_stats(h)
        row = {
            "iteration": round_no,
            "train_count": len(train),
            "sampling_rate": len(train) / grid_total,
            "test_error": err,
            "c_ranks": h.c_ranks,
            "r_max": r_max,
            "r_mean": r_mean,
        }
        history.append(row)
        if log is not None:
            log(
                f"round {round_no}: train={len(train)} "
                f"rate={row['sampling_rate']:.4g} test_error={err:.6e}"
            )
        result = AdaptiveResult(
            htt=h,
            test_error=err,
            history=history,
            converged=False,
            train_indices=np.array(train, dtype=np.intp),
        )
        if best is None or err < best.test_error:
            best = result
        if err <= cfg.eps:
            converged = True
            best = result
            break
        if round_no == cfg.n_max:
            break
        pool = _remaining_indices(oracle.param_sizes, set(train) | reserved)
        if pool.shape[0] == 0:
            break
        count = min(cfg.increments[round_no - 1], pool.shape[0])
        if cfg.selection == "uniform":
            picks = pool[rng.choice(pool.shape[0], size=count, replace=False)]
        else:
            picks = _select_latin(pool, count, oracle.param_sizes, rng)
        train.extend(tuple(int(v) for v in row) for row in picks)
    assert best is not None
    best.converged = converged
    return best


# ---------------------------------------------------------------------------
# helpers


def all_indices(sizes: Sequence[int]) -> np.ndarray:
    """Every multi-index of the grid, Fortran-linearized order, shape (N, D)."""
    sizes = tuple(int(n) for n in sizes)
    total = math.prod(sizes)
    out = np.empty((total, len(sizes)), dtype=np.intp)
    lin = np.arange(total)
    for k, n in enumerate(sizes):
        out[:, k] = lin % n
        lin //= n
    return out


def _as_index_array(seq) -> np.ndarray:
    arr = np.asarray(list(map(tuple, seq)) if not isinstance(seq, np.ndarray) else seq)
    arr = np.atleast_2d(arr).astype(np.intp)
    if np.unique(arr, axis=0).shape[0] != arr.shape[0]:
        raise ValueError("index set contains duplicates")
    return arr


def _remaining_indices(sizes: tuple[int, ...], used: set) -> np.ndarray:
    pool = [row for row in map(tuple, all_indices(sizes)) if row not in used]
    return np.array(pool, dtype=np.intp).reshape(len(pool), len(sizes))


def _select_latin(
    pool: np.ndarray, count: int, sizes: tuple[int, ...], rng: np.random.Generator
) -> np.ndarray:
    """Stratified draw: balance the per-direction histograms of the picks."""
    d = len(sizes)
    cols = []
    for k in range(d):
        reps = -(-count // sizes[k])
        vals = np.tile(np.arange(sizes[k]), reps)[:count]
        rng.shuffle(vals)
        cols.append(vals)
    cand = np.stack(cols, axis=1)
    pool_set = set(map(tuple, pool))
    picks = []
    seen = set()
    for row in map(tuple, cand):
        if row in pool_set and row not in seen:
            picks.append(row)
            seen.add(row)
    if len(picks) < count:  # fill the deficit uniformly from what is left
        rest = [row for row in map(tuple, pool) if row not in seen]
        extra = rng.choice(len(rest), size=count - len(picks), replace=False)
        picks.extend(rest[i] for i in extra)
    return np.array(picks[:count], dtype=np.intp)


def history_field_names(history: list[dict]) -> list[str]:
    """Flat CSV column names for an adaptive history."""
    c = len(history[0]["c_ranks"])
    n_ifaces = len(history[0]["r_max"])
    names = ["iteration", "train_count", "sampling_rate", "test_error"]
    names += [f"q{i + 1}" for i in range(c)]
    names += [f"r{k + 1}_max" for k in range(n_ifaces)]
    names += [f"r{k + 1}_mean" for k in range(n_ifaces)]
    return names


def history_row_values(row: dict) -> list:
    values = [row["iteration"], row["train_count"], row["sampling_rate"], row["test_error"]]
    values += list(row["c_ranks"])
    values += list(row["r_max"])
    values += list(row["r_mean"])
    return values


def _with_eps_q(opts: CompletionOptions, eps_q: float) -> CompletionOptions:
    return replace(opts, eps_q=eps_q)
