"""Hybrid factor/tensor-train decomposition built from complete slices.

A tensor whose first ``C`` modes are always observed in full (through
order-``C`` slices) and whose last ``D`` modes are sampled sparsely is
stored as ``C`` orthonormal factor matrices plus one tensor-train per
reduced multi-index over the factored modes.  ``slice_sampling_complete``
builds the decomposition from slice data in three steps: stack the slices,
compute reduced bases of the stack's unfoldings, project each slice and
complete every component train from its scattered projected values.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple

import numpy as np

from .completion import CompletionOptions, SampleSet, complete_tt
from .errors import SizeLimitError
from .tensor import frobenius_norm, mode_product, numerical_rank, thin_svd, truncation_rank, unfold
from .tt import DENSE_ENTRY_BUDGET, TTTensor, tt_eval, tt_eval_many, tt_svd, tt_to_full

__all__ = [
    "SliceData",
    "HTTDecomposition",
    "ReducedBasis",
    "assemble_phi_p",
    "compute_reduced_bases",
    "project_slices",
    "slice_sampling_complete",
    "htt_eval",
    "htt_slice",
    "htt_reconstruct",
    "htt_from_full",
    "storage_dof",
    "sampling_quality",
    "d_rank_stats",
    "random_htt",
]


@dataclass
class SliceData:
    """Complete order-``C`` slices observed at ``P`` distinct multi-indices."""

    slice_shape: tuple[int, ...]
    param_sizes: tuple[int, ...]
    train_indices: np.ndarray  # (P, D)
    slices: np.ndarray  # (P,) + slice_shape, in train_indices order

    def __post_init__(self) -> None:
        self.slice_shape = tuple(int(n) for n in self.slice_shape)
        self.param_sizes = tuple(int(n) for n in self.param_sizes)
        self.train_indices = np.ascontiguousarray(self.train_indices, dtype=np.intp)
        if isinstance(self.slices, (list, tuple)):
            self.slices = np.stack([np.asarray(s, dtype=np.float64) for s in self.slices])
        self.slices = np.asarray(self.slices, dtype=np.float64)
        p = self.train_indices.shape[0]
        if p == 0:
            raise ValueError("need at least one slice")
        if self.train_indices.ndim != 2 or self.train_indices.shape[1] != len(self.param_sizes):
            raise ValueError("train_indices must be a (P, D) array")
        if np.any(self.train_indices < 0) or np.any(
            self.train_indices >= np.asarray(self.param_sizes)
        ):
            raise ValueError("train index out of bounds")
        if np.unique(self.train_indices, axis=0).shape[0] != p:
            raise ValueError("train indices must be unique")
        if self.slices.shape != (p,) + self.slice_shape:
            raise ValueError(
                f"slices have shape {self.slices.shape}, expected {(p,) + self.slice_shape}"
            )

    @property
    def count(self) -> int:
        return self.train_indices.shape[0]


@dataclass
class HTTDecomposition:
    """Orthonormal factors for the sliced modes + one train per component.

    ``components`` is linearized over the factored-mode multi-indices with
    the first index fastest, matching the package-wide Fortran convention.
    """

    factors: list[np.ndarray]
    components: list[TTTensor]
    c_ranks: tuple[int, ...]
    param_sizes: tuple[int, ...]
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.c_ranks = tuple(int(q) for q in self.c_ranks)
        self.param_sizes = tuple(int(n) for n in self.param_sizes)
        if len(self.factors) != len(self.c_ranks):
            raise ValueError("one factor per sliced mode is required")
        for i, (f, q) in enumerate(zip(self.factors, self.c_ranks)):
            if f.ndim != 2 or f.shape[1] != q:
                raise ValueError(f"factor {i} must have {q} columns")
            gram_err = np.abs(f.T @ f - np.eye(q)).max() if q else 0.0
            if gram_err > 1e-10:
                raise ValueError(f"factor {i} columns are not orthonormal ({gram_err:.2e})")
        q_total = math.prod(self.c_ranks)
        if len(self.components) != q_total:
            raise ValueError(f"expected {q_total} components, got {len(self.components)}")
        for t in self.components:
            if t.mode_sizes != self.param_sizes:
                raise ValueError("component mode sizes must equal param_sizes")

    @property
    def slice_shape(self) -> tuple[int, ...]:
        return tuple(f.shape[0] for f in self.factors)

    @property
    def n_sliced_modes(self) -> int:
        return len(self.factors)

    @property
    def n_sampled_modes(self) -> int:
        return len(self.param_sizes)

    def component(self, i) -> TTTensor:
        return self.components[self.component_index(i)]

    def component_index(self, i) -> int:
        i = tuple(int(v) for v in i)
        if len(i) != len(self.c_ranks):
            raise ValueError("component multi-index has wrong length")
        lin = 0
        stride = 1
        for ik, qk in zip(i, self.c_ranks):
            if not 0 <= ik < qk:
                raise ValueError(f"component index {i} out of range {self.c_ranks}")
            lin += stride * ik
            stride *= qk
        return lin


class ReducedBasis(NamedTuple):
    factor: np.ndarray  # (M_i, q_i), orthonormal columns
    singular_values: np.ndarray  # full spectrum for diagnostics


def assemble_phi_p(data: SliceData) -> np.ndarray:
    """Stack the slices into an order-``(C+1)`` tensor, sample index last."""
    return np.ascontiguousarray(np.moveaxis(data.slices, 0, -1))


def compute_reduced_bases(
    phi_p: np.ndarray, eps_c: float, rule: str = "energy"
) -> list[ReducedBasis]:
    """Truncated left singular bases of each sliced-mode unfolding."""
    if eps_c < 0:
        raise ValueError("eps_c must be non-negative")
    bases = []
    for i in range(phi_p.ndim - 1):
        u, s, _ = thin_svd(unfold(phi_p, i))
        total_sq = float(s @ s)
        q = max(truncation_rank(s, eps_c, total_sq, rule=rule), 1)
        bases.append(ReducedBasis(np.ascontiguousarray(u[:, :q]), s))
    return bases


def project_slices(data: SliceData, factors: list[np.ndarray]) -> list[SampleSet]:
    """Project every slice onto the reduced bases and scatter by component.

    Component ``i`` (Fortran-linearized) receives one sample per training
    index: the projected slice value at position ``i``.
    """
    c = len(factors)
    if c != len(data.slice_shape):
        raise ValueError("need one factor per sliced mode")
    for i, f in enumerate(factors):
        if f.shape[0] != data.slice_shape[i]:
            raise ValueError(
                f"factor {i} has {f.shape[0]} rows, slice mode has size {data.slice_shape[i]}"
            )
    p = data.count
    q_total = math.prod(f.shape[1] for f in factors)
    values = np.empty((q_total, p))
    for k in range(p):
        proj = data.slices[k]
        for i, f in enumerate(factors):
            proj = mode_product(proj, f.T, i)
        values[:, k] = proj.ravel(order="F")
    indices = data.train_indices
    return [
        SampleSet(data.param_sizes, indices, values[i]) for i in range(q_total)
    ]


def _component_seed(base_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([base_seed, index]).generate_state(1)[0])


def slice_sampling_complete(
    data: SliceData,
    eps_c: float,
    opts: CompletionOptions,
    n_workers: int = 1,
    rule: str = "energy",
    log: Callable[[str], None] | None = None,
) -> HTTDecomposition:
    """Reduced bases + independent component completions, in one call.

    Components that do not reach ``opts.eps_q`` are recorded in the
    metadata (``component_residuals``), not raised: the adaptive sampling
    loop owns the retry policy.
    """
    phi_p = assemble_phi_p(data)
    bases = compute_reduced_bases(phi_p, eps_c, rule=rule)
    factors = [b.factor for b in bases]
    samples = project_slices(data, factors)
    q_total = len(samples)

    def _run(i: int) -> tuple[TTTensor, float]:
        comp_opts = replace(opts, seed=_component_seed(opts.seed, i))
        comp_log = None
        if log is not None:
            comp_log = lambda line, i=i: log(f"component {i}: {line}")
        return complete_tt(samples[i], comp_opts, log=comp_log)

    if n_workers > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(_run, range(q_total)))
    else:
        results = [_run(i) for i in range(q_total)]
    components = [r[0] for r in results]
    residuals = [r[1] for r in results]
    meta = {
        "eps_c": float(eps_c),
        "eps_q": float(opts.eps_q),
        "truncation_rule": rule,
        "component_residuals": [float(r) for r in residuals],
        "train_count": int(data.count),
        "singular_values": [b.singular_values.tolist() for b in bases],
    }
    return HTTDecomposition(
        factors=factors,
        components=components,
        c_ranks=tuple(f.shape[1] for f in factors),
        param_sizes=data.param_sizes,
        meta=meta,
    )


def component_values_at(h: HTTDecomposition, indices: np.ndarray) -> np.ndarray:
    """Matrix (Q, P) of every component train evaluated at every index row."""
    idx = np.asarray(indices, dtype=np.intp)
    return np.stack([tt_eval_many(t, idx) for t in h.components])


def htt_eval(h: HTTDecomposition, i, j) -> float:
    """Single entry: factored-mode index ``i``, sampled-mode index ``j``."""
    i = tuple(int(v) for v in i)
    if len(i) != h.n_sliced_modes:
        raise ValueError("sliced multi-index has wrong length")
    weights = np.ones(1)
    for ic, (f, q) in enumerate(zip(h.factors, h.c_ranks)):
        if not 0 <= i[ic] < f.shape[0]:
            raise ValueError(f"index {i[ic]} out of range for sliced mode {ic}")
        weights = np.outer(weights, f[i[ic], :]).ravel(order="F")
    vals = np.array([tt_eval(t, j) for t in h.components])
    return float(weights @ vals)


def htt_slice(h: HTTDecomposition, j) -> np.ndarray:
    """Full order-``C`` slice at sampled-mode index ``j``."""
    core = np.array([tt_eval(t, j) for t in h.components]).reshape(
        h.c_ranks, order="F"
    )
    out = core
    for i, f in enumerate(h.factors):
        out = mode_product(out, f, i)
    return out


def htt_reconstruct(
    h: HTTDecomposition, max_entries: int = DENSE_ENTRY_BUDGET
) -> np.ndarray:
    """Dense tensor of shape ``slice_shape + param_sizes``."""
    total = math.prod(h.slice_shape) * math.prod(h.param_sizes)
    if total > max_entries:
        raise SizeLimitError(
            f"dense tensor with {total} entries exceeds budget of {max_entries}"
        )
    q_total = len(h.components)
    nk = math.prod(h.param_sizes)
    stacked = np.empty((q_total, nk))
    for i, t in enumerate(h.components):
        stacked[i] = tt_to_full(t, max_entries=max_entries).ravel(order="F")
    core = stacked.reshape(h.c_ranks + h.param_sizes, order="F")
    out = core
    for i, f in enumerate(h.factors):
        out = mode_product(out, f, i)
    return out


def htt_from_full(x: np.ndarray, c: int) -> HTTDecomposition:
    """Exact construction from a dense tensor (rank oracle).

    Factors are the numerical-rank left singular bases of the first ``c``
    unfoldings; the projected core is decomposed by sequential SVD and its
    leading chain cores are contracted into per-component first cores.  The
    resulting component ranks equal the numerical ranks of the core's
    matricizations beyond mode ``c``.
    """
    x = np.asarray(x, dtype=np.float64)
    if not 1 <= c <= x.ndim - 1:
        raise ValueError(f"c must be in [1, {x.ndim - 1}], got {c}")
    factors = []
    for i in range(c):
        u, s, _ = thin_svd(unfold(x, i))
        q = max(numerical_rank(s), 1)
        factors.append(np.ascontiguousarray(u[:, :q]))
    core = x
    for i, f in enumerate(factors):
        core = mode_product(core, f.T, i)
    chain = tt_svd(core, 0.0)
    c_ranks = tuple(f.shape[1] for f in factors)
    param_sizes = x.shape[c:]
    shared = [chain.cores[k] for k in range(c + 1, x.ndim)]
    components = []
    for lin in range(math.prod(c_ranks)):
        i = _unravel_f(lin, c_ranks)
        v = np.ones((1, 1))
        for ic in range(c):
            v = v @ chain.cores[ic][:, i[ic], :]
        first = np.tensordot(v, chain.cores[c], axes=([1], [0]))
        components.append(TTTensor([first] + [g.copy() for g in shared]))
    return HTTDecomposition(
        factors=factors,
        components=components,
        c_ranks=c_ranks,
        param_sizes=param_sizes,
        meta={"eps_c": 0.0, "construction": "dense"},
    )


def storage_dof(h: HTTDecomposition) -> int:
    """Exact number of stored entries of the representation."""
    total = sum(f.size for f in h.factors)
    total += sum(sum(core.size for core in t.cores) for t in h.components)
    return int(total)


def sampling_quality(full: np.ndarray, factors: list[np.ndarray]) -> float:
    """Worst relative unfolding mass outside the span of each factor."""
    full = np.asarray(full, dtype=np.float64)
    worst = 0.0
    for i, f in enumerate(factors):
        mat = unfold(full, i)
        if f.shape[0] != mat.shape[0]:
            raise ValueError(f"factor {i} rows do not match unfolding {i}")
        resid = mat - f @ (f.T @ mat)
        denom = frobenius_norm(mat)
        worst = max(worst, frobenius_norm(resid) / denom if denom > 0 else 0.0)
    return worst


def d_rank_stats(h: HTTDecomposition) -> tuple[tuple[int, ...], tuple[float, ...]]:
    """(max, mean) interior train rank per interface over all components."""
    d = h.n_sampled_modes
    if d < 2:
        return (), ()
    ranks = np.array([t.ranks[1:-1] for t in h.components])  # (Q, D-1)
    return tuple(int(v) for v in ranks.max(axis=0)), tuple(
        float(v) for v in ranks.mean(axis=0)
    )


def random_htt(
    slice_shape,
    param_sizes,
    c_ranks,
    d_ranks,
    seed: int = 0,
) -> HTTDecomposition:
    """Random decomposition with prescribed ranks (synthetic test oracle)."""
    slice_shape = tuple(int(n) for n in slice_shape)
    param_sizes = tuple(int(n) for n in param_sizes)
    c_ranks = tuple(int(q) for q in c_ranks)
    if any(q > m for q, m in zip(c_ranks, slice_shape)):
        raise ValueError("c_ranks cannot exceed slice dimensions")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    factors = [
        np.linalg.qr(rng.standard_normal((m, q)))[0]
        for m, q in zip(slice_shape, c_ranks)
    ]
    d = len(param_sizes)
    if np.isscalar(d_ranks):
        d_ranks = [int(d_ranks)] * (d - 1)
    d_ranks = [int(r) for r in d_ranks]
    ranks = [1]
    for k in range(d - 1):
        cap = min(math.prod(param_sizes[: k + 1]), math.prod(param_sizes[k + 1:]))
        ranks.append(min(d_ranks[k], cap))
    ranks.append(1)
    components = []
    for _ in range(math.prod(c_ranks)):
        cores = [
            rng.standard_normal((ranks[k], param_sizes[k], ranks[k + 1]))
            / math.sqrt(ranks[k])
            for k in range(d)
        ]
        components.append(TTTensor(cores))
    return HTTDecomposition(
        factors=factors,
        components=components,
        c_ranks=c_ranks,
        param_sizes=param_sizes,
        meta={"construction": "random"},
    )


def _unravel_f(lin: int, shape: tuple[int, ...]) -> tuple[int, ...]:
    """Fortran-order multi-index of linear position ``lin``."""
    out = []
    for n in shape:
        out.append(lin % n)
        lin //= n
    return tuple(out)
