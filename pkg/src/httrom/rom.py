"""Interpolatory reduced-order model on top of the hybrid decomposition.

Offline, the affine system is projected once onto the universal reduced
space spanned by the first factor of the decomposition.  Online, for any
admissible parameter, per-direction Lagrange weights contract every
component train into a small core matrix; the leading left singular vectors
of that core are the coordinates of a parameter-specific local basis, onto
which the reduced system is projected a second time and integrated with
the full-order time scheme.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.linalg

from .adaptive import AdaptiveConfig, AdaptiveResult, adaptive_complete
from .completion import CompletionOptions
from .fom import FOMProblem, ParameterGrid, slice_oracle
from .htt import HTTDecomposition, d_rank_stats
from .tensor import thin_svd
from .tt import TTTensor, tt_contract_all

__all__ = [
    "InterpolationOperator",
    "lagrange_weights",
    "OnlineData",
    "LocalBasis",
    "core_matrix",
    "local_basis",
    "build_online",
    "rom_offline",
    "OfflineResult",
    "rom_online",
    "RomSolution",
    "error_E_alpha",
    "error_stats",
    "rank_stats",
]


@dataclass
class InterpolationOperator:
    """Per-direction Lagrange interpolation of fixed order on a grid."""

    order: int
    grid: ParameterGrid

    def __post_init__(self) -> None:
        self.order = int(self.order)
        if self.order < 1:
            raise ValueError("interpolation order must be at least 1")
        if any(self.order > n for n in self.grid.sizes):
            raise ValueError(
                f"order {self.order} exceeds a direction's node count {self.grid.sizes}"
            )


def lagrange_weights(op: InterpolationOperator, alpha) -> list[np.ndarray]:
    """Per-direction weight vectors; each sums to 1, zeros off the stencil.

    The stencil in each direction is the ``order`` closest grid nodes, ties
    resolved toward the lower index.  Parameters outside the grid range are
    rejected (no extrapolation).
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.shape != (op.grid.dim,):
        raise ValueError(f"alpha must have {op.grid.dim} entries")
    weights = []
    for i, nodes in enumerate(op.grid.nodes):
        a = float(alpha[i])
        span = max(nodes[-1] - nodes[0], 1.0)
        if a < nodes[0] - 1e-12 * span or a > nodes[-1] + 1e-12 * span:
            raise ValueError(
                f"alpha[{i}] = {a} outside grid range [{nodes[0]}, {nodes[-1]}]"
            )
        order = np.argsort(np.abs(nodes - a), kind="stable")
        stencil = np.sort(order[: op.order])
        w = np.zeros(nodes.size)
        for k in stencil:
            num = 1.0
            den = 1.0
            for m in stencil:
                if m == k:
                    continue
                num *= a - nodes[m]
                den *= nodes[k] - nodes[m]
            w[k] = num / den
        weights.append(w)
    return weights


@dataclass
class OnlineData:
    """Everything the online stage touches; all reduced-dimension objects."""

    components: list[TTTensor]
    c_ranks: tuple[int, ...]
    interp: InterpolationOperator
    reduced_operator_terms: list[np.ndarray]
    theta: list[Callable[[np.ndarray], float]]
    reduced_source_terms: list[np.ndarray]
    phi: list[Callable[[np.ndarray], float]]
    reduced_u0: np.ndarray
    dt: float
    n_steps: int
    snapshot_stride: int

    def __post_init__(self) -> None:
        q1 = self.c_ranks[0]
        if len(self.components) != math.prod(self.c_ranks):
            raise ValueError("component count must match the product of c_ranks")
        for term in self.reduced_operator_terms:
            if term.shape != (q1, q1):
                raise ValueError("reduced operator terms must be q1 x q1")
        for term in self.reduced_source_terms:
            if term.shape != (q1,):
                raise ValueError("reduced source terms must have length q1")
        if self.reduced_u0.shape != (q1,):
            raise ValueError("reduced initial state must have length q1")

    @property
    def q_min(self) -> int:
        return min(self.c_ranks)

    @property
    def n_snapshots(self) -> int:
        return self.n_steps // self.snapshot_stride


@dataclass
class LocalBasis:
    """Coordinates of the local reduced basis in the universal space."""

    beta: np.ndarray  # (q1, ell), orthonormal columns
    singular_values: np.ndarray

    def __post_init__(self) -> None:
        gram_err = np.abs(self.beta.T @ self.beta - np.eye(self.beta.shape[1])).max()
        if gram_err > 1e-10:
            raise ValueError(f"beta columns are not orthonormal ({gram_err:.2e})")


def core_matrix(online: OnlineData, chi: Sequence[np.ndarray]) -> np.ndarray:
    """Contract every component train with the weight vectors; (q1, q2)."""
    sizes = online.components[0].mode_sizes
    if len(chi) != len(sizes) or any(w.size != n for w, n in zip(chi, sizes)):
        raise ValueError("weight vectors do not match the sampled-mode sizes")
    vals = np.array([tt_contract_all(t, chi) for t in online.components])
    return vals.reshape(online.c_ranks, order="F")


def local_basis(core: np.ndarray, ell: int) -> LocalBasis:
    """First ``ell`` left singular vectors of the core matrix.

    Each vector's first nonzero entry is made non-negative so outputs are
    reproducible across runs and backends.
    """
    q_min = min(core.shape)
    if not 1 <= ell <= q_min:
        raise ValueError(f"ell must be in [1, {q_min}], got {ell}")
    u, s, _ = thin_svd(core)
    beta = u[:, :ell].copy()
    for i in range(ell):
        col = beta[:, i]
        nz = np.nonzero(col)[0]
        if nz.size and col[nz[0]] < 0:
            beta[:, i] = -col
    return LocalBasis(beta=beta, singular_values=s)


def build_online(
    h: HTTDecomposition,
    problem: FOMProblem,
    grid: ParameterGrid,
    interp_order: int = 2,
) -> tuple[OnlineData, np.ndarray]:
    """Project the affine system onto the universal basis; returns the basis too."""
    if grid.sizes != h.param_sizes:
        raise ValueError("grid sizes do not match the decomposition")
    if h.n_sliced_modes != 2:
        raise ValueError("the reduced-order model expects order-2 slices")
    u1 = h.factors[0]
    if u1.shape[0] != problem.state_dim:
        raise ValueError("first factor does not match the state dimension")
    online = OnlineData(
        components=h.components,
        c_ranks=h.c_ranks,
        interp=InterpolationOperator(interp_order, grid),
        reduced_operator_terms=[u1.T @ (term @ u1) for term in problem.operator_terms],
        theta=problem.theta,
        reduced_source_terms=[u1.T @ term for term in problem.source_terms],
        phi=problem.phi,
        reduced_u0=u1.T @ problem.u0,
        dt=problem.dt,
        n_steps=problem.n_steps,
        snapshot_stride=problem.snapshot_stride,
    )
    return online, u1


@dataclass
class OfflineResult:
    adaptive: AdaptiveResult
    online: OnlineData
    universal_basis: np.ndarray

    @property
    def htt(self) -> HTTDecomposition:
        return self.adaptive.htt


def rom_offline(
    problem: FOMProblem,
    grid: ParameterGrid,
    cfg: AdaptiveConfig,
    eps_q: float,
    opts: CompletionOptions | None = None,
    interp_order: int = 2,
    n_workers: int = 1,
    log: Callable[[str], None] | None = None,
) -> OfflineResult:
    """Adaptive slice completion followed by the universal projection."""
    oracle = slice_oracle(problem, grid)
    adaptive = adaptive_complete(oracle, cfg, eps_q, opts, n_workers=n_workers, log=log)
    online, u1 = build_online(adaptive.htt, problem, grid, interp_order)
    return OfflineResult(adaptive=adaptive, online=online, universal_basis=u1)


@dataclass
class RomSolution:
    reduced: np.ndarray  # (ell, n_snapshots)
    universal: np.ndarray  # (q1, n_snapshots): beta @ reduced
    beta: np.ndarray
    singular_values: np.ndarray


def rom_online(online: OnlineData, alpha, ell: int) -> RomSolution:
    """Assemble, project and integrate the parameter-specific reduced system."""
    alpha = np.asarray(alpha, dtype=np.float64)
    if not 1 <= ell <= online.q_min:
        raise ValueError(f"ell must be in [1, {online.q_min}], got {ell}")
    chi = lagrange_weights(online.interp, alpha)
    basis = local_basis(core_matrix(online, chi), ell)
    b_mat = basis.beta
    a_red = np.zeros((online.c_ranks[0], online.c_ranks[0]))
    for coeff, term in zip(online.theta, online.reduced_operator_terms):
        a_red += float(coeff(alpha)) * term
    rhs_red = np.zeros(online.c_ranks[0])
    for coeff, term in zip(online.phi, online.reduced_source_terms):
        rhs_red += float(coeff(alpha)) * term
    a_loc = b_mat.T @ a_red @ b_mat
    rhs_loc = b_mat.T @ rhs_red
    y = b_mat.T @ online.reduced_u0
    stepper = scipy.linalg.lu_factor(np.eye(ell) + online.dt * a_loc)
    snaps = np.empty((ell, online.n_snapshots))
    col = 0
    for step in range(1, online.n_steps + 1):
        y = scipy.linalg.lu_solve(stepper, y + online.dt * rhs_loc)
        if step % online.snapshot_stride == 0:
            snaps[:, col] = y
            col += 1
    return RomSolution(
        reduced=snaps,
        universal=b_mat @ snaps,
        beta=b_mat,
        singular_values=basis.singular_values,
    )


def error_E_alpha(
    fom_snaps: np.ndarray,
    rom_snaps: np.ndarray,
    dt: float,
    weights: np.ndarray,
) -> float:
    """Time-summed squared spatial norm of the trajectory mismatch."""
    fom_snaps = np.asarray(fom_snaps)
    rom_snaps = np.asarray(rom_snaps)
    if fom_snaps.shape != rom_snaps.shape:
        raise ValueError("trajectories must have identical shapes")
    diff = fom_snaps - rom_snaps
    return float(dt * np.sum(weights @ (diff * diff)))


def error_stats(e_values) -> tuple[float, float]:
    """(sqrt of the max, sqrt of the mean) of the per-parameter errors."""
    e = np.asarray(list(e_values), dtype=np.float64)
    if e.size == 0:
        raise ValueError("empty error list")
    return float(np.sqrt(e.max())), float(np.sqrt(e.mean()))


def rank_stats(h: HTTDecomposition) -> tuple[tuple[int, ...], tuple[float, ...]]:
    """(max, mean) interior train ranks per interface over the components."""
    return d_rank_stats(h)
