"""Finite-difference full-order models used as slice oracles.

Both built-in problems are affine-decomposed linear parabolic systems
``u_t = -A(alpha) u + b(alpha)`` with ``A(alpha) = sum_k theta_k(alpha) A_k``
and ``b(alpha) = sum_s phi_s(alpha) b_s``, integrated by implicit Euler:

* ``heat_fom`` -- heat equation on the rectangle ``[0,10] x [0,4]``,
  parameters in the boundary conditions: a Robin inflow condition on the
  left edge (coefficient and datum scale with ``alpha_1``) and three
  fixed-coefficient Robin segments on the right and top edges whose data
  scale with ``alpha_2..alpha_4``; homogeneous Neumann elsewhere.
* ``advdiff_fom`` -- advection-diffusion on the unit square with a Gaussian
  source, homogeneous Neumann walls and a divergence-free velocity field:
  a rotated unit vector plus the discrete curl of a cosine stream
  polynomial with up to 11 parameterized terms.

Node linearization is ``k = i + nx * j`` (x index fastest), matching the
package-wide first-index-fastest convention.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .adaptive import SliceOracle
from .errors import NumericalError
from .htt import SliceData

__all__ = [
    "ParameterBox",
    "ParameterGrid",
    "FOMProblem",
    "integrate",
    "heat_fom",
    "advdiff_fom",
    "advdiff_velocity",
    "advdiff_divergence",
    "snapshot_tensor",
    "slice_oracle",
]


@dataclass(frozen=True)
class ParameterBox:
    lows: tuple[float, ...]
    highs: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "lows", tuple(float(v) for v in self.lows))
        object.__setattr__(self, "highs", tuple(float(v) for v in self.highs))
        if len(self.lows) != len(self.highs):
            raise ValueError("lows and highs must have the same length")
        if any(lo >= hi for lo, hi in zip(self.lows, self.highs)):
            raise ValueError("each interval must satisfy low < high")

    @property
    def dim(self) -> int:
        return len(self.lows)

    def contains(self, alpha, tol: float = 1e-12) -> bool:
        alpha = np.asarray(alpha, dtype=np.float64)
        if alpha.shape != (self.dim,):
            return False
        lo = np.asarray(self.lows)
        hi = np.asarray(self.highs)
        slack = tol * np.maximum(1.0, np.abs(hi - lo))
        return bool(np.all(alpha >= lo - slack) and np.all(alpha <= hi + slack))

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        lo = np.asarray(self.lows)
        hi = np.asarray(self.highs)
        return lo + (hi - lo) * rng.random((count, self.dim))


@dataclass
class ParameterGrid:
    """Cartesian grid: one strictly increasing node list per direction."""

    nodes: list[np.ndarray]

    def __post_init__(self) -> None:
        self.nodes = [np.ascontiguousarray(n, dtype=np.float64) for n in self.nodes]
        for k, n in enumerate(self.nodes):
            if n.ndim != 1 or n.size < 1:
                raise ValueError(f"direction {k} needs at least one node")
            if np.any(np.diff(n) <= 0):
                raise ValueError(f"nodes in direction {k} must be strictly increasing")

    @classmethod
    def uniform(cls, box: ParameterBox, counts: Sequence[int]) -> "ParameterGrid":
        counts = [int(c) for c in counts]
        if len(counts) != box.dim:
            raise ValueError("need one node count per box direction")
        nodes = [
            np.linspace(lo, hi, c) if c > 1 else np.array([(lo + hi) / 2.0])
            for lo, hi, c in zip(box.lows, box.highs, counts)
        ]
        return cls(nodes)

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(n.size for n in self.nodes)

    @property
    def dim(self) -> int:
        return len(self.nodes)

    def node(self, j) -> np.ndarray:
        j = tuple(int(v) for v in j)
        if len(j) != self.dim:
            raise ValueError("multi-index has wrong length")
        for k, (jk, n) in enumerate(zip(j, self.nodes)):
            if not 0 <= jk < n.size:
                raise ValueError(f"index {jk} out of range in direction {k}")
        return np.array([self.nodes[k][jk] for k, jk in enumerate(j)])


@dataclass
class FOMProblem:
    """Affine linear dynamical system with implicit-Euler time stepping."""

    operator_terms: list[sp.spmatrix]
    theta: list[Callable[[np.ndarray], float]]
    source_terms: list[np.ndarray]
    phi: list[Callable[[np.ndarray], float]]
    u0: np.ndarray
    dt: float
    n_steps: int
    snapshot_stride: int
    quad_weights: np.ndarray
    box: ParameterBox
    name: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if len(self.operator_terms) != len(self.theta):
            raise ValueError("one coefficient function per operator term")
        if len(self.source_terms) != len(self.phi):
            raise ValueError("one coefficient function per source term")
        if self.n_steps % self.snapshot_stride != 0:
            raise ValueError("snapshot_stride must divide n_steps")

    @property
    def state_dim(self) -> int:
        return self.u0.size

    @property
    def n_snapshots(self) -> int:
        return self.n_steps // self.snapshot_stride

    @property
    def snapshot_dt(self) -> float:
        return self.dt * self.snapshot_stride

    @property
    def snapshot_times(self) -> np.ndarray:
        return self.snapshot_dt * np.arange(1, self.n_snapshots + 1)

    def assemble(self, alpha) -> sp.csc_matrix:
        alpha = np.asarray(alpha, dtype=np.float64)
        out = None
        for coeff, term in zip(self.theta, self.operator_terms):
            c = float(coeff(alpha))
            if c == 0.0:
                continue
            out = c * term if out is None else out + c * term
        if out is None:
            out = sp.csc_matrix((self.state_dim, self.state_dim))
        return out.tocsc()

    def source(self, alpha) -> np.ndarray:
        alpha = np.asarray(alpha, dtype=np.float64)
        out = np.zeros(self.state_dim)
        for coeff, term in zip(self.phi, self.source_terms):
            out += float(coeff(alpha)) * term
        return out


def integrate(problem: FOMProblem, alpha) -> np.ndarray:
    """Snapshot matrix (state_dim x n_snapshots) of the implicit-Euler flow."""
    alpha = np.asarray(alpha, dtype=np.float64)
    if not problem.box.contains(alpha):
        raise ValueError(f"parameter {alpha.tolist()} outside the admissible box")
    a_mat = problem.assemble(alpha)
    b = problem.source(alpha)
    m = (sp.identity(problem.state_dim, format="csc") + problem.dt * a_mat).tocsc()
    try:
        lu = splu(m)
    except RuntimeError as exc:
        raise NumericalError(f"implicit-Euler factorization failed: {exc}") from exc
    u = problem.u0.astype(np.float64).copy()
    snaps = np.empty((problem.state_dim, problem.n_snapshots))
    col = 0
    for step in range(1, problem.n_steps + 1):
        rhs = u + problem.dt * b
        u = lu.solve(rhs)
        rhs_norm = float(np.linalg.norm(rhs))
        resid = float(np.linalg.norm(m @ u - rhs))
        if resid > 1e-10 * max(rhs_norm, 1e-300) and resid > 1e-13:
            raise NumericalError(
                f"linear solve residual {resid:.3e} exceeds tolerance at step {step}"
            )
        if step % problem.snapshot_stride == 0:
            snaps[:, col] = u
            col += 1
    return snaps


# ---------------------------------------------------------------------------
# 1-D difference operators (reflected ghosts encode homogeneous Neumann)


def _d2_reflect(n: int, h: float) -> sp.csr_matrix:
    main = np.full(n, -2.0)
    off = np.ones(n - 1)
    mat = sp.diags([off, main, off], [-1, 0, 1], format="lil")
    mat[0, 1] = 2.0
    mat[n - 1, n - 2] = 2.0
    return (mat / (h * h)).tocsr()


def _d1_reflect(n: int, h: float) -> sp.csr_matrix:
    off = np.ones(n - 1) / (2.0 * h)
    mat = sp.diags([-off, off], [-1, 1], format="lil")
    mat[0, 1] = 0.0  # reflected ghost: derivative vanishes on the wall
    mat[n - 1, n - 2] = 0.0
    return mat.tocsr()


def _d1_oneside(n: int, h: float) -> sp.csr_matrix:
    off = np.ones(n - 1) / (2.0 * h)
    mat = sp.diags([-off, off], [-1, 1], format="lil")
    mat[0, 0], mat[0, 1], mat[0, 2] = -1.5 / h, 2.0 / h, -0.5 / h
    mat[n - 1, n - 1], mat[n - 1, n - 2], mat[n - 1, n - 3] = 1.5 / h, -2.0 / h, 0.5 / h
    return mat.tocsr()


def _trapezoid_weights(ns: Sequence[int], hs: Sequence[float]) -> np.ndarray:
    per_dir = []
    for n, h in zip(ns, hs):
        w = np.full(n, h)
        w[0] *= 0.5
        w[-1] *= 0.5
        per_dir.append(w)
    w = per_dir[0]
    for nxt in per_dir[1:]:
        w = np.outer(w, nxt).ravel(order="F")
    return w


# ---------------------------------------------------------------------------
# heat problem


HEAT_BOX = ParameterBox((0.01, 0.0, 0.0, 0.0), (0.501, 0.9, 0.9, 0.9))
_HEAT_LX, _HEAT_LY = 10.0, 4.0
# stand-ins for the three interior-boundary segments: two on the right edge,
# one on the top edge, all away from the corners
_HEAT_SEGMENTS = (
    ("right", 0.5, 1.5),
    ("right", 2.5, 3.5),
    ("top", 4.0, 6.0),
)


def heat_fom(shape, dt: float | None = None, n_snapshots: int = 100) -> FOMProblem:
    """Boundary-driven heat problem; parameters alpha in HEAT_BOX."""
    if np.isscalar(shape):
        nx = int(shape)
        ny = max(8, round(nx * _HEAT_LY / _HEAT_LX))
    else:
        nx, ny = (int(v) for v in shape)
    if nx < 8 or ny < 8:
        raise ValueError(f"heat grid needs at least 8 nodes per direction, got {(nx, ny)}")
    if n_snapshots < 1:
        raise ValueError("n_snapshots must be positive")
    dt = 20.0 / n_snapshots if dt is None else float(dt)
    if dt <= 0:
        raise ValueError("dt must be positive")
    hx = _HEAT_LX / (nx - 1)
    hy = _HEAT_LY / (ny - 1)
    lap = sp.kron(sp.identity(ny), _d2_reflect(nx, hx)) + sp.kron(
        _d2_reflect(ny, hy), sp.identity(nx)
    )
    xs = hx * np.arange(nx)
    ys = hy * np.arange(ny)
    n_dof = nx * ny

    def _edge_mask(edge: str, lo: float, hi: float) -> np.ndarray:
        mask = np.zeros((nx, ny), dtype=bool)
        if edge == "right":
            mask[nx - 1, (ys >= lo) & (ys <= hi)] = True
        else:  # top
            mask[(xs >= lo) & (xs <= hi), ny - 1] = True
        return mask.ravel(order="F")

    left_mask = np.zeros((nx, ny), dtype=bool)
    left_mask[0, :] = True
    left_mask = left_mask.ravel(order="F")

    a_base = (-lap).tolil()
    sources = [np.where(left_mask, 2.0 / hx, 0.0)]
    for edge, lo, hi in _HEAT_SEGMENTS:
        mask = _edge_mask(edge, lo, hi)
        if not mask.any():
            raise ValueError("a Robin segment contains no grid node; refine the grid")
        h_edge = hx if edge == "right" else hy
        a_base += sp.diags(np.where(mask, 1.0 / h_edge, 0.0))
        sources.append(np.where(mask, 1.0 / h_edge, 0.0))
    a_inflow = sp.diags(np.where(left_mask, 2.0 / hx, 0.0)).tocsr()

    theta = [lambda a: 1.0, lambda a: float(a[0])]
    phi = [
        lambda a: float(a[0]),
        lambda a: float(a[1]),
        lambda a: float(a[2]),
        lambda a: float(a[3]),
    ]
    return FOMProblem(
        operator_terms=[a_base.tocsr(), a_inflow],
        theta=theta,
        source_terms=sources,
        phi=phi,
        u0=np.zeros(n_dof),
        dt=dt,
        n_steps=n_snapshots,
        snapshot_stride=1,
        quad_weights=_trapezoid_weights((nx, ny), (hx, hy)),
        box=HEAT_BOX,
        name="heat",
        meta={"nx": nx, "ny": ny, "hx": hx, "hy": hy},
    )


# ---------------------------------------------------------------------------
# advection-diffusion problem


ADVDIFF_NU = 1.0 / 30.0
_ADVDIFF_SIGMA = 0.05
_ADVDIFF_CENTER = (0.25, 0.25)
# stream polynomial terms: cos(a*pi*x) * cos(b*pi*y), scaled by alpha_2..alpha_12
_STREAM_TERMS = (
    (1, 0), (0, 1), (1, 1), (2, 0), (0, 2), (2, 1), (1, 2), (2, 2),
    (3, 0), (0, 3), (3, 1),
)


def advdiff_box(d_active: int) -> ParameterBox:
    lows = (0.1 * math.pi,) + (-0.1,) * (d_active - 1)
    highs = (0.3 * math.pi,) + (0.1,) * (d_active - 1)
    return ParameterBox(lows, highs)


def _advdiff_nodes(grid_n: int) -> tuple[np.ndarray, np.ndarray, float]:
    h = 1.0 / grid_n
    xs = h * np.arange(grid_n + 1)
    return xs, xs.copy(), h


def _stream_fields(grid_n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Discrete-curl velocity of every stream term, as nodal (mx, my) arrays."""
    xs, ys, h = _advdiff_nodes(grid_n)
    m = xs.size
    x, y = np.meshgrid(xs, ys, indexing="ij")
    dx = _d1_oneside(m, h).toarray()
    dy = dx
    fields = []
    for a, b in _STREAM_TERMS:
        psi = np.cos(a * math.pi * x) * np.cos(b * math.pi * y)
        w1 = (psi @ dy.T) / math.pi  # d(psi)/dy
        w2 = -(dx @ psi) / math.pi  # -d(psi)/dx
        fields.append((w1, w2))
    return fields


def advdiff_velocity(grid_n: int, alpha) -> tuple[np.ndarray, np.ndarray]:
    """Nodal velocity components at parameter ``alpha`` (length >= 1)."""
    alpha = np.asarray(alpha, dtype=np.float64)
    m = grid_n + 1
    eta1 = np.full((m, m), math.cos(alpha[0]))
    eta2 = np.full((m, m), math.sin(alpha[0]))
    fields = _stream_fields(grid_n)
    for j, (w1, w2) in enumerate(fields, start=1):
        if j < alpha.size:
            eta1 += alpha[j] * w1
            eta2 += alpha[j] * w2
    return eta1, eta2


def advdiff_divergence(grid_n: int, alpha) -> np.ndarray:
    """Discrete divergence of the velocity at ``alpha`` (same stencils)."""
    eta1, eta2 = advdiff_velocity(grid_n, alpha)
    m = grid_n + 1
    h = 1.0 / grid_n
    d = _d1_oneside(m, h).toarray()
    return d @ eta1 + eta2 @ d.T


def advdiff_fom(
    grid_n: int,
    dt: float = 1.0 / 200.0,
    n_snapshots: int = 50,
    d_active: int = 6,
) -> FOMProblem:
    """Advection-diffusion problem on the unit square, T = 1."""
    if d_active not in (6, 9, 12):
        raise ValueError("d_active must be 6, 9 or 12")
    grid_n = int(grid_n)
    if grid_n < 8:
        raise ValueError("grid_n must be at least 8")
    n_steps = round(1.0 / dt)
    if abs(n_steps * dt - 1.0) > 1e-12:
        raise ValueError("dt must divide the final time T = 1")
    if n_steps % n_snapshots != 0:
        raise ValueError("n_snapshots must divide the number of time steps")
    m = grid_n + 1
    h = 1.0 / grid_n
    xs, ys, _ = _advdiff_nodes(grid_n)
    lap = sp.kron(sp.identity(m), _d2_reflect(m, h)) + sp.kron(
        _d2_reflect(m, h), sp.identity(m)
    )
    dx2d = sp.kron(sp.identity(m), _d1_reflect(m, h)).tocsr()
    dy2d = sp.kron(_d1_reflect(m, h), sp.identity(m)).tocsr()

    fields = _stream_fields(grid_n)
    # parameter-independent first-order stabilization, switched on by the
    # worst-case mesh Peclet number over the whole parameter box
    speed_bound = np.hypot(
        1.0 + 0.1 * sum(np.abs(w1) for w1, _ in fields),
        0.1 * sum(np.abs(w2) for _, w2 in fields),
    ).max()
    peclet = speed_bound * h / (2.0 * ADVDIFF_NU)
    blend = max(0.0, 1.0 - 1.0 / peclet) if peclet > 1.0 else 0.0
    gamma = blend * speed_bound * h / 2.0

    operator_terms: list[sp.spmatrix] = [((ADVDIFF_NU + gamma) * (-lap)).tocsr()]
    theta: list[Callable[[np.ndarray], float]] = [lambda a: 1.0]
    operator_terms.append(dx2d)
    theta.append(lambda a: math.cos(float(a[0])))
    operator_terms.append(dy2d)
    theta.append(lambda a: math.sin(float(a[0])))
    for j in range(1, d_active):
        w1, w2 = fields[j - 1]
        adv = sp.diags(w1.ravel(order="F")) @ dx2d + sp.diags(w2.ravel(order="F")) @ dy2d
        operator_terms.append(adv.tocsr())
        theta.append(lambda a, j=j: float(a[j]))

    x, y = np.meshgrid(xs, ys, indexing="ij")
    x0, y0 = _ADVDIFF_CENTER
    f = np.exp(-((x - x0) ** 2 + (y - y0) ** 2) / (2.0 * _ADVDIFF_SIGMA**2))
    f /= 2.0 * math.pi * _ADVDIFF_SIGMA**2
    return FOMProblem(
        operator_terms=operator_terms,
        theta=theta,
        source_terms=[f.ravel(order="F")],
        phi=[lambda a: 1.0],
        u0=np.zeros(m * m),
        dt=dt,
        n_steps=n_steps,
        snapshot_stride=n_steps // n_snapshots,
        quad_weights=_trapezoid_weights((m, m), (h, h)),
        box=advdiff_box(d_active),
        name="advdiff",
        meta={"grid_n": grid_n, "h": h, "nu": ADVDIFF_NU, "stabilization": gamma,
              "d_active": d_active},
    )


# ---------------------------------------------------------------------------
# bridges into the completion machinery


def snapshot_tensor(problem: FOMProblem, grid: ParameterGrid, subset) -> SliceData:
    """Slice data whose order-2 slices are the snapshot matrices at ``subset``."""
    indices = np.asarray(list(map(tuple, subset)), dtype=np.intp)
    if indices.size == 0:
        raise ValueError("subset is empty")
    slices = np.stack([integrate(problem, grid.node(j)) for j in indices])
    return SliceData(
        slice_shape=(problem.state_dim, problem.n_snapshots),
        param_sizes=grid.sizes,
        train_indices=indices,
        slices=slices,
    )


def slice_oracle(problem: FOMProblem, grid: ParameterGrid) -> SliceOracle:
    """Pure slice oracle backed by the full-order solver."""
    return SliceOracle(
        slice_shape=(problem.state_dim, problem.n_snapshots),
        param_sizes=grid.sizes,
        retrieve=lambda j: integrate(problem, grid.node(j)),
    )
