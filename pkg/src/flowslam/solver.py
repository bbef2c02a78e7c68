"""Sparse Gauss-Newton batch estimator.

Each outer iteration linearizes every factor at the current estimate and
accumulates the information matrix and potential vector

    Omega += J^T W J,    xi += J^T W e,

anchors the initial state with a large diagonal weight, and solves the
damped normal equations (Omega + lambda I) delta = -xi by preconditioned
conjugate gradient.  The variable vector stacks all robot states (5 each)
followed by all node velocities (2 each).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .factors import (
    FactorWeights,
    FullState,
    MotionFactor,
    ObservationFactor,
    _interp_terms,
    build_motion_factors,
    build_observation_factors,
    total_cost,
    weights_from_noise,
)
from .flow_map import FlowMap, GridSpec
from .sim import SensorLog, dead_reckon
from .states import Trajectory, rotation_to_body

__all__ = [
    "SparseSystem",
    "CgConfig",
    "GnConfig",
    "SolverConfig",
    "CgResult",
    "IterationStats",
    "OptimizeResult",
    "OptimizationDiverged",
    "assemble",
    "anchor_initial_state",
    "solve_damped_cg",
    "initial_guess",
    "optimize",
    "marginal_covariance",
]

LSF_RIDGE = 1e-6  # regularisation pinning unobserved nodes to zero


class OptimizationDiverged(RuntimeError):
    """Cost increased on two consecutive Gauss-Newton iterations."""

    def __init__(self, message, iterations):
        super().__init__(message)
        self.iterations = iterations


@dataclass
class SparseSystem:
    """Linearized information system Omega * delta = -xi.

    ``state_diag``/``node_diag`` hold the diagonal blocks of Omega for the
    block-Jacobi preconditioner.
    """

    dim: int
    n_states: int
    n_nodes: int
    omega: sp.csr_matrix
    xi: np.ndarray
    state_diag: np.ndarray  # (n_states, 5, 5)
    node_diag: np.ndarray   # (n_nodes, 2, 2)


@dataclass(frozen=True)
class CgConfig:
    rel_tol: float = 1e-8
    max_iters: int | None = None  # None: 10x system dimension

    def iteration_cap(self, dim: int) -> int:
        return self.max_iters if self.max_iters is not None else 10 * dim


@dataclass(frozen=True)
class GnConfig:
    max_iters: int = 20
    step_tol: float = 1e-6  # on the infinity norm of the increment


@dataclass(frozen=True)
class SolverConfig:
    damping: float = 1e-3
    anchor_weight: float = 1e12
    cg: CgConfig = field(default_factory=CgConfig)
    gn: GnConfig = field(default_factory=GnConfig)

    def __post_init__(self):
        if self.damping < 0:
            raise ValueError("damping must be nonnegative")

    def to_dict(self) -> dict:
        return {
            "damping": self.damping,
            "anchor_weight": self.anchor_weight,
            "cg_rel_tol": self.cg.rel_tol,
            "cg_max_iters": self.cg.max_iters,
            "gn_max_iters": self.gn.max_iters,
            "gn_step_tol": self.gn.step_tol,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SolverConfig":
        return cls(
            damping=d.get("damping", 1e-3),
            anchor_weight=d.get("anchor_weight", 1e12),
            cg=CgConfig(d.get("cg_rel_tol", 1e-8), d.get("cg_max_iters")),
            gn=GnConfig(d.get("gn_max_iters", 20), d.get("gn_step_tol", 1e-6)),
        )


@dataclass
class CgResult:
    iterations: int
    converged: bool
    rel_residual: float


@dataclass
class IterationStats:
    iteration: int
    cost: float
    step_norm: float  # infinity norm of the increment
    cg_iters: int

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "cost": self.cost,
            "step_norm": self.step_norm,
            "cg_iters": self.cg_iters,
        }


@dataclass
class OptimizeResult:
    state: FullState
    initial: FullState
    converged: bool
    iterations: list[IterationStats]
    dropped_observations: int
    initial_cost: float = float("nan")


def _assemble_from_factors(
    point: FullState,
    motion: list[MotionFactor],
    obs: list[ObservationFactor],
) -> SparseSystem:
    n_states, n_nodes = point.n_states, point.n_nodes
    dim = point.dim
    node_off = 5 * n_states
    states = point.trajectory.states
    node_vel = point.flow_map.node_velocities

    nm, no = len(motion), len(obs)
    n_entries = 100 * nm + 169 * no
    rows = np.empty(n_entries, dtype=np.int64)
    cols = np.empty(n_entries, dtype=np.int64)
    data = np.empty(n_entries)
    xi = np.zeros(dim)
    state_diag = np.zeros((n_states, 5, 5))
    node_diag = np.zeros((n_nodes, 2, 2))

    if nm:
        ks = np.array([f.k for f in motion])
        idx = 5 * (ks - 1)[:, None] + np.arange(10)
        rows[: 100 * nm] = np.repeat(idx, 10, axis=1).ravel()
        cols[: 100 * nm] = np.tile(idx, (1, 10)).ravel()
    pos = 0
    for f in motion:
        e = f.residual(states)
        J = f.jacobian(states)
        WJ = f.info[:, None] * J
        B = J.T @ WJ
        data[pos: pos + 100] = B.ravel()
        pos += 100
        g = WJ.T @ e
        base = 5 * (f.k - 1)
        xi[base: base + 10] += g
        state_diag[f.k - 1] += B[0:5, 0:5]
        state_diag[f.k] += B[5:10, 5:10]

    if no:
        ks = np.array([f.k for f in obs])
        nodes = np.stack([f.node_indices for f in obs])  # (no, 4)
        node_cols = node_off + np.repeat(2 * nodes, 2, axis=1) + np.tile([0, 1], 4)
        idx = np.concatenate([5 * ks[:, None] + np.arange(5), node_cols], axis=1)
        rows[100 * nm:] = np.repeat(idx, 13, axis=1).ravel()
        cols[100 * nm:] = np.tile(idx, (1, 13)).ravel()
        for j, f in enumerate(obs):
            e = f.residual(states, node_vel)
            H = f.jacobian(states, node_vel)
            B = f.info * (H.T @ H)
            data[pos: pos + 169] = B.ravel()
            pos += 169
            g = f.info * (H.T @ e)
            base = 5 * f.k
            xi[base: base + 5] += g[0:5]
            xi[idx[j, 5:]] += g[5:]
            state_diag[f.k] += B[0:5, 0:5]
            for m, node in enumerate(f.node_indices):
                node_diag[node] += B[5 + 2 * m: 7 + 2 * m, 5 + 2 * m: 7 + 2 * m]

    omega = sp.coo_matrix((data, (rows, cols)), shape=(dim, dim)).tocsr()
    return SparseSystem(dim, n_states, n_nodes, omega, xi, state_diag, node_diag)


def assemble(
    point: FullState,
    log: SensorLog,
    weights: FactorWeights | None = None,
) -> SparseSystem:
    """Build the information system for a log, linearized at ``point``."""
    if point.n_states != len(log.truth):
        raise ValueError(
            f"linearization point has {point.n_states} states but the log "
            f"has {len(log.truth)}"
        )
    weights = weights or weights_from_noise(log.noise)
    motion = build_motion_factors(log, weights)
    obs, _ = build_observation_factors(log, point.flow_map.grid, weights)
    return _assemble_from_factors(point, motion, obs)


def anchor_initial_state(sys: SparseSystem, weight: float = 1e12) -> SparseSystem:
    """Add ``weight * I`` to the diagonal block of the first robot state.

    A finite-information stand-in for clamping the (known) initial state;
    the potential vector is untouched so the solved increment leaves the
    initial state essentially unchanged.  Anchoring is additive, not
    idempotent.
    """
    diag = np.zeros(sys.dim)
    diag[0:5] = weight
    sys.omega = (sys.omega + sp.diags(diag)).tocsr()
    sys.state_diag[0] += weight * np.eye(5)
    return sys


def _block_jacobi_inverse(sys: SparseSystem, lam: float):
    eye5 = lam * np.eye(5)
    eye2 = lam * np.eye(2)
    inv_state = np.linalg.inv(sys.state_diag + eye5)
    inv_node = np.linalg.inv(sys.node_diag + eye2)
    split = 5 * sys.n_states

    def apply(r: np.ndarray) -> np.ndarray:
        out = np.empty_like(r)
        out[:split] = np.einsum(
            "kij,kj->ki", inv_state, r[:split].reshape(-1, 5)
        ).ravel()
        out[split:] = np.einsum(
            "kij,kj->ki", inv_node, r[split:].reshape(-1, 2)
        ).ravel()
        return out

    return apply


def solve_damped_cg(
    sys: SparseSystem, lam: float = 1e-3, cfg: CgConfig | None = None
) -> tuple[np.ndarray, CgResult]:
    """Solve (Omega + lambda I) delta = -xi by block-Jacobi preconditioned CG.

    Stops when the residual 2-norm drops below ``cfg.rel_tol`` times the
    right-hand-side norm.  If the iteration cap is reached the best iterate
    seen is returned with ``converged=False``.
    """
    cfg = cfg or CgConfig()
    b = -sys.xi
    b_norm = np.linalg.norm(b)
    if b_norm == 0.0:
        return np.zeros(sys.dim), CgResult(0, True, 0.0)

    omega = sys.omega
    precond = _block_jacobi_inverse(sys, lam)
    tol = cfg.rel_tol * b_norm
    cap = cfg.iteration_cap(sys.dim)

    x = np.zeros(sys.dim)
    r = b.copy()
    z = precond(r)
    p = z.copy()
    rz = float(r @ z)
    best_x, best_res = x.copy(), b_norm
    iters = 0
    while iters < cap:
        Ap = omega @ p
        Ap += lam * p
        pAp = float(p @ Ap)
        if pAp <= 0.0:
            break  # damped, anchored systems are SPD; bail out on breakdown
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        iters += 1
        res = float(np.linalg.norm(r))
        if res < best_res:
            best_res = res
            best_x = x.copy()
        if res <= tol:
            return x, CgResult(iters, True, res / b_norm)
        z = precond(r)
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    return best_x, CgResult(iters, False, best_res / b_norm)


def initial_guess(log: SensorLog, grid: GridSpec) -> FullState:
    """Dead-reckoned trajectory plus a least-squares-fitted flow map.

    Each relative-flow sample contributes the linear equation
    sum_i w_i v_i = R(psi)^T z + v_robot, evaluated along the dead-reckoned
    trajectory with the known (truth-derived) cell association.  A small
    ridge term pins nodes that no sample touches to zero.
    """
    dr = dead_reckon(log, log.truth.state_at(0))
    obs, _ = build_observation_factors(log, grid, FactorWeights())
    n = grid.n_nodes
    ata = LSF_RIDGE * np.eye(n)
    atb = np.zeros((n, 2))
    for f in obs:
        w, _, _ = _interp_terms(f.rect, dr.positions[f.k])
        rhs = rotation_to_body(dr.headings[f.k]).T @ f.z + dr.velocities[f.k]
        sub = np.outer(w, w)
        ii = f.node_indices
        ata[np.ix_(ii, ii)] += sub
        atb[ii] += np.outer(w, rhs)
    node_vel = np.linalg.solve(ata, atb)
    return FullState(dr, FlowMap(grid, node_vel))


def optimize(
    log: SensorLog,
    grid: GridSpec,
    config: SolverConfig | None = None,
    *,
    weights: FactorWeights | None = None,
    init: FullState | None = None,
) -> OptimizeResult:
    """Full batch estimation: iterate linearize / anchor / damped-CG solve.

    Raises :class:`OptimizationDiverged` if the cost rises on two
    consecutive iterations.
    """
    config = config or SolverConfig()
    weights = weights or weights_from_noise(log.noise)
    motion = build_motion_factors(log, weights)
    obs, dropped = build_observation_factors(log, grid, weights)

    state = init.copy() if init is not None else initial_guess(log, grid)
    if state.flow_map.grid != grid:
        raise ValueError("initial state grid does not match the requested grid")
    initial = state.copy()

    stats: list[IterationStats] = []
    prev_cost = total_cost(state, motion, obs)
    initial_cost = prev_cost
    rises = 0
    converged = False
    for it in range(1, config.gn.max_iters + 1):
        sys = _assemble_from_factors(state, motion, obs)
        anchor_initial_state(sys, config.anchor_weight)
        delta, cg = solve_damped_cg(sys, config.damping, config.cg)
        state = state.apply_delta(delta)
        cost = total_cost(state, motion, obs)
        step_norm = float(np.max(np.abs(delta))) if len(delta) else 0.0
        stats.append(IterationStats(it, cost, step_norm, cg.iterations))
        if step_norm < config.gn.step_tol:
            converged = True
            break
        rises = rises + 1 if cost > prev_cost else 0
        if rises >= 2:
            raise OptimizationDiverged(
                f"cost increased on iterations {it - 1} and {it}", stats
            )
        prev_cost = cost

    return OptimizeResult(state, initial, converged, stats, dropped, initial_cost)


def marginal_covariance(
    sys: SparseSystem,
    variables,
    lam: float = 1e-3,
    cfg: CgConfig | None = None,
):
    """Diagonal covariance blocks of selected variables.

    ``variables`` is a sequence of ("state", k) or ("node", i) pairs; one
    linear solve of (Omega + lambda I) per requested column.  Returns a
    list of (block, converged) pairs.
    """
    out = []
    node_off = 5 * sys.n_states
    for kind, index in variables:
        if kind == "state":
            base, size = 5 * index, 5
        elif kind == "node":
            base, size = node_off + 2 * index, 2
        else:
            raise ValueError(f"unknown variable kind {kind!r}")
        block = np.empty((size, size))
        ok = True
        for c in range(size):
            probe = SparseSystem(
                sys.dim, sys.n_states, sys.n_nodes, sys.omega,
                np.zeros(sys.dim), sys.state_diag, sys.node_diag,
            )
            probe.xi[base + c] = -1.0
            col, cg = solve_damped_cg(probe, lam, cfg)
            ok = ok and cg.converged
            block[:, c] = col[base: base + size]
        out.append(((block + block.T) / 2.0, ok))
    return out
