"""Residuals and analytic Jacobians for the two factor types.

Motion factors tie consecutive robot states together through the INS
sample and a velocity pseudo-input (the velocity state must match the
discrete position difference).  Observation factors tie one robot state
and the four flow-map nodes boxing it through the body-frame relative-flow
measurement.

State ordering inside a 5-vector is [x, y, vx, vy, psi]; a motion factor's
Jacobian is taken with respect to the stacked 10-vector [state_{k-1},
state_k], an observation factor's with respect to [state_k, v11, v21, v12,
v22] (13 variables).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .flow_map import FlowMap, GridSpec, cell_of, cell_weights_at
from .sim import AdcpSample, InsSample, SensorLog, SensorNoiseSpec
from .states import (
    RobotState,
    Trajectory,
    rotation_to_body,
    rotation_to_body_deriv,
    wrap_angle,
)

__all__ = [
    "FullState",
    "FactorWeights",
    "MotionFactor",
    "ObservationFactor",
    "rotation_to_body",
    "motion_residual",
    "motion_jacobian",
    "observation_residual",
    "observation_jacobian",
    "weights_from_noise",
    "build_motion_factors",
    "build_observation_factors",
    "total_cost",
]

# lower bound on factor sigmas so noiseless logs keep finite weights
_SIGMA_FLOOR = 1e-9


@dataclass
class FullState:
    """The full optimization variable: all robot states plus the flow map."""

    trajectory: Trajectory
    flow_map: FlowMap

    @property
    def n_states(self) -> int:
        return len(self.trajectory)

    @property
    def n_nodes(self) -> int:
        return self.flow_map.grid.n_nodes

    @property
    def dim(self) -> int:
        return 5 * self.n_states + 2 * self.n_nodes

    def copy(self) -> "FullState":
        return FullState(self.trajectory.copy(), self.flow_map.copy())

    def as_vector(self) -> np.ndarray:
        return np.concatenate(
            [self.trajectory.states.ravel(), self.flow_map.node_velocities.ravel()]
        )

    def apply_delta(self, delta: np.ndarray) -> "FullState":
        """Return the state shifted by a stacked increment (headings wrapped)."""
        delta = np.asarray(delta, dtype=float)
        if delta.shape != (self.dim,):
            raise ValueError(f"expected increment of length {self.dim}")
        ns = self.n_states
        states = self.trajectory.states + delta[: 5 * ns].reshape(ns, 5)
        states[:, 4] = wrap_angle(states[:, 4])
        nodes = self.flow_map.node_velocities + delta[5 * ns:].reshape(-1, 2)
        return FullState(
            Trajectory(self.trajectory.t.copy(), states),
            FlowMap(self.flow_map.grid, nodes),
        )


@dataclass(frozen=True)
class FactorWeights:
    """Standard deviations defining the (spherical) factor covariances."""

    sigma_v: float = 1e-2   # velocity pseudo-input consistency, m/s
    sigma_a: float = 1e-3   # accelerometer, m/s^2
    sigma_r: float = 1e-4   # gyro, rad/s
    sigma_z: float = 1e-2   # relative flow, m/s

    def motion_info(self) -> np.ndarray:
        """Diagonal of R_k^{-1} in row order [v, v, a, a, r]."""
        return np.array(
            [
                self.sigma_v**-2,
                self.sigma_v**-2,
                self.sigma_a**-2,
                self.sigma_a**-2,
                self.sigma_r**-2,
            ]
        )

    def observation_info(self) -> float:
        """Scalar information of Q_k = sigma_z^2 I."""
        return self.sigma_z**-2


def weights_from_noise(noise: SensorNoiseSpec, sigma_v: float = 1e-2) -> FactorWeights:
    """Factor sigmas matching the per-sample white-noise levels of a log.

    Biases are deliberately not modelled.  Zero white-noise channels are
    floored at a tiny sigma so noiseless logs remain usable.
    """
    return FactorWeights(
        sigma_v=max(sigma_v, _SIGMA_FLOOR),
        sigma_a=max(noise.accel.white_sd(noise.ins_rate_hz), _SIGMA_FLOOR),
        sigma_r=max(noise.gyro.white_sd(noise.ins_rate_hz), _SIGMA_FLOOR),
        sigma_z=max(noise.adcp.white_sd(noise.adcp_rate_hz), _SIGMA_FLOOR),
    )


# ---------------------------------------------------------------------------
# motion factor


def _motion_residual(prev: np.ndarray, curr: np.ndarray, accel, yaw_rate, dt):
    e = np.empty(5)
    e[0:2] = curr[2:4] - (curr[0:2] - prev[0:2]) / dt
    e[2:4] = accel - rotation_to_body(curr[4]) @ ((curr[2:4] - prev[2:4]) / dt)
    e[4] = yaw_rate - wrap_angle(curr[4] - prev[4]) / dt
    return e


def _motion_jacobian(prev: np.ndarray, curr: np.ndarray, dt):
    F = np.zeros((5, 10))
    R = rotation_to_body(curr[4])
    dR = rotation_to_body_deriv(curr[4])
    dv = (curr[2:4] - prev[2:4]) / dt
    # velocity-consistency rows
    F[0, 0] = F[1, 1] = 1.0 / dt
    F[0, 5] = F[1, 6] = -1.0 / dt
    F[0, 7] = F[1, 8] = 1.0
    # acceleration rows
    F[2:4, 2:4] = R / dt
    F[2:4, 7:9] = -R / dt
    F[2:4, 9] = -dR @ dv
    # yaw-rate row
    F[4, 4] = 1.0 / dt
    F[4, 9] = -1.0 / dt
    return F


def _state_vec(x) -> np.ndarray:
    if isinstance(x, RobotState):
        return x.as_vector()
    return np.asarray(x, dtype=float).reshape(5)


def motion_residual(x_prev, x_curr, u: InsSample, dt: float) -> np.ndarray:
    """5-vector motion error [velocity consistency; accel; yaw rate]."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    return _motion_residual(
        _state_vec(x_prev), _state_vec(x_curr), np.asarray(u.accel, dtype=float),
        u.yaw_rate, dt,
    )


def motion_jacobian(x_prev, x_curr, u: InsSample, dt: float) -> np.ndarray:
    """5x10 Jacobian of :func:`motion_residual` wrt [x_{k-1}, x_k]."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    return _motion_jacobian(_state_vec(x_prev), _state_vec(x_curr), dt)


@dataclass
class MotionFactor:
    """One INS-derived constraint between states k-1 and k."""

    k: int
    accel: np.ndarray
    yaw_rate: float
    dt: float
    info: np.ndarray  # (5,) diagonal of R_k^{-1}

    def residual(self, states: np.ndarray) -> np.ndarray:
        return _motion_residual(
            states[self.k - 1], states[self.k], self.accel, self.yaw_rate, self.dt
        )

    def jacobian(self, states: np.ndarray) -> np.ndarray:
        return _motion_jacobian(states[self.k - 1], states[self.k], self.dt)


# ---------------------------------------------------------------------------
# observation factor


def _interp_terms(rect, p):
    """Weights and weight gradients of the bilinear blend over a cell."""
    x1, y1, x2, y2 = rect
    area = (x2 - x1) * (y2 - y1)
    x, y = p
    w = np.array(
        [
            (y2 - y) * (x2 - x),
            (y2 - y) * (x - x1),
            (y - y1) * (x2 - x),
            (y - y1) * (x - x1),
        ]
    ) / area
    dwdx = np.array([-(y2 - y), (y2 - y), -(y - y1), (y - y1)]) / area
    dwdy = np.array([-(x2 - x), -(x - x1), (x2 - x), (x - x1)]) / area
    return w, dwdx, dwdy


def _observation_residual(state, z, rect, node_vel):
    w, _, _ = _interp_terms(rect, state[0:2])
    v_p = w @ node_vel
    return z - rotation_to_body(state[4]) @ (v_p - state[2:4])


def _observation_jacobian(state, rect, node_vel):
    w, dwdx, dwdy = _interp_terms(rect, state[0:2])
    R = rotation_to_body(state[4])
    dR = rotation_to_body_deriv(state[4])
    v_p = w @ node_vel
    H = np.zeros((2, 13))
    grad = np.column_stack([dwdx @ node_vel, dwdy @ node_vel])  # d v_p / d pos
    H[:, 0:2] = -R @ grad
    H[:, 2:4] = R
    H[:, 4] = -dR @ (v_p - state[2:4])
    for j in range(4):
        H[:, 5 + 2 * j: 7 + 2 * j] = -w[j] * R
    return H


def _cell_rect(grid: GridSpec, col: int, row: int):
    x1 = grid.origin[0] + col * grid.spacing[0]
    y1 = grid.origin[1] + row * grid.spacing[1]
    return (x1, y1, x1 + grid.spacing[0], y1 + grid.spacing[1])


def observation_residual(x, flow_map: FlowMap, z: AdcpSample) -> np.ndarray:
    """2-vector relative-flow error with the cell taken at x's position."""
    state = _state_vec(x)
    col, row = cell_of(flow_map.grid, state[0:2])
    rect = _cell_rect(flow_map.grid, col, row)
    cw = cell_weights_at(flow_map.grid, col, row, state[0:2])
    nodes = flow_map.node_velocities[np.asarray(cw.node_indices)]
    return _observation_residual(state, np.asarray(z.rel_flow, dtype=float), rect, nodes)


def observation_jacobian(x, flow_map: FlowMap, z: AdcpSample) -> np.ndarray:
    """2x13 Jacobian of :func:`observation_residual` wrt [x_k, four nodes]."""
    state = _state_vec(x)
    col, row = cell_of(flow_map.grid, state[0:2])
    rect = _cell_rect(flow_map.grid, col, row)
    cw = cell_weights_at(flow_map.grid, col, row, state[0:2])
    nodes = flow_map.node_velocities[np.asarray(cw.node_indices)]
    return _observation_jacobian(state, rect, nodes)


@dataclass
class ObservationFactor:
    """One relative-flow constraint between state k and a frozen grid cell.

    The four node ids come from the known data association (the cell boxing
    the TRUE robot position); the bilinear weights are re-evaluated at the
    current position estimate on every linearization.
    """

    k: int
    z: np.ndarray
    node_indices: np.ndarray  # (4,) int
    rect: tuple[float, float, float, float]
    info: float  # 1 / sigma_z^2

    def residual(self, states: np.ndarray, node_vel: np.ndarray) -> np.ndarray:
        return _observation_residual(
            states[self.k], self.z, self.rect, node_vel[self.node_indices]
        )

    def jacobian(self, states: np.ndarray, node_vel: np.ndarray) -> np.ndarray:
        return _observation_jacobian(
            states[self.k], self.rect, node_vel[self.node_indices]
        )


# ---------------------------------------------------------------------------
# factor construction from a sensor log


def build_motion_factors(log: SensorLog, weights: FactorWeights) -> list[MotionFactor]:
    dt = log.dt
    info = weights.motion_info()
    return [
        MotionFactor(k + 1, log.ins.accel[k].copy(), float(log.ins.yaw_rate[k]), dt, info)
        for k in range(len(log.ins))
    ]


def build_observation_factors(
    log: SensorLog, grid: GridSpec, weights: FactorWeights
) -> tuple[list[ObservationFactor], int]:
    """Observation factors with known data association from the true positions.

    Samples taken while the robot is outside the grid hull are dropped;
    the second return value counts them.
    """
    info = weights.observation_info()
    factors = []
    dropped = 0
    for j in range(len(log.adcp)):
        k = int(log.adcp.state_index[j])
        p_true = log.truth.positions[k]
        if not grid.contains(p_true):
            dropped += 1
            continue
        col, row = cell_of(grid, p_true)
        cw = cell_weights_at(grid, col, row, p_true)
        factors.append(
            ObservationFactor(
                k,
                log.adcp.rel_flow[j].copy(),
                np.asarray(cw.node_indices, dtype=int),
                _cell_rect(grid, col, row),
                info,
            )
        )
    return factors, dropped


def total_cost(
    state: FullState,
    motion: list[MotionFactor],
    obs: list[ObservationFactor],
) -> float:
    """Weighted sum of squared residuals over all factors."""
    states = state.trajectory.states
    nodes = state.flow_map.node_velocities
    cost = 0.0
    for f in motion:
        e = f.residual(states)
        cost += float(e @ (f.info * e))
    for f in obs:
        e = f.residual(states, nodes)
        cost += f.info * float(e @ e)
    return cost
