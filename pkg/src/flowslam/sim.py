"""Trajectory generation, sensor simulation and dead reckoning.

The ground-truth trajectory is a lawnmower survey path walked at constant
speed with circular-arc U-turns.  States are constructed so the discrete
kinematics hold exactly: v_k = (x_k - x_{k-1}) / dt and heading rate equals
the wrapped heading difference over dt.  Noiseless sensor logs are therefore
exactly consistent with the first-order Euler motion model, and dead
reckoning on a noiseless log reproduces the truth to round-off.

INS and relative-flow (ADCP-style) measurements are corrupted with white
noise plus a first-order Gauss-Markov bias per channel.  All randomness
derives from a single seed through fixed per-consumer streams.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

from .flow_models import FlowField, FlowFieldSpec, make_field
from .states import RobotState, Trajectory, rotation_to_body, wrap_angle

__all__ = [
    "GRAVITY",
    "ConfigError",
    "NoiseChannel",
    "SensorNoiseSpec",
    "InsSample",
    "AdcpSample",
    "InsSeries",
    "AdcpSeries",
    "SensorLog",
    "default_noise_spec",
    "generate_trajectory",
    "simulate_sensors",
    "dead_reckon",
    "rng_stream",
    "derive_ks_seed",
]

GRAVITY = 9.80665  # m/s^2, for mg unit conversions

# fixed sub-stream indices so changing one noise source leaves the others alone
_STREAM_INS_WHITE = 0
_STREAM_INS_BIAS = 1
_STREAM_ADCP_WHITE = 2
_STREAM_ADCP_BIAS = 3
_STREAM_KS = 4


class ConfigError(ValueError):
    """Inconsistent or infeasible scenario configuration."""


def rng_stream(seed: int, stream: int) -> np.random.Generator:
    """Independent generator for one consumer of the scenario seed."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(stream,)))


def derive_ks_seed(seed: int) -> int:
    """Turbulence-field seed derived from the scenario seed."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(_STREAM_KS,))
    return int(ss.generate_state(1)[0])


@dataclass(frozen=True)
class NoiseChannel:
    """White-noise density (units/sqrt(Hz)), bias-instability SD (units) and
    bias correlation time (s) for one sensor channel group."""

    white_density: float = 0.0
    bias_sd: float = 0.0
    bias_tau: float = 1.0

    def __post_init__(self):
        if self.white_density < 0 or self.bias_sd < 0:
            raise ValueError("noise magnitudes must be nonnegative")
        if self.bias_sd > 0 and self.bias_tau <= 0:
            raise ValueError("bias correlation time must be positive")

    def white_sd(self, rate_hz: float) -> float:
        """Per-sample white-noise standard deviation at the given rate."""
        return self.white_density * np.sqrt(rate_hz)


@dataclass(frozen=True)
class SensorNoiseSpec:
    """Noise statistics for the INS (accel + gyro) and the relative-flow sensor."""

    accel: NoiseChannel
    gyro: NoiseChannel
    adcp: NoiseChannel
    ins_rate_hz: float = 10.0
    adcp_rate_hz: float = 1.0

    def __post_init__(self):
        if self.ins_rate_hz <= 0 or self.adcp_rate_hz <= 0:
            raise ValueError("sample rates must be positive")
        ratio = self.ins_rate_hz / self.adcp_rate_hz
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ValueError("ADCP rate must divide the INS rate")

    @property
    def adcp_decimation(self) -> int:
        return int(round(self.ins_rate_hz / self.adcp_rate_hz))

    def to_dict(self) -> dict:
        def ch(c: NoiseChannel) -> dict:
            return {
                "white_density": c.white_density,
                "bias_sd": c.bias_sd,
                "bias_tau": c.bias_tau,
            }

        return {
            "accel": ch(self.accel),
            "gyro": ch(self.gyro),
            "adcp": ch(self.adcp),
            "ins_rate_hz": self.ins_rate_hz,
            "adcp_rate_hz": self.adcp_rate_hz,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SensorNoiseSpec":
        return cls(
            accel=NoiseChannel(**d["accel"]),
            gyro=NoiseChannel(**d["gyro"]),
            adcp=NoiseChannel(**d["adcp"]),
            ins_rate_hz=d["ins_rate_hz"],
            adcp_rate_hz=d["adcp_rate_hz"],
        )


def default_noise_spec(ins_rate_hz: float = 10.0, adcp_rate_hz: float = 1.0) -> SensorNoiseSpec:
    """Consumer/industrial-grade INS plus 1200 kHz ADCP-class profile."""
    return SensorNoiseSpec(
        accel=NoiseChannel(
            white_density=0.14e-3 * GRAVITY,  # 0.14 mg/sqrt(Hz)
            bias_sd=0.04e-3 * GRAVITY,        # 0.04 mg
            bias_tau=300.0,
        ),
        gyro=NoiseChannel(
            white_density=np.deg2rad(0.0035),  # 0.0035 deg/s/sqrt(Hz)
            bias_sd=np.deg2rad(10.0 / 3600.0),  # 10 deg/hr
            bias_tau=300.0,
        ),
        adcp=NoiseChannel(white_density=0.01, bias_sd=0.01, bias_tau=100.0),
        ins_rate_hz=ins_rate_hz,
        adcp_rate_hz=adcp_rate_hz,
    )


@dataclass(frozen=True)
class InsSample:
    """One INS sample: body-frame acceleration (m/s^2) and yaw rate (rad/s)."""

    t: float
    accel: tuple[float, float]
    yaw_rate: float


@dataclass(frozen=True)
class AdcpSample:
    """One relative-flow sample in the body frame (m/s)."""

    t: float
    rel_flow: tuple[float, float]


@dataclass
class InsSeries:
    t: np.ndarray        # (K,)
    accel: np.ndarray    # (K, 2)
    yaw_rate: np.ndarray  # (K,)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.accel = np.asarray(self.accel, dtype=float).reshape(len(self.t), 2)
        self.yaw_rate = np.asarray(self.yaw_rate, dtype=float).reshape(len(self.t))
        if len(self.t) > 1 and not np.all(np.diff(self.t) > 0):
            raise ValueError("INS timestamps must be strictly increasing")

    def __len__(self):
        return len(self.t)

    def sample(self, i: int) -> InsSample:
        return InsSample(float(self.t[i]), tuple(self.accel[i]), float(self.yaw_rate[i]))


@dataclass
class AdcpSeries:
    t: np.ndarray          # (M,)
    rel_flow: np.ndarray   # (M, 2)
    state_index: np.ndarray  # (M,) index into the trajectory the sample was taken at

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.rel_flow = np.asarray(self.rel_flow, dtype=float).reshape(len(self.t), 2)
        self.state_index = np.asarray(self.state_index, dtype=int).reshape(len(self.t))

    def __len__(self):
        return len(self.t)

    def sample(self, i: int) -> AdcpSample:
        return AdcpSample(float(self.t[i]), tuple(self.rel_flow[i]))


@dataclass
class SensorLog:
    """Simulated INS and relative-flow measurements plus the generating truth."""

    ins: InsSeries
    adcp: AdcpSeries
    truth: Trajectory
    noise: SensorNoiseSpec
    seed: int = 0

    def __post_init__(self):
        if len(self.ins) != len(self.truth) - 1:
            raise ValueError("expected one INS sample per trajectory step")
        ins_times = set(np.round(self.ins.t, 9))
        if not set(np.round(self.adcp.t, 9)) <= ins_times:
            raise ValueError("ADCP timestamps must be a subset of INS timestamps")

    @property
    def dt(self) -> float:
        return float(self.truth.t[1] - self.truth.t[0])


# ---------------------------------------------------------------------------
# trajectory generation


def _axis_unit(heading: float) -> np.ndarray:
    d = np.array([np.cos(heading), np.sin(heading)])
    snapped = np.round(d)
    if not np.allclose(d, snapped, atol=1e-9) or abs(np.abs(snapped).sum() - 1) > 0:
        raise ConfigError(
            "lawnmower generation requires an axis-aligned start heading "
            "(multiple of pi/2)"
        )
    return snapped


class _LawnmowerWalker:
    """Walks a boustrophedon path with exact straight/arc segments."""

    def __init__(self, domain, start, heading, radius, buffer):
        (self.xmin, self.xmax), (self.ymin, self.ymax) = domain
        self.radius = radius
        self.buffer = buffer
        self.pos = np.asarray(start, dtype=float).copy()
        self.d = _axis_unit(heading)          # leg direction
        self.s = np.array([-self.d[1], self.d[0]])  # sweep axis (left of d)
        self.heading = float(heading)
        # Cover the narrow side first when a U-turn fits there, so lanes
        # traverse the full width; otherwise head straight for the wide side.
        room_pos, room_neg = self._room(+1), self._room(-1)
        near = +1 if room_pos <= room_neg else -1
        if min(room_pos, room_neg) >= 2.0 * radius + buffer - 1e-9:
            self.s = near * self.s
        elif room_pos < room_neg:
            self.s = -self.s
        self.sweep = 1.0
        self.mode = "leg"
        self.turned = 0.0
        self.center = np.zeros(2)
        self.phi = 0.0
        self.ccw = 1.0
        self._validate()

    @staticmethod
    def _coord(axis, p):
        return float(axis @ p)

    def _interval(self, axis):
        """(lo, hi) of the scalar coordinate axis . p over the domain."""
        xs = [axis[0] * self.xmin, axis[0] * self.xmax]
        ys = [axis[1] * self.ymin, axis[1] * self.ymax]
        return min(xs) + min(ys), max(xs) + max(ys)

    def _room(self, sweep_sign):
        lo, hi = self._interval(self.s)
        c = self._coord(self.s, self.pos)
        return (hi - c) if sweep_sign > 0 else (c - lo)

    def _validate(self):
        lo_d, hi_d = self._interval(self.d)
        lo_s, hi_s = self._interval(self.s)
        margin = self.radius + self.buffer
        if hi_d - lo_d < 2.0 * margin:
            raise ConfigError("domain too short along the leg axis for the turn radius")
        if hi_s - lo_s < 2.0 * self.radius + 2.0 * self.buffer:
            raise ConfigError("domain too narrow across lanes for the turn radius")
        if not (
            self.xmin <= self.pos[0] <= self.xmax
            and self.ymin <= self.pos[1] <= self.ymax
        ):
            raise ConfigError("trajectory start lies outside the domain")

    def _leg_end(self) -> float:
        _, hi = self._interval(self.d)
        return hi - (self.radius + self.buffer)

    def _begin_turn(self):
        # flip the sweep direction if the next lane would leave the domain
        lo_s, hi_s = self._interval(self.s)
        lane = self._coord(self.s, self.pos)
        nxt = lane + self.sweep * 2.0 * self.radius
        if not (lo_s + self.buffer <= nxt <= hi_s - self.buffer):
            self.sweep = -self.sweep
            nxt = lane + self.sweep * 2.0 * self.radius
            if not (lo_s + self.buffer <= nxt <= hi_s - self.buffer):
                raise ConfigError("no feasible U-turn: domain too narrow")
        side = self.sweep * self.s
        self.ccw = 1.0 if (self.d[0] * side[1] - self.d[1] * side[0]) > 0 else -1.0
        self.center = self.pos + self.radius * side
        # polar angle of the current position on the turn circle
        rel = self.pos - self.center
        self.phi = float(np.arctan2(rel[1], rel[0]))
        self.turned = 0.0
        self.mode = "arc"

    def _end_turn(self):
        self.d = -self.d
        self.mode = "leg"

    def advance(self, dist: float):
        """Move the walker dist metres along the planned path."""
        remaining = dist
        while remaining > 1e-12:
            if self.mode == "leg":
                togo = self._leg_end() - self._coord(self.d, self.pos)
                if togo <= 1e-12:
                    self._begin_turn()
                    continue
                step = min(remaining, togo)
                self.pos = self.pos + step * self.d
                remaining -= step
            else:
                togo = (np.pi - self.turned) * self.radius
                if togo <= 1e-12:
                    self._end_turn()
                    continue
                step = min(remaining, togo)
                dphi = self.ccw * step / self.radius
                self.phi += dphi
                self.turned += step / self.radius
                self.pos = self.center + self.radius * np.array(
                    [np.cos(self.phi), np.sin(self.phi)]
                )
                self.heading = self.heading + dphi
                remaining -= step
        # exact tangent heading
        if self.mode == "leg":
            self.heading = float(np.arctan2(self.d[1], self.d[0]))
        return self.pos.copy(), float(wrap_angle(self.heading))


def generate_trajectory(
    domain,
    start,
    heading: float,
    v_max: float,
    duration: float,
    dt: float,
    lane_spacing: float = 2.5,
    boundary_buffer: float = 0.3,
) -> Trajectory:
    """Constant-speed lawnmower survey trajectory.

    domain is ((xmin, xmax), (ymin, ymax)); the path runs legs along the
    start heading (which must be axis-aligned), U-turning with radius
    lane_spacing / 2 and sweeping across the domain.  Velocities are the
    discrete position differences, so the returned states satisfy the
    first-order Euler kinematics exactly.
    """
    if v_max <= 0:
        raise ConfigError("v_max must be positive")
    if dt <= 0:
        raise ConfigError("dt must be positive")
    if lane_spacing <= 0:
        raise ConfigError("lane spacing must be positive")
    n_steps = int(round(duration / dt))
    t = np.arange(n_steps + 1) * dt
    walker = _LawnmowerWalker(domain, start, heading, lane_spacing / 2.0, boundary_buffer)

    step_len = v_max * dt
    pos = np.empty((n_steps + 2, 2))
    psi = np.empty(n_steps + 2)
    # one phantom pre-start sample gives the initial state a consistent velocity
    pos[0] = walker.pos - step_len * walker.d
    psi[0] = walker.heading
    pos[1] = walker.pos
    psi[1] = walker.heading
    for k in range(n_steps):
        pos[k + 2], psi[k + 2] = walker.advance(step_len)

    vel = (pos[1:] - pos[:-1]) / dt
    states = np.column_stack([pos[1:], vel, wrap_angle(psi[1:])])
    return Trajectory(t, states)


# ---------------------------------------------------------------------------
# sensor simulation


def _gauss_markov(rng, n: int, sd: float, tau: float, dt: float) -> np.ndarray:
    """Stationary first-order Gauss-Markov trace of length n."""
    if sd == 0.0 or n == 0:
        return np.zeros(n)
    phi = np.exp(-dt / tau)
    innov = rng.standard_normal(n) * (sd * np.sqrt(1.0 - phi * phi))
    b0 = rng.standard_normal() * sd
    out, _ = lfilter([1.0], [1.0, -phi], innov, zi=[phi * b0])
    return out


def _body_rotate(psi: np.ndarray, vec: np.ndarray) -> np.ndarray:
    """Apply R(psi_k) to each row of vec."""
    c, s = np.cos(psi), np.sin(psi)
    return np.column_stack([c * vec[:, 0] + s * vec[:, 1], -s * vec[:, 0] + c * vec[:, 1]])


def simulate_sensors(
    truth: Trajectory,
    flow,
    noise: SensorNoiseSpec,
    seed: int = 0,
) -> SensorLog:
    """Generate noisy INS and relative-flow logs along a truth trajectory.

    ``flow`` may be a FlowFieldSpec, a FlowField, or any callable
    ``f(points, times) -> velocities`` giving the true inertial flow.
    Relative-flow samples observe the analytic field, not its grid
    representation.  Deterministic for a given seed.
    """
    if len(truth) < 2:
        raise ConfigError("need at least two truth states to simulate sensors")
    dt = float(truth.t[1] - truth.t[0])
    if abs(dt * noise.ins_rate_hz - 1.0) > 1e-6:
        raise ConfigError(
            f"trajectory step {dt:g}s does not match INS rate {noise.ins_rate_hz:g} Hz"
        )
    if isinstance(flow, FlowFieldSpec):
        flow = make_field(flow)
    flow_fn = flow.velocity if isinstance(flow, FlowField) else flow

    n = len(truth) - 1
    pos, vel, psi = truth.positions, truth.velocities, truth.headings
    dv = (vel[1:] - vel[:-1]) / dt
    accel_true = _body_rotate(psi[1:], dv)
    rate_true = wrap_angle(psi[1:] - psi[:-1]) / dt

    rng_w = rng_stream(seed, _STREAM_INS_WHITE)
    rng_b = rng_stream(seed, _STREAM_INS_BIAS)
    sd_a = noise.accel.white_sd(noise.ins_rate_hz)
    sd_r = noise.gyro.white_sd(noise.ins_rate_hz)
    accel_meas = accel_true + rng_w.standard_normal((n, 2)) * sd_a
    rate_meas = rate_true + rng_w.standard_normal(n) * sd_r
    accel_meas[:, 0] += _gauss_markov(rng_b, n, noise.accel.bias_sd, noise.accel.bias_tau, dt)
    accel_meas[:, 1] += _gauss_markov(rng_b, n, noise.accel.bias_sd, noise.accel.bias_tau, dt)
    rate_meas += _gauss_markov(rng_b, n, noise.gyro.bias_sd, noise.gyro.bias_tau, dt)
    ins = InsSeries(truth.t[1:], accel_meas, rate_meas)

    dec = noise.adcp_decimation
    idx = np.arange(dec, n + 1, dec)
    t_adcp = truth.t[idx]
    flow_true = np.atleast_2d(flow_fn(pos[idx], t_adcp))
    rel_inertial = flow_true - vel[idx]
    z = _body_rotate(psi[idx], rel_inertial)

    rng_zw = rng_stream(seed, _STREAM_ADCP_WHITE)
    rng_zb = rng_stream(seed, _STREAM_ADCP_BIAS)
    sd_z = noise.adcp.white_sd(noise.adcp_rate_hz)
    z = z + rng_zw.standard_normal(z.shape) * sd_z
    dt_adcp = dec * dt
    m = len(idx)
    z[:, 0] += _gauss_markov(rng_zb, m, noise.adcp.bias_sd, noise.adcp.bias_tau, dt_adcp)
    z[:, 1] += _gauss_markov(rng_zb, m, noise.adcp.bias_sd, noise.adcp.bias_tau, dt_adcp)
    adcp = AdcpSeries(t_adcp, z, idx)

    return SensorLog(ins=ins, adcp=adcp, truth=truth, noise=noise, seed=seed)


def dead_reckon(log: SensorLog, x0: RobotState) -> Trajectory:
    """Open-loop forward-Euler integration of the INS log from x0."""
    if len(log.ins) == 0:
        raise ValueError("cannot dead-reckon an empty log")
    dt = log.dt
    n = len(log.ins)
    psi = wrap_angle(x0.heading + np.cumsum(log.ins.yaw_rate) * dt)
    c, s = np.cos(psi), np.sin(psi)
    ax, ay = log.ins.accel[:, 0], log.ins.accel[:, 1]
    # R(psi)^T a, accumulated
    acc_inertial = np.column_stack([c * ax - s * ay, s * ax + c * ay])
    vel = x0.velocity + np.cumsum(acc_inertial, axis=0) * dt
    pos = x0.position + np.cumsum(vel, axis=0) * dt

    states = np.empty((n + 1, 5))
    states[0] = x0.as_vector()
    states[1:, 0:2] = pos
    states[1:, 2:4] = vel
    states[1:, 4] = psi
    t = np.concatenate([[log.truth.t[0]], log.ins.t])
    return Trajectory(t, states)
