"""Planar robot state containers and frame conventions.

Conventions: x east, y north, heading measured counterclockwise from +x.
The body frame has x forward, y to port; ``rotation_to_body`` maps
inertial vectors into that frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "wrap_angle",
    "rotation_to_body",
    "rotation_to_body_deriv",
    "RobotState",
    "Trajectory",
]


def wrap_angle(theta):
    """Wrap an angle (scalar or array) to (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(theta, dtype=float), 2.0 * np.pi)


def rotation_to_body(psi: float) -> np.ndarray:
    """Rotation matrix taking inertial-frame vectors into the body frame.

    R(psi) = [[cos psi, sin psi], [-sin psi, cos psi]].
    """
    c, s = np.cos(psi), np.sin(psi)
    return np.array([[c, s], [-s, c]])


def rotation_to_body_deriv(psi: float) -> np.ndarray:
    """d/dpsi of :func:`rotation_to_body`."""
    c, s = np.cos(psi), np.sin(psi)
    return np.array([[-s, c], [-c, -s]])


@dataclass
class RobotState:
    """Planar pose/velocity state: position (m), velocity (m/s), heading (rad)."""

    position: np.ndarray
    velocity: np.ndarray
    heading: float

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).reshape(2)
        self.velocity = np.asarray(self.velocity, dtype=float).reshape(2)
        self.heading = float(wrap_angle(self.heading))
        if not (
            np.all(np.isfinite(self.position))
            and np.all(np.isfinite(self.velocity))
            and np.isfinite(self.heading)
        ):
            raise ValueError("robot state must be finite")

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.position, self.velocity, [self.heading]])

    @classmethod
    def from_vector(cls, v) -> "RobotState":
        v = np.asarray(v, dtype=float).reshape(5)
        return cls(v[0:2], v[2:4], v[4])


@dataclass
class Trajectory:
    """Time series of robot states; ``states`` columns are x, y, vx, vy, psi."""

    t: np.ndarray
    states: np.ndarray

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        if self.states.ndim != 2 or self.states.shape != (len(self.t), 5):
            raise ValueError("trajectory states must have shape (len(t), 5)")
        if len(self.t) == 0:
            raise ValueError("trajectory must contain at least one state")
        if len(self.t) > 1 and not np.all(np.diff(self.t) > 0):
            raise ValueError("trajectory timestamps must be strictly increasing")

    def __len__(self) -> int:
        return len(self.t)

    @property
    def positions(self) -> np.ndarray:
        return self.states[:, 0:2]

    @property
    def velocities(self) -> np.ndarray:
        return self.states[:, 2:4]

    @property
    def headings(self) -> np.ndarray:
        return self.states[:, 4]

    def state_at(self, k: int) -> RobotState:
        return RobotState.from_vector(self.states[k])

    def copy(self) -> "Trajectory":
        return Trajectory(self.t.copy(), self.states.copy())
