"""Gridded flow-map representation and bilinear interpolation.

The flow field is represented by inertial-frame velocity vectors at the
nodes of a rectangular grid.  Velocities between nodes are obtained by
bilinear interpolation over the cell that boxes the query point:

    v_p = w11 v11 + w21 v21 + w12 v12 + w22 v22

with the four weights given by the opposing-rectangle areas normalised by
the cell area.  Node ids are row-major: id = row * nx + col.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .flow_models import BOUNDARY_SLACK, FlowFieldSpec, make_field

__all__ = [
    "GridSpec",
    "FlowMap",
    "CellWeights",
    "OutOfMapError",
    "locate_cell",
    "cell_of",
    "cell_weights_at",
    "interpolate",
    "sample_truth",
]


class OutOfMapError(ValueError):
    """Query point lies outside the convex hull of the grid."""


@dataclass(frozen=True)
class GridSpec:
    """Rectangular node grid: origin, spacing (dx, dy) and node counts (nx, ny)."""

    origin: tuple[float, float]
    spacing: tuple[float, float]
    dims: tuple[int, int]

    def __post_init__(self):
        if self.spacing[0] <= 0 or self.spacing[1] <= 0:
            raise ValueError("grid spacing must be positive")
        if self.dims[0] < 2 or self.dims[1] < 2:
            raise ValueError("grid needs at least 2x2 nodes")

    @property
    def n_nodes(self) -> int:
        return self.dims[0] * self.dims[1]

    def node_id(self, col: int, row: int) -> int:
        return row * self.dims[0] + col

    def node_position(self, node_id) -> np.ndarray:
        nx = self.dims[0]
        node_id = np.asarray(node_id)
        col, row = node_id % nx, node_id // nx
        return np.stack(
            [
                self.origin[0] + col * self.spacing[0],
                self.origin[1] + row * self.spacing[1],
            ],
            axis=-1,
        ).astype(float)

    def node_positions(self) -> np.ndarray:
        return self.node_position(np.arange(self.n_nodes))

    @property
    def hull(self) -> tuple[tuple[float, float], tuple[float, float]]:
        x0, y0 = self.origin
        return (
            (x0, x0 + (self.dims[0] - 1) * self.spacing[0]),
            (y0, y0 + (self.dims[1] - 1) * self.spacing[1]),
        )

    def contains(self, p) -> bool:
        (x0, x1), (y0, y1) = self.hull
        x, y = float(p[0]), float(p[1])
        return (
            x0 - BOUNDARY_SLACK <= x <= x1 + BOUNDARY_SLACK
            and y0 - BOUNDARY_SLACK <= y <= y1 + BOUNDARY_SLACK
        )

    def to_dict(self) -> dict:
        return {
            "origin": list(self.origin),
            "spacing": list(self.spacing),
            "dims": list(self.dims),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        return cls(tuple(d["origin"]), tuple(d["spacing"]), tuple(int(v) for v in d["dims"]))


@dataclass(frozen=True)
class CellWeights:
    """The four nodes boxing a point and their bilinear coefficients.

    Node order is (lower-left, lower-right, upper-left, upper-right);
    weights are nonnegative and sum to one for in-cell points.
    """

    node_indices: tuple[int, int, int, int]
    weights: tuple[float, float, float, float]


@dataclass
class FlowMap:
    """Node grid plus one inertial velocity vector per node."""

    grid: GridSpec
    node_velocities: np.ndarray  # (n_nodes, 2)

    def __post_init__(self):
        self.node_velocities = np.asarray(self.node_velocities, dtype=float)
        if self.node_velocities.shape != (self.grid.n_nodes, 2):
            raise ValueError(
                f"expected {self.grid.n_nodes} node velocities, "
                f"got shape {self.node_velocities.shape}"
            )
        if not np.all(np.isfinite(self.node_velocities)):
            raise ValueError("node velocities must be finite")

    def copy(self) -> "FlowMap":
        return FlowMap(self.grid, self.node_velocities.copy())

    @classmethod
    def zeros(cls, grid: GridSpec) -> "FlowMap":
        return cls(grid, np.zeros((grid.n_nodes, 2)))


def cell_of(grid: GridSpec, p) -> tuple[int, int]:
    """Column/row of the grid cell boxing p (points on edges go to the
    lower-index cell except at the top/right hull boundary)."""
    (x0, x1), (y0, y1) = grid.hull
    x, y = float(p[0]), float(p[1])
    if not grid.contains(p):
        raise OutOfMapError(
            f"position ({x:g}, {y:g}) outside map hull "
            f"[{x0:g}, {x1:g}] x [{y0:g}, {y1:g}]"
        )
    col = int(np.floor((x - x0) / grid.spacing[0]))
    row = int(np.floor((y - y0) / grid.spacing[1]))
    col = min(max(col, 0), grid.dims[0] - 2)
    row = min(max(row, 0), grid.dims[1] - 2)
    return col, row


def cell_weights_at(grid: GridSpec, col: int, row: int, p) -> CellWeights:
    """Bilinear coefficients of p within the given cell.

    The weights are the normalised opposing-rectangle areas; if p lies
    outside the cell they extrapolate (and may leave [0, 1]).
    """
    dx, dy = grid.spacing
    x1 = grid.origin[0] + col * dx
    y1 = grid.origin[1] + row * dy
    x2, y2 = x1 + dx, y1 + dy
    x, y = float(p[0]), float(p[1])
    area = dx * dy
    w11 = (y2 - y) * (x2 - x) / area
    w21 = (y2 - y) * (x - x1) / area
    w12 = (y - y1) * (x2 - x) / area
    w22 = (y - y1) * (x - x1) / area
    i11 = grid.node_id(col, row)
    i21 = grid.node_id(col + 1, row)
    i12 = grid.node_id(col, row + 1)
    i22 = grid.node_id(col + 1, row + 1)
    return CellWeights((i11, i21, i12, i22), (w11, w21, w12, w22))


def locate_cell(grid: GridSpec, p) -> CellWeights:
    """Find the cell boxing p and its bilinear coefficients."""
    col, row = cell_of(grid, p)
    return cell_weights_at(grid, col, row, p)


def interpolate(flow_map: FlowMap, p) -> np.ndarray:
    """Bilinearly interpolated inertial flow velocity at p."""
    cw = locate_cell(flow_map.grid, p)
    idx = np.asarray(cw.node_indices)
    w = np.asarray(cw.weights)
    return w @ flow_map.node_velocities[idx]


def sample_truth(spec: FlowFieldSpec, grid: GridSpec, t: float = 0.0) -> FlowMap:
    """Ground-truth map: the analytic field evaluated at every node."""
    pts = grid.node_positions()
    (fx0, fx1), (fy0, fy1) = spec.domain
    inside = (
        (pts[:, 0] >= fx0 - BOUNDARY_SLACK)
        & (pts[:, 0] <= fx1 + BOUNDARY_SLACK)
        & (pts[:, 1] >= fy0 - BOUNDARY_SLACK)
        & (pts[:, 1] <= fy1 + BOUNDARY_SLACK)
    )
    if not np.all(inside):
        i = int(np.argmin(inside))
        raise ValueError(
            f"grid node {i} at ({pts[i, 0]:g}, {pts[i, 1]:g}) lies outside "
            "the flow domain"
        )
    vel = make_field(spec).velocity(pts, t)
    return FlowMap(grid, vel)
