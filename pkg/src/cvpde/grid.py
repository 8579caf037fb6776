"""Structured 1D/2D grids and coherent-amplitude field states.

Grid indexing is row-major with axis order (x, y): the flat index of the
point (i, j) on an nx-by-ny grid is i * ny + j, and coordinates are
x_i = origin_x + (i + 1/2 * cell_centered) * dx (same along y).  Field
snapshots serialize one row per grid point in flat order with columns
i[,j], x[,y], re_z, im_z, var.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np


class BoundaryKind(Enum):
    PERIODIC = "periodic"
    DIRICHLET = "dirichlet"
    CAVITY_WALLS = "cavity-walls"


@dataclass(frozen=True)
class Boundary:
    """Boundary rule attached to a grid.

    Dirichlet carries the fixed ghost/clamp amplitude; CavityWalls carries
    the tangential lid velocity of the top wall (all walls are no-slip,
    streamfunction zero; wall vorticity is closed from the streamfunction
    by the solver, not by ghost reads).
    """

    kind: BoundaryKind
    value: complex = 0.0
    lid_velocity: float = 0.0

    @staticmethod
    def periodic() -> "Boundary":
        return Boundary(BoundaryKind.PERIODIC)

    @staticmethod
    def dirichlet(value: complex = 0.0) -> "Boundary":
        return Boundary(BoundaryKind.DIRICHLET, value=value)

    @staticmethod
    def cavity(lid_velocity: float = 1.0) -> "Boundary":
        return Boundary(BoundaryKind.CAVITY_WALLS, lid_velocity=lid_velocity)


@dataclass(frozen=True)
class BoundaryValue:
    """Marker returned by neighbor() when a stencil read leaves the grid."""

    value: complex


@dataclass(frozen=True)
class GridSpec:
    extents: tuple[int, ...]
    spacing: tuple[float, ...]
    boundary: Boundary
    origin: tuple[float, ...] | None = None
    cell_centered: bool = False

    def __post_init__(self):
        if len(self.extents) not in (1, 2):
            raise ValueError(f"only 1D/2D grids are supported, got {len(self.extents)} axes")
        if len(self.spacing) != len(self.extents):
            raise ValueError("spacing must provide one value per axis")
        if any(int(n) != n or n < 3 for n in self.extents):
            raise ValueError(f"every axis needs at least 3 points, got extents={self.extents}")
        if any(not (h > 0) for h in self.spacing):
            raise ValueError(f"grid spacings must be positive, got {self.spacing}")
        if self.origin is None:
            object.__setattr__(self, "origin", (0.0,) * len(self.extents))
        elif len(self.origin) != len(self.extents):
            raise ValueError("origin must provide one value per axis")

    @property
    def dims(self) -> int:
        return len(self.extents)

    @property
    def npoints(self) -> int:
        return int(np.prod(self.extents))

    def coords(self, axis: int) -> np.ndarray:
        n = self.extents[axis]
        shift = 0.5 if self.cell_centered else 0.0
        return self.origin[axis] + (np.arange(n) + shift) * self.spacing[axis]

    def meshes(self) -> tuple[np.ndarray, ...]:
        """Coordinate arrays broadcast to the full grid shape, flat order."""
        axes = [self.coords(k) for k in range(self.dims)]
        grids = np.meshgrid(*axes, indexing="ij")
        return tuple(g.reshape(-1) for g in grids)

    def index_arrays(self) -> tuple[np.ndarray, ...]:
        idx = [np.arange(n) for n in self.extents]
        grids = np.meshgrid(*idx, indexing="ij")
        return tuple(g.reshape(-1) for g in grids)


def neighbor(grid: GridSpec, index: int, axis: int = 0, offset: int = 1):
    """Resolve a stencil read: flat neighbor index, or the boundary value.

    Returns an int flat index when the shifted point lies on the grid
    (periodic wrap included), else a BoundaryValue carrying the Dirichlet
    ghost amplitude (zero for cavity walls).
    """
    if abs(offset) > 2:
        raise ValueError(f"stencil offsets are limited to |offset| <= 2, got {offset}")
    if not 0 <= index < grid.npoints:
        raise ValueError(f"flat index {index} outside grid with {grid.npoints} points")
    if not 0 <= axis < grid.dims:
        raise ValueError(f"axis {axis} invalid for a {grid.dims}D grid")
    multi = list(np.unravel_index(index, grid.extents))
    multi[axis] += offset
    n = grid.extents[axis]
    if grid.boundary.kind is BoundaryKind.PERIODIC:
        multi[axis] %= n
    elif not 0 <= multi[axis] < n:
        return BoundaryValue(complex(grid.boundary.value))
    return int(np.ravel_multi_index(multi, grid.extents))


@dataclass
class FieldState:
    """Mean coherent amplitudes plus a per-point readout variance at time t."""

    grid: GridSpec
    z: np.ndarray
    var: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=np.complex128)
        self.var = np.asarray(self.var, dtype=np.float64)
        L = self.grid.npoints
        if self.z.shape != (L,):
            raise ValueError(f"z must hold {L} amplitudes (flat), got shape {self.z.shape}")
        if self.var.shape != (L,):
            raise ValueError(f"var must hold {L} entries (flat), got shape {self.var.shape}")
        if not np.all(np.isfinite(self.z.view(np.float64))):
            raise ValueError("z contains non-finite entries")
        if not np.all(np.isfinite(self.var)):
            raise ValueError("var contains non-finite entries")
        if np.any(self.var < 0):
            raise ValueError("var must be nonnegative")

    @property
    def z2d(self) -> np.ndarray:
        return self.z.reshape(self.grid.extents)

    def with_z(self, z: np.ndarray, t: float | None = None) -> "FieldState":
        return FieldState(self.grid, z, self.var.copy(), self.t if t is None else t)

    def copy(self) -> "FieldState":
        return FieldState(self.grid, self.z.copy(), self.var.copy(), self.t)


def make_field(grid: GridSpec, z, var=None, t: float = 0.0) -> FieldState:
    """Wrap amplitude (and optional variance) arrays into a validated state."""
    z = np.asarray(z, dtype=np.complex128).reshape(-1)
    if var is None:
        var = np.zeros(grid.npoints)
    else:
        var = np.asarray(var, dtype=np.float64)
        if var.ndim == 0:
            var = np.full(grid.npoints, float(var))
        else:
            var = var.reshape(-1)
    return FieldState(grid, z, var, t)


@dataclass(frozen=True)
class VelocityField:
    """Advection velocity sampled at every grid point (flat order)."""

    vx: np.ndarray
    vy: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "vx", np.asarray(self.vx, dtype=np.float64).reshape(-1))
        object.__setattr__(self, "vy", np.asarray(self.vy, dtype=np.float64).reshape(-1))
        if self.vx.shape != self.vy.shape:
            raise ValueError("vx and vy must have matching shapes")
        if not (np.all(np.isfinite(self.vx)) and np.all(np.isfinite(self.vy))):
            raise ValueError("velocity samples must be finite")

    @staticmethod
    def from_samples(vx, vy) -> "VelocityField":
        return VelocityField(np.asarray(vx), np.asarray(vy))

    @staticmethod
    def rotational(grid: GridSpec, clamp: float = 1e-12) -> "VelocityField":
        """Unit-speed rotation about the coordinate origin.

        (vx, vy) = (-y, x) / max(sqrt(x^2 + y^2), clamp); the clamp guards
        grids whose coordinates approach (0, 0).
        """
        if grid.dims != 2:
            raise ValueError("rotational velocity fields require a 2D grid")
        x, y = grid.meshes()
        rho = np.maximum(np.hypot(x, y), clamp)
        return VelocityField(-y / rho, x / rho)
