"""Lid-driven cavity steady state in vorticity-streamfunction form.

Outer loop: the interior vorticity advances explicitly (first- or
second-order step at a frozen streamfunction), wall vorticity closes from
the streamfunction, and the streamfunction relaxes in pseudo-time
d psi / d tau = lap(psi) + omega toward the Poisson solve.  The inner
relaxation always performs a floor of sweeps and then continues until the
Poisson residual drops below a cap relative to ||omega||_F; the floor makes
the combined outer/inner map a fixed-point iteration whose limit satisfies
lap(psi) + omega = 0 exactly, so the residual keeps shrinking alongside the
vorticity increments.  The run stops once ||omega_{n+1} - omega_n||_F falls
below tol_frobenius.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .evolve import ConvergenceError, DivergenceError
from .grid import BoundaryKind, FieldState, GridSpec, VelocityField
from .rhs import _cavity_interior_rhs, thom_wall_vorticity


@dataclass
class CavityResult:
    omega: FieldState
    psi: FieldState
    velocity: VelocityField
    steps: int
    t: float
    final_delta: float
    poisson_residual_rel: float
    converged: bool
    inner_sweeps_total: int


def _poisson_residual(psi: np.ndarray, w: np.ndarray, dx: float, dy: float) -> np.ndarray:
    lap = (psi[2:, 1:-1] - 2.0 * psi[1:-1, 1:-1] + psi[:-2, 1:-1]) / (dx * dx)
    lap += (psi[1:-1, 2:] - 2.0 * psi[1:-1, 1:-1] + psi[1:-1, :-2]) / (dy * dy)
    return lap + w[1:-1, 1:-1]


def _relax_psi(psi: np.ndarray, w: np.ndarray, dtau: float, dx: float, dy: float,
               tol_abs: float, min_sweeps: int, max_sweeps: int,
               check_every: int = 50) -> int:
    """Explicit pseudo-time sweeps in place; returns the sweep count."""
    cx = dtau / (dx * dx)
    cy = dtau / (dy * dy)
    sweeps = 0
    res = np.inf
    while sweeps < max_sweeps:
        batch = min_sweeps if sweeps == 0 else check_every
        batch = min(batch, max_sweeps - sweeps)
        for _ in range(batch):
            psi[1:-1, 1:-1] += (
                cx * (psi[2:, 1:-1] - 2.0 * psi[1:-1, 1:-1] + psi[:-2, 1:-1])
                + cy * (psi[1:-1, 2:] - 2.0 * psi[1:-1, 1:-1] + psi[1:-1, :-2])
                + dtau * w[1:-1, 1:-1]
            )
        sweeps += batch
        res = np.linalg.norm(_poisson_residual(psi, w, dx, dy))
        if res <= tol_abs:
            return sweeps
    raise ConvergenceError(
        f"streamfunction relaxation did not reach residual {tol_abs:.3e} "
        f"within {max_sweeps} sweeps (last {res:.3e})")


def velocity_from_streamfunction(psi2: np.ndarray, grid: GridSpec) -> VelocityField:
    """u = d psi / dy, v = -d psi / dx (central interior, wall values from BCs)."""
    dx, dy = grid.spacing
    u = np.zeros_like(psi2)
    v = np.zeros_like(psi2)
    u[:, 1:-1] = (psi2[:, 2:] - psi2[:, :-2]) / (2.0 * dy)
    v[1:-1, :] = -(psi2[2:, :] - psi2[:-2, :]) / (2.0 * dx)
    u[:, 0] = 0.0
    u[:, -1] = grid.boundary.lid_velocity
    u[0, :] = u[-1, :] = 0.0
    u[0, -1] = u[-1, -1] = 0.0  # corners stay with the side walls
    v[0, :] = v[-1, :] = 0.0
    v[:, 0] = v[:, -1] = 0.0
    return VelocityField(u.reshape(-1), v.reshape(-1))


def cavity_solve(grid: GridSpec, re: float = 1000.0, dt_omega: float = 0.005,
                 dtau_psi: float = 5e-6, tol_frobenius: float = 1e-5, *,
                 scheme: str = "trotter2", inner_rel_tol: float = 5e-5,
                 inner_min_sweeps: int = 20, inner_max_sweeps: int = 200_000,
                 max_steps: int = 400_000) -> CavityResult:
    """March the cavity to steady state from rest under an impulsive lid."""
    if grid.dims != 2:
        raise ValueError("the cavity solver needs a 2D grid")
    if grid.boundary.kind is not BoundaryKind.CAVITY_WALLS:
        raise ValueError("the cavity solver needs CavityWalls boundaries")
    if re <= 0 or dt_omega <= 0 or dtau_psi <= 0 or tol_frobenius <= 0:
        raise ValueError("re, dt_omega, dtau_psi, and tol_frobenius must be positive")
    if scheme not in ("euler1", "trotter2"):
        raise ValueError(f"unknown scheme {scheme!r}")
    dx, dy = grid.spacing
    if dtau_psi > 0.5 * (dx * dx * dy * dy) / (dx * dx + dy * dy):
        raise ValueError(f"dtau_psi {dtau_psi} exceeds the explicit stability limit")

    shape = grid.extents
    w = np.zeros(shape)
    psi = np.zeros(shape)
    w = thom_wall_vorticity(w, psi, grid)
    t = 0.0
    total_sweeps = 0
    delta = np.inf

    for step in range(1, max_steps + 1):
        F = _cavity_interior_rhs(w, psi, re, dx, dy)
        if scheme == "trotter2":
            JF = _cavity_interior_rhs(F, psi, re, dx, dy)
            w_new = w + dt_omega * F + 0.5 * dt_omega * dt_omega * JF
        else:
            w_new = w + dt_omega * F
        if not np.all(np.isfinite(w_new)):
            bad = int(np.argmin(np.isfinite(w_new).reshape(-1)))
            raise DivergenceError(f"cavity vorticity diverged at flat index {bad}",
                                  t=t, index=bad)

        tol_abs = inner_rel_tol * max(np.linalg.norm(w_new), 1.0)
        total_sweeps += _relax_psi(psi, w_new, dtau_psi, dx, dy, tol_abs,
                                   inner_min_sweeps, inner_max_sweeps)
        w_new = thom_wall_vorticity(w_new, psi, grid)
        delta = float(np.linalg.norm(w_new - w))
        w = w_new
        t += dt_omega
        if delta <= tol_frobenius:
            break
    converged = delta <= tol_frobenius
    if not converged:
        raise ConvergenceError(
            f"cavity run did not reach ||d omega||_F <= {tol_frobenius:.3e} in "
            f"{max_steps} steps (last {delta:.3e})")

    res_rel = float(np.linalg.norm(_poisson_residual(psi, w, dx, dy))
                    / max(np.linalg.norm(w), 1e-300))
    omega_state = FieldState(grid, w.reshape(-1).astype(np.complex128),
                             np.zeros(grid.npoints), t)
    psi_state = FieldState(grid, psi.reshape(-1).astype(np.complex128),
                           np.zeros(grid.npoints), t)
    return CavityResult(omega=omega_state, psi=psi_state,
                        velocity=velocity_from_streamfunction(psi, grid),
                        steps=step, t=t, final_delta=delta,
                        poisson_residual_rel=res_rel, converged=True,
                        inner_sweeps_total=total_sweeps)
