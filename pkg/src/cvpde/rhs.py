"""Stencil right-hand sides, overlap sums, Jacobian products, and symbolic specs.

Every right-hand side F maps a field state to dz/dt = F(z) on the same grid.
The overlap sum Sigma(z) = sum_k conj(z_k) F_k(z) drives both the variance
update and the post-selection probability, so each builtin RHS also exposes
its labeled parts (diffusion / convection-advection / reaction) for the
SigmaBreakdown diagnostics.

A RhsSpec is the symbolic form of an RHS: a per-site list of monomials, each
a coefficient (scalar or one value per site), an output-site offset, and a
multiset of factor-site offsets within Manhattan radius R.  Specs evaluate
numerically (for validation against the stencil kernels), differentiate
exactly, and serialize to a line-oriented text format:

    rhsspec v1
    dims <d> / channels <c> / degree <r> / deriv_order <K> / radius <R>
    mono coeff=<complex or @k> out=<o1[,o2]> factors=<ch>:<o1[,o2]>|...
    array @<k> <v0> <v1> ...          # per-site coefficient tables

Channels tag factors when a spec couples several interleaved fields (the
vorticity-streamfunction pair); single-field specs use channel 0 throughout.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grid import Boundary, BoundaryKind, FieldState, GridSpec, VelocityField

_MERGE_TOL = 1e-300


def _pad(a: np.ndarray, bkind: BoundaryKind, ghost: complex) -> np.ndarray:
    if bkind is BoundaryKind.PERIODIC:
        return np.pad(a, 1, mode="wrap")
    return np.pad(a, 1, mode="constant", constant_values=ghost)


def _shift(a: np.ndarray, offset: tuple[int, ...], bkind: BoundaryKind, ghost: complex = 0.0) -> np.ndarray:
    """Array of a[i + offset] with periodic wrap or constant ghost fill."""
    if bkind is BoundaryKind.PERIODIC:
        return np.roll(a, tuple(-o for o in offset), axis=tuple(range(a.ndim)))
    out = np.full_like(a, ghost)
    src, dst = [], []
    for n, o in zip(a.shape, offset):
        if abs(o) >= n:
            return out
        if o >= 0:
            src.append(slice(o, n))
            dst.append(slice(0, n - o))
        else:
            src.append(slice(0, n + o))
            dst.append(slice(-o, n))
    out[tuple(dst)] = a[tuple(src)]
    return out


def _check_dims(state: FieldState, want: int, what: str) -> None:
    if state.grid.dims != want:
        raise ValueError(f"{what} needs a {want}D grid, got {state.grid.dims}D")


# ---------------------------------------------------------------------------
# Burgers (1D)

def burgers_parts(state: FieldState, re: float) -> dict[str, np.ndarray]:
    """Diffusion and convection parts of the viscous Burgers stencil.

    F_k = (z_{k+1} - 2 z_k + z_{k-1}) / (Re dx^2) - z_k (z_{k+1} - z_{k-1}) / (2 dx)
    """
    _check_dims(state, 1, "burgers_rhs")
    if re <= 0:
        raise ValueError(f"Reynolds number must be positive, got {re}")
    dx = state.grid.spacing[0]
    bk = state.grid.boundary.kind
    ghost = complex(state.grid.boundary.value)
    z = state.z
    zp = _shift(z, (1,), bk, ghost)
    zm = _shift(z, (-1,), bk, ghost)
    diff = (zp - 2.0 * z + zm) / (re * dx * dx)
    conv = -z * (zp - zm) / (2.0 * dx)
    return {"diffusion": diff, "convection": conv}


def burgers_rhs(state: FieldState, re: float) -> np.ndarray:
    parts = burgers_parts(state, re)
    return parts["diffusion"] + parts["convection"]


# ---------------------------------------------------------------------------
# Fisher-KPP with rotational advection (2D)

def _advection_flux(z2: np.ndarray, vel: VelocityField, grid: GridSpec) -> np.ndarray:
    """Central flux differences -d_x(vx z) - d_y(vy z).

    The velocity weight is sampled at the neighbor grid point, so for the
    builtin rotational field the weight on z_{i+1,j} is
    -vx(x_{i+1}, y_j) / (2 dx) = y_j / (2 dx sqrt(x_{i+1}^2 + y_j^2)).
    """
    dx, dy = grid.spacing
    bk = grid.boundary.kind
    ghost = complex(grid.boundary.value)
    wrap = bk is BoundaryKind.PERIODIC
    zp = np.pad(z2, 1, mode="wrap") if wrap else np.pad(z2, 1, mode="constant", constant_values=ghost)
    vxp = np.pad(vel.vx.reshape(grid.extents), 1, mode="wrap" if wrap else "edge")
    vyp = np.pad(vel.vy.reshape(grid.extents), 1, mode="wrap" if wrap else "edge")
    px = vxp * zp
    py = vyp * zp
    adv = -(px[2:, 1:-1] - px[:-2, 1:-1]) / (2.0 * dx)
    adv -= (py[1:-1, 2:] - py[1:-1, :-2]) / (2.0 * dy)
    return adv


def _laplacian(z2: np.ndarray, grid: GridSpec, ghost: complex = 0.0) -> np.ndarray:
    dx, dy = grid.spacing
    zp = _pad(z2, grid.boundary.kind, ghost)
    lap = (zp[2:, 1:-1] - 2.0 * z2 + zp[:-2, 1:-1]) / (dx * dx)
    lap += (zp[1:-1, 2:] - 2.0 * z2 + zp[1:-1, :-2]) / (dy * dy)
    return lap


def fisher_parts(state: FieldState, pe: float, da: float,
                 vel: VelocityField | None = None) -> dict[str, np.ndarray]:
    """Advection, diffusion, and logistic reaction parts of the Fisher stencil.

    F = advection + laplacian(z) / Pe + Da (z - z^2), with the advection in
    conservative form so the rotational-velocity weights carry the neighbor
    coordinates in their denominators.
    """
    _check_dims(state, 2, "fisher_rhs")
    if pe <= 0:
        raise ValueError(f"Peclet number must be positive, got {pe}")
    grid = state.grid
    if vel is None:
        vel = VelocityField.rotational(grid)
    if vel.vx.size != grid.npoints:
        raise ValueError("velocity field does not match the grid")
    z2 = state.z2d
    adv = _advection_flux(z2, vel, grid)
    diff = _laplacian(z2, grid, complex(grid.boundary.value)) / pe
    reac = da * (z2 - z2 * z2)
    return {"advection": adv.reshape(-1), "diffusion": diff.reshape(-1),
            "reaction": reac.reshape(-1)}


def fisher_rhs(state: FieldState, pe: float, da: float,
               vel: VelocityField | None = None) -> np.ndarray:
    parts = fisher_parts(state, pe, da, vel)
    return parts["advection"] + parts["diffusion"] + parts["reaction"]


# ---------------------------------------------------------------------------
# Lid-driven cavity vorticity-streamfunction kernels (2D, CavityWalls)

def thom_wall_vorticity(omega2: np.ndarray, psi2: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Write wall vorticity into a copy of omega from the streamfunction.

    First-order closure at a no-slip wall: w_wall = -2 (psi_adj - psi_wall) / h^2,
    with the extra -2 U / h term on the moving lid (y = max, u = U).
    """
    dx, dy = grid.spacing
    u_lid = grid.boundary.lid_velocity
    w = omega2.copy()
    w[0, :] = -2.0 * (psi2[1, :] - psi2[0, :]) / (dx * dx)
    w[-1, :] = -2.0 * (psi2[-2, :] - psi2[-1, :]) / (dx * dx)
    w[:, 0] = -2.0 * (psi2[:, 1] - psi2[:, 0]) / (dy * dy)
    w[:, -1] = -2.0 * (psi2[:, -2] - psi2[:, -1]) / (dy * dy) - 2.0 * u_lid / dy
    return w


def _cavity_interior_rhs(w2: np.ndarray, psi2: np.ndarray, re: float,
                         dx: float, dy: float) -> np.ndarray:
    """F_w = -psi_y w_x + psi_x w_y + lap(w)/Re on interior points, zero on walls."""
    F = np.zeros_like(w2)
    psi_x = (psi2[2:, 1:-1] - psi2[:-2, 1:-1]) / (2.0 * dx)
    psi_y = (psi2[1:-1, 2:] - psi2[1:-1, :-2]) / (2.0 * dy)
    w_x = (w2[2:, 1:-1] - w2[:-2, 1:-1]) / (2.0 * dx)
    w_y = (w2[1:-1, 2:] - w2[1:-1, :-2]) / (2.0 * dy)
    lap = (w2[2:, 1:-1] - 2.0 * w2[1:-1, 1:-1] + w2[:-2, 1:-1]) / (dx * dx)
    lap += (w2[1:-1, 2:] - 2.0 * w2[1:-1, 1:-1] + w2[1:-1, :-2]) / (dy * dy)
    F[1:-1, 1:-1] = -psi_y * w_x + psi_x * w_y + lap / re
    return F


def cavity_rhs(omega: FieldState, psi: FieldState, re: float) -> np.ndarray:
    """Vorticity transport RHS with the wall closure folded in.

    Wall vorticity is rebuilt from psi before differencing; the returned F is
    zero on walls (their values are boundary-driven, not time-stepped).
    """
    _check_dims(omega, 2, "cavity_rhs")
    if re <= 0:
        raise ValueError(f"Reynolds number must be positive, got {re}")
    grid = omega.grid
    dx, dy = grid.spacing
    w2 = thom_wall_vorticity(omega.z2d.real, psi.z2d.real, grid)
    F = _cavity_interior_rhs(w2, psi.z2d.real, re, dx, dy)
    return F.reshape(-1).astype(np.complex128)


def streamfunction_rhs(psi: FieldState, omega: FieldState) -> np.ndarray:
    """Pseudo-time relaxation RHS lap(psi) + omega, zero on Dirichlet walls."""
    _check_dims(psi, 2, "streamfunction_rhs")
    grid = psi.grid
    dx, dy = grid.spacing
    p2 = psi.z2d.real
    w2 = omega.z2d.real
    F = np.zeros_like(p2)
    lap = (p2[2:, 1:-1] - 2.0 * p2[1:-1, 1:-1] + p2[:-2, 1:-1]) / (dx * dx)
    lap += (p2[1:-1, 2:] - 2.0 * p2[1:-1, 1:-1] + p2[1:-1, :-2]) / (dy * dy)
    F[1:-1, 1:-1] = lap + w2[1:-1, 1:-1]
    return F.reshape(-1).astype(np.complex128)


# ---------------------------------------------------------------------------
# Overlap sums

@dataclass(frozen=True)
class SigmaBreakdown:
    """Sigma(z) = sum_k conj(z_k) F_k split by stencil part.

    conv holds the convection (1D) or advection (2D) contribution; other
    collects any unlabeled part (e.g. a loss drift).  Parts sum to total.
    """

    total: complex
    diff: complex = 0.0 + 0.0j
    conv: complex = 0.0 + 0.0j
    reac: complex = 0.0 + 0.0j
    other: complex = 0.0 + 0.0j


def sigma(state: FieldState, F: np.ndarray) -> complex:
    """Overlap sum Sigma = sum_k conj(z_k) F_k; equals tr(A rho) for product states."""
    F = np.asarray(F).reshape(-1)
    if F.shape != state.z.shape:
        raise ValueError(f"F has {F.shape[0]} entries for a grid with {state.z.size} points")
    return complex(np.vdot(state.z, F))


_PART_SLOTS = {"diffusion": "diff", "convection": "conv", "advection": "conv",
               "reaction": "reac", "linear": "other", "loss": "other"}


def sigma_breakdown(state: FieldState, parts: dict[str, np.ndarray]) -> SigmaBreakdown:
    slots = {"diff": 0.0 + 0.0j, "conv": 0.0 + 0.0j, "reac": 0.0 + 0.0j, "other": 0.0 + 0.0j}
    total = 0.0 + 0.0j
    for name, F in parts.items():
        s = sigma(state, F)
        slots[_PART_SLOTS.get(name, "other")] += s
        total += s
    return SigmaBreakdown(total=total, **slots)


def conv_bound(state: FieldState, re: float, eps: float) -> tuple[float, float]:
    """Young-inequality bound on the convection overlap.

    Returns (|Sigma_conv|, eps/(Re dx^2) sum|d+z|^2 + Re/(4 eps) ||z||_inf^4 L).
    The second Young term carries no dx^2 factor; that is what the splitting
    of (||z||_inf^2/dx) |d+z_k| actually yields and it bounds all fields.
    """
    _check_dims(state, 1, "conv_bound")
    if eps <= 0:
        raise ValueError("eps must be positive")
    dx = state.grid.spacing[0]
    L = state.grid.npoints
    lhs = abs(sigma(state, burgers_parts(state, re)["convection"]))
    dzf = _shift(state.z, (1,), state.grid.boundary.kind,
                 complex(state.grid.boundary.value)) - state.z
    rhs = (eps / (re * dx * dx)) * float(np.sum(np.abs(dzf) ** 2))
    rhs += (re / (4.0 * eps)) * float(np.max(np.abs(state.z)) ** 4) * L
    return lhs, rhs


# ---------------------------------------------------------------------------
# Builtin RHS objects (callable, with labeled parts and exact Jacobian products)

class BurgersRhs:
    """Viscous Burgers stencil dz_k/dt = diffusion/Re + nonlinear convection."""

    def __init__(self, re: float):
        if re <= 0:
            raise ValueError(f"Reynolds number must be positive, got {re}")
        self.re = float(re)

    def __call__(self, state: FieldState) -> np.ndarray:
        return burgers_rhs(state, self.re)

    def parts(self, state: FieldState) -> dict[str, np.ndarray]:
        return burgers_parts(state, self.re)

    def jacobian_apply(self, state: FieldState, w: np.ndarray) -> np.ndarray:
        # Dirichlet ghosts are constants, so perturbations carry zero ghosts.
        bk = state.grid.boundary.kind
        dx = state.grid.spacing[0]
        z = state.z
        w = np.asarray(w, dtype=np.complex128).reshape(-1)
        zp = _shift(z, (1,), bk, complex(state.grid.boundary.value))
        zm = _shift(z, (-1,), bk, complex(state.grid.boundary.value))
        wp = _shift(w, (1,), bk, 0.0)
        wm = _shift(w, (-1,), bk, 0.0)
        out = (wp - 2.0 * w + wm) / (self.re * dx * dx)
        out -= (w * (zp - zm) + z * (wp - wm)) / (2.0 * dx)
        return out


class FisherRhs:
    """Fisher-KPP stencil with advection by a sampled velocity field."""

    def __init__(self, pe: float, da: float, vel: VelocityField | None = None):
        if pe <= 0:
            raise ValueError(f"Peclet number must be positive, got {pe}")
        self.pe = float(pe)
        self.da = float(da)
        self.vel = vel

    def _vel(self, grid: GridSpec) -> VelocityField:
        if self.vel is None:
            self.vel = VelocityField.rotational(grid)
        return self.vel

    def __call__(self, state: FieldState) -> np.ndarray:
        return fisher_rhs(state, self.pe, self.da, self._vel(state.grid))

    def parts(self, state: FieldState) -> dict[str, np.ndarray]:
        return fisher_parts(state, self.pe, self.da, self._vel(state.grid))

    def jacobian_apply(self, state: FieldState, w: np.ndarray) -> np.ndarray:
        grid = state.grid
        w2 = np.asarray(w, dtype=np.complex128).reshape(grid.extents)
        out = _advection_flux(w2, self._vel(grid), grid)
        out += _laplacian(w2, grid, 0.0) / self.pe
        out += self.da * (1.0 - 2.0 * state.z2d) * w2
        return out.reshape(-1)


class LinearRhs:
    """Generic linear RHS F = M z for a dense coupling matrix M."""

    def __init__(self, matrix: np.ndarray):
        M = np.asarray(matrix, dtype=np.complex128)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise ValueError("coupling matrix must be square")
        self.matrix = M

    def __call__(self, state: FieldState) -> np.ndarray:
        if state.z.size != self.matrix.shape[0]:
            raise ValueError("state size does not match the coupling matrix")
        return self.matrix @ state.z

    def parts(self, state: FieldState) -> dict[str, np.ndarray]:
        return {"linear": self(state)}

    def jacobian_apply(self, state: FieldState, w: np.ndarray) -> np.ndarray:
        return self.matrix @ np.asarray(w, dtype=np.complex128).reshape(-1)


class CavityVorticityRhs:
    """Vorticity transport at a frozen streamfunction (linear in omega)."""

    def __init__(self, psi: FieldState, re: float):
        if re <= 0:
            raise ValueError(f"Reynolds number must be positive, got {re}")
        self.psi = psi
        self.re = float(re)

    def __call__(self, omega: FieldState) -> np.ndarray:
        return cavity_rhs(omega, self.psi, self.re)

    def parts(self, omega: FieldState) -> dict[str, np.ndarray]:
        grid = omega.grid
        dx, dy = grid.spacing
        w2 = thom_wall_vorticity(omega.z2d.real, self.psi.z2d.real, grid)
        p2 = self.psi.z2d.real
        adv = np.zeros_like(w2)
        psi_x = (p2[2:, 1:-1] - p2[:-2, 1:-1]) / (2.0 * dx)
        psi_y = (p2[1:-1, 2:] - p2[1:-1, :-2]) / (2.0 * dy)
        w_x = (w2[2:, 1:-1] - w2[:-2, 1:-1]) / (2.0 * dx)
        w_y = (w2[1:-1, 2:] - w2[1:-1, :-2]) / (2.0 * dy)
        adv[1:-1, 1:-1] = -psi_y * w_x + psi_x * w_y
        diff = np.zeros_like(w2)
        lap = (w2[2:, 1:-1] - 2.0 * w2[1:-1, 1:-1] + w2[:-2, 1:-1]) / (dx * dx)
        lap += (w2[1:-1, 2:] - 2.0 * w2[1:-1, 1:-1] + w2[1:-1, :-2]) / (dy * dy)
        diff[1:-1, 1:-1] = lap / self.re
        return {"advection": adv.reshape(-1).astype(np.complex128),
                "diffusion": diff.reshape(-1).astype(np.complex128)}

    def jacobian_apply(self, omega: FieldState, w: np.ndarray) -> np.ndarray:
        # Wall closure depends on psi only, so wall perturbations are zero.
        grid = omega.grid
        dx, dy = grid.spacing
        w2 = np.asarray(w, dtype=np.complex128).reshape(grid.extents).copy()
        w2[0, :] = w2[-1, :] = 0.0
        w2[:, 0] = w2[:, -1] = 0.0
        out = _cavity_interior_rhs(w2.real, self.psi.z2d.real, self.re, dx, dy)
        out = out.astype(np.complex128)
        outi = _cavity_interior_rhs(w2.imag, self.psi.z2d.real, self.re, dx, dy)
        out += 1j * outi
        return out.reshape(-1)


def jacobian_apply(rhs, state: FieldState, w: np.ndarray) -> np.ndarray:
    """Exact Jacobian-vector product sum_j dF_k/dz_j w_j for any spec or builtin."""
    return rhs.jacobian_apply(state, w)


# ---------------------------------------------------------------------------
# Symbolic monomial specs

@dataclass
class Monomial:
    """coeff * prod_m z^(ch_m)_{i + f_m}, contributing to F^(out_ch)_{i + out}.

    coeff is a scalar or a per-site array indexed by the base site i.
    """

    coeff: complex | np.ndarray
    factors: tuple[tuple[int, ...], ...]
    out_offset: tuple[int, ...]
    channels: tuple[int, ...] | None = None
    out_channel: int = 0

    def key(self):
        ch = self.channels if self.channels is not None else (0,) * len(self.factors)
        return (self.out_offset, self.out_channel, tuple(sorted(zip(ch, self.factors))))

    def sorted(self) -> "Monomial":
        ch = self.channels if self.channels is not None else (0,) * len(self.factors)
        pairs = sorted(zip(ch, self.factors))
        return Monomial(self.coeff, tuple(f for _, f in pairs), self.out_offset,
                        tuple(c for c, _ in pairs) if self.channels is not None else None,
                        self.out_channel)


@dataclass
class RhsSpec:
    """Per-site monomial list with degree/derivative-order/radius metadata."""

    dims: int
    degree: int
    deriv_order: int
    radius: int
    monomials: list[Monomial] = field(default_factory=list)
    n_channels: int = 1

    def __post_init__(self):
        if self.radius < math.ceil(self.deriv_order / 2):
            raise ValueError(
                f"radius {self.radius} below the minimal ceil(K/2) = "
                f"{math.ceil(self.deriv_order / 2)} for derivative order {self.deriv_order}")
        for m in self.monomials:
            if len(m.out_offset) != self.dims:
                raise ValueError(f"output offset {m.out_offset} has wrong dimension")
            if len(m.factors) > self.degree:
                raise ValueError(f"monomial degree {len(m.factors)} exceeds spec degree {self.degree}")
            for f in m.factors:
                if len(f) != self.dims:
                    raise ValueError(f"factor offset {f} has wrong dimension")
                if sum(abs(c) for c in f) > self.radius:
                    raise ValueError(f"factor offset {f} outside Manhattan radius {self.radius}")
            if m.channels is not None and len(m.channels) != len(m.factors):
                raise ValueError("channel tags must match the factor count")
            chans = m.channels if m.channels is not None else ()
            if any(not 0 <= c < self.n_channels for c in chans) or not 0 <= m.out_channel < self.n_channels:
                raise ValueError("channel tag outside the declared channel count")

    def canonicalize(self) -> "RhsSpec":
        """Sort factor multisets, merge duplicate monomials, drop exact zeros."""
        merged: dict = {}
        for m in self.monomials:
            m = m.sorted()
            k = m.key()
            if k in merged:
                merged[k].coeff = merged[k].coeff + m.coeff
            else:
                merged[k] = Monomial(m.coeff, m.factors, m.out_offset, m.channels, m.out_channel)
        keep = []
        for m in merged.values():
            if np.isscalar(m.coeff) and abs(m.coeff) <= _MERGE_TOL:
                continue
            if not np.isscalar(m.coeff) and not np.any(np.abs(m.coeff) > _MERGE_TOL):
                continue
            keep.append(m)
        keep.sort(key=lambda m: m.key())
        return RhsSpec(self.dims, self.degree, self.deriv_order, self.radius, keep, self.n_channels)

    # -- evaluation ---------------------------------------------------------

    def _fields_nd(self, states: list[FieldState]) -> tuple[list[np.ndarray], GridSpec]:
        if len(states) != self.n_channels:
            raise ValueError(f"spec has {self.n_channels} channels, got {len(states)} states")
        grid = states[0].grid
        if grid.dims != self.dims:
            raise ValueError(f"spec is {self.dims}D but the grid is {grid.dims}D")
        return [s.z2d if grid.dims == 2 else s.z for s in states], grid

    def evaluate_multi(self, states: list[FieldState]) -> dict[int, np.ndarray]:
        """Numeric F per output channel; flat arrays in grid order."""
        znd, grid = self._fields_nd(states)
        bk = grid.boundary.kind
        ghost = complex(grid.boundary.value)
        out = {}
        for m in self.monomials:
            term = np.ones(grid.extents, dtype=np.complex128)
            chans = m.channels if m.channels is not None else (0,) * len(m.factors)
            for ch, f in zip(chans, m.factors):
                term = term * _shift(znd[ch], f, bk, ghost)
            term = term * _coeff_nd(m.coeff, term.shape)
            if any(m.out_offset):
                term = _shift(term, tuple(-o for o in m.out_offset), bk, 0.0)
            acc = out.setdefault(m.out_channel, np.zeros(grid.extents, dtype=np.complex128))
            acc += term
        return {ch: F.reshape(-1) for ch, F in out.items()}

    def evaluate(self, state: FieldState) -> np.ndarray:
        if self.n_channels != 1:
            raise ValueError("evaluate() handles single-channel specs; use evaluate_multi")
        F = self.evaluate_multi([state])
        return F.get(0, np.zeros(state.z.size, dtype=np.complex128))

    def __call__(self, state: FieldState) -> np.ndarray:
        return self.evaluate(state)

    def parts(self, state: FieldState) -> dict[str, np.ndarray]:
        return {"spec": self.evaluate(state)}

    def jacobian_apply(self, state: FieldState, w: np.ndarray) -> np.ndarray:
        """Exact product-rule Jacobian action (single-channel specs)."""
        if self.n_channels != 1:
            raise ValueError("jacobian_apply handles single-channel specs")
        grid = state.grid
        bk = grid.boundary.kind
        ghost = complex(grid.boundary.value)
        znd = state.z2d if grid.dims == 2 else state.z
        wnd = np.asarray(w, dtype=np.complex128).reshape(znd.shape)
        out = np.zeros(grid.extents, dtype=np.complex128)
        for m in self.monomials:
            shifts = [_shift(znd, f, bk, ghost) for f in m.factors]
            for i, f in enumerate(m.factors):
                term = _shift(wnd, f, bk, 0.0)
                for j, s in enumerate(shifts):
                    if j != i:
                        term = term * s
                term = term * _coeff_nd(m.coeff, term.shape)
                if any(m.out_offset):
                    term = _shift(term, tuple(-o for o in m.out_offset), bk, 0.0)
                out += term
        return out.reshape(-1)


# -- builders ---------------------------------------------------------------

def _zero_off(d: int) -> tuple[int, ...]:
    return (0,) * d


def _coeff_nd(coeff, shape: tuple[int, ...]):
    if np.isscalar(coeff):
        return coeff
    arr = np.asarray(coeff)
    return arr.reshape(shape) if arr.size > 1 else complex(arr.reshape(-1)[0])


def rhs_to_spec(builtin: str, grid: GridSpec, *, re: float | None = None,
                pe: float | None = None, da: float | None = None,
                vel: VelocityField | None = None,
                coeffs: dict[tuple[int, ...], complex] | None = None) -> RhsSpec:
    """Symbolic monomial form of a builtin RHS, validated by evaluation agreement."""
    if builtin == "burgers":
        if grid.dims != 1:
            raise ValueError("burgers specs are 1D")
        if re is None:
            raise ValueError("burgers needs re=")
        dx = grid.spacing[0]
        c_d = 1.0 / (re * dx * dx)
        mons = [
            Monomial(c_d, ((1,),), (0,)),
            Monomial(-2.0 * c_d, ((0,),), (0,)),
            Monomial(c_d, ((-1,),), (0,)),
            Monomial(-1.0 / (2.0 * dx), ((0,), (1,)), (0,)),
            Monomial(+1.0 / (2.0 * dx), ((-1,), (0,)), (0,)),
        ]
        return RhsSpec(1, 2, 2, 1, mons).canonicalize()

    if builtin == "fisher":
        if grid.dims != 2:
            raise ValueError("fisher specs are 2D")
        if pe is None or da is None:
            raise ValueError("fisher needs pe= and da=")
        if vel is None:
            vel = VelocityField.rotational(grid)
        dx, dy = grid.spacing
        bk = grid.boundary.kind
        vx2 = vel.vx.reshape(grid.extents)
        vy2 = vel.vy.reshape(grid.extents)
        edge = bk is not BoundaryKind.PERIODIC

        def vshift(v2, off):
            if not edge:
                return _shift(v2, off, bk)
            vp = np.pad(v2, 1, mode="edge")
            return vp[1 + off[0]:v2.shape[0] + 1 + off[0], 1 + off[1]:v2.shape[1] + 1 + off[1]]

        mons = [
            Monomial((-vshift(vx2, (1, 0)) / (2.0 * dx)).reshape(-1), ((1, 0),), (0, 0)),
            Monomial((+vshift(vx2, (-1, 0)) / (2.0 * dx)).reshape(-1), ((-1, 0),), (0, 0)),
            Monomial((-vshift(vy2, (0, 1)) / (2.0 * dy)).reshape(-1), ((0, 1),), (0, 0)),
            Monomial((+vshift(vy2, (0, -1)) / (2.0 * dy)).reshape(-1), ((0, -1),), (0, 0)),
            Monomial(1.0 / (pe * dx * dx), ((1, 0),), (0, 0)),
            Monomial(1.0 / (pe * dx * dx), ((-1, 0),), (0, 0)),
            Monomial(1.0 / (pe * dy * dy), ((0, 1),), (0, 0)),
            Monomial(1.0 / (pe * dy * dy), ((0, -1),), (0, 0)),
            Monomial(-2.0 / (pe * dx * dx) - 2.0 / (pe * dy * dy) + da, ((0, 0),), (0, 0)),
            Monomial(-da, ((0, 0), (0, 0)), (0, 0)),
        ]
        return RhsSpec(2, 2, 2, 1, mons).canonicalize()

    if builtin == "cavity-vorticity":
        if grid.dims != 2:
            raise ValueError("cavity specs are 2D")
        if re is None:
            raise ValueError("cavity-vorticity needs re=")
        dx, dy = grid.spacing
        z = (0, 0)
        cxy = 1.0 / (4.0 * dx * dy)
        # channel 0 = vorticity, channel 1 = streamfunction
        mons = [
            Monomial(-cxy, ((0, 1), (1, 0)), z, channels=(1, 0)),
            Monomial(+cxy, ((0, 1), (-1, 0)), z, channels=(1, 0)),
            Monomial(+cxy, ((0, -1), (1, 0)), z, channels=(1, 0)),
            Monomial(-cxy, ((0, -1), (-1, 0)), z, channels=(1, 0)),
            Monomial(+cxy, ((1, 0), (0, 1)), z, channels=(1, 0)),
            Monomial(-cxy, ((1, 0), (0, -1)), z, channels=(1, 0)),
            Monomial(-cxy, ((-1, 0), (0, 1)), z, channels=(1, 0)),
            Monomial(+cxy, ((-1, 0), (0, -1)), z, channels=(1, 0)),
            Monomial(1.0 / (re * dx * dx), ((1, 0),), z, channels=(0,)),
            Monomial(1.0 / (re * dx * dx), ((-1, 0),), z, channels=(0,)),
            Monomial(1.0 / (re * dy * dy), ((0, 1),), z, channels=(0,)),
            Monomial(1.0 / (re * dy * dy), ((0, -1),), z, channels=(0,)),
            Monomial(-2.0 / (re * dx * dx) - 2.0 / (re * dy * dy), ((0, 0),), z, channels=(0,)),
        ]
        return RhsSpec(2, 2, 2, 1, mons, n_channels=2).canonicalize()

    if builtin == "generic-linear":
        if coeffs is None:
            coeffs = {}
            for ax in range(grid.dims):
                for s in (-1, 1):
                    off = [0] * grid.dims
                    off[ax] = s
                    coeffs[tuple(off)] = 1.0
                coeffs[_zero_off(grid.dims)] = -2.0 * grid.dims
        mons = [Monomial(complex(c), (off,), _zero_off(grid.dims)) for off, c in coeffs.items()]
        R = max(1, max(sum(abs(c) for c in off) for off in coeffs))
        return RhsSpec(grid.dims, 1, 2, R, mons).canonicalize()

    raise ValueError(f"unknown builtin RHS {builtin!r}")


def full_stencil_spec(dims: int, deriv_order: int, degree: int,
                      self_coupling: bool) -> RhsSpec:
    """Every degree-r monomial over the Manhattan-R neighborhood, unit weights.

    The neighborhood excludes the center unless self_coupling is set; used to
    cross-check the multiset-counting rank formula by explicit enumeration.
    """
    from itertools import combinations_with_replacement, product

    R = math.ceil(deriv_order / 2)
    offs = [off for off in product(range(-R, R + 1), repeat=dims)
            if sum(abs(c) for c in off) <= R]
    if not self_coupling:
        offs = [off for off in offs if any(off)]
    mons = [Monomial(1.0 + 0.0j, tuple(sorted(c)), _zero_off(dims))
            for c in combinations_with_replacement(offs, degree)]
    return RhsSpec(dims, degree, deriv_order, R, mons)


# -- text serialization -------------------------------------------------------

def _fmt_c(c: complex) -> str:
    c = complex(c)
    return f"{c.real:.17g}{c.imag:+.17g}j"


def _fmt_off(off: tuple[int, ...]) -> str:
    return ",".join(str(o) for o in off)


def write_spec_text(spec: RhsSpec) -> str:
    lines = ["rhsspec v1", f"dims {spec.dims}", f"channels {spec.n_channels}",
             f"degree {spec.degree}", f"deriv_order {spec.deriv_order}",
             f"radius {spec.radius}"]
    arrays: list[np.ndarray] = []
    for m in spec.monomials:
        if np.isscalar(m.coeff):
            cs = _fmt_c(m.coeff)
        else:
            cs = f"@{len(arrays)}"
            arrays.append(np.asarray(m.coeff, dtype=np.complex128).reshape(-1))
        chans = m.channels if m.channels is not None else (0,) * len(m.factors)
        fs = "|".join(f"{ch}:{_fmt_off(f)}" for ch, f in zip(chans, m.factors))
        lines.append(f"mono coeff={cs} out={m.out_channel}:{_fmt_off(m.out_offset)} factors={fs}")
    for k, arr in enumerate(arrays):
        lines.append(f"array @{k} " + " ".join(_fmt_c(v) for v in arr))
    return "\n".join(lines) + "\n"


def read_spec_text(text: str) -> RhsSpec:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != "rhsspec v1":
        raise ValueError("not a rhsspec v1 document")
    meta: dict[str, int] = {}
    monos: list[tuple] = []
    arrays: dict[int, np.ndarray] = {}
    for ln in lines[1:]:
        head, _, rest = ln.partition(" ")
        if head in ("dims", "channels", "degree", "deriv_order", "radius"):
            meta[head] = int(rest)
        elif head == "mono":
            fields = dict(tok.split("=", 1) for tok in rest.split())
            monos.append((fields["coeff"], fields["out"], fields.get("factors", "")))
        elif head == "array":
            tag, _, vals = rest.partition(" ")
            arrays[int(tag[1:])] = np.array([complex(v) for v in vals.split()])
        else:
            raise ValueError(f"unrecognized line {ln!r} in rhsspec document")
    for key in ("dims", "channels", "degree", "deriv_order", "radius"):
        if key not in meta:
            raise ValueError(f"missing header field {key!r}")
    mons = []
    for cs, outs, fs in monos:
        coeff = arrays[int(cs[1:])] if cs.startswith("@") else complex(cs)
        out_ch, _, out_off = outs.partition(":")
        factors, channels = [], []
        if fs:
            for tok in fs.split("|"):
                ch, _, off = tok.partition(":")
                channels.append(int(ch))
                factors.append(tuple(int(o) for o in off.split(",")))
        mons.append(Monomial(coeff, tuple(factors),
                             tuple(int(o) for o in out_off.split(",")),
                             tuple(channels) if meta["channels"] > 1 else None,
                             int(out_ch)))
    return RhsSpec(meta["dims"], meta["degree"], meta["deriv_order"], meta["radius"],
                   mons, meta["channels"])
