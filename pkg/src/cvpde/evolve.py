"""Time integration of coherent amplitudes and the first-order variance law.

The first-order step is plain forward Euler; the second-order step adds the
(dt^2/2) J_F F correction obtained from one exact Jacobian product, which is
the dt-truncation relationship the tests pin down.  Readout variance follows
var' = max(0, (1 - 2 dt Re Sigma) var) with clamp events counted, and the
post-selection probability per step is p_a = 1 - 2 dt Re tr(A rho) clipped
to [0, 1].  The PaBound controller caps the step at eps / (2 Re tr(A rho)),
reporting +inf (serialized as "unconstrained") when Re tr(A rho) <= 0.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grid import BoundaryKind, FieldState
from .rhs import sigma

_TRARHO_FLOOR = 1e-30


class DivergenceError(RuntimeError):
    """Raised when an update produces non-finite amplitudes."""

    def __init__(self, message: str, t: float, index: int, last_state: FieldState | None = None):
        super().__init__(message)
        self.t = t
        self.index = index
        self.last_state = last_state


class ConvergenceError(RuntimeError):
    """Raised when an iterative solve exhausts its iteration cap."""


@dataclass(frozen=True)
class StepReport:
    """Per-step diagnostics recorded before the state is advanced."""

    t: float
    dt_used: float
    dt_max_allowed: float
    sigma_real: float
    tr_a_rho: complex
    p_a: float
    cum_p_a: float
    var_clamped: int = 0
    p_a_clipped: bool = False


@dataclass(frozen=True)
class RunConfig:
    dt: float
    t_end: float
    scheme: str = "euler1"
    controller: str = "off"
    epsilon: float = 0.05
    save_times: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.t_end < 0:
            raise ValueError(f"t_end must be nonnegative, got {self.t_end}")
        if self.scheme not in ("euler1", "trotter2"):
            raise ValueError(f"unknown scheme {self.scheme!r} (euler1 | trotter2)")
        if self.controller not in ("off", "pa-bound"):
            raise ValueError(f"unknown controller {self.controller!r} (off | pa-bound)")
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")


@dataclass
class RunResult:
    snapshots: list[tuple[FieldState, StepReport]]
    steps: list[StepReport]
    final: FieldState
    cum_p_a: float
    var_clamp_events: int
    p_a_clip_events: int


def _check_finite(z: np.ndarray, t: float, last: FieldState | None) -> None:
    finite = np.isfinite(z.real) & np.isfinite(z.imag)
    if not finite.all():
        idx = int(np.argmin(finite))
        raise DivergenceError(f"non-finite amplitude at flat index {idx}, t = {t:.6g}",
                              t=t, index=idx, last_state=last)


def euler_step(state: FieldState, F: np.ndarray, dt: float) -> FieldState:
    """First-order update z' = z + dt F; variance is advanced separately."""
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    F = np.asarray(F, dtype=np.complex128).reshape(-1)
    if F.shape != state.z.shape:
        raise ValueError("F does not match the state layout")
    z = state.z + dt * F
    _check_finite(z, state.t + dt, state)
    return FieldState(state.grid, z, state.var.copy(), state.t + dt)


def trotter2_step(state: FieldState, rhs, dt: float, F: np.ndarray | None = None) -> FieldState:
    """Second-order update z' = z + dt F + (dt^2/2) J_F(z) F(z)."""
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if F is None:
        F = rhs(state)
    F = np.asarray(F, dtype=np.complex128).reshape(-1)
    JF = np.asarray(rhs.jacobian_apply(state, F), dtype=np.complex128).reshape(-1)
    z = state.z + dt * F + 0.5 * dt * dt * JF
    _check_finite(z, state.t + dt, state)
    return FieldState(state.grid, z, state.var.copy(), state.t + dt)


def variance_step(var: np.ndarray, sigma_real: float, dt: float) -> tuple[np.ndarray, int]:
    """First-order variance law var' = max(0, (1 - 2 dt Re Sigma) var).

    Returns the updated array and the number of entries clamped at zero.
    """
    var = np.asarray(var, dtype=np.float64)
    if np.any(var < 0):
        raise ValueError("variance must be nonnegative")
    out = (1.0 - 2.0 * dt * sigma_real) * var
    clamped = int(np.count_nonzero(out < 0.0))
    if clamped:
        out = np.maximum(out, 0.0)
    return out, clamped


def step_controller(tr_a_rho: complex, epsilon: float) -> float:
    """Largest admissible step dt_max = eps / (2 max(Re tr(A rho), 1e-30)).

    Returns +inf (the "unconstrained" sentinel) when Re tr(A rho) <= 0,
    i.e. when the post-selection bound imposes no constraint.
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    re = complex(tr_a_rho).real
    if re <= 0.0:
        return math.inf
    return epsilon / (2.0 * max(re, _TRARHO_FLOOR))


def _pin_dirichlet(state: FieldState, pinned: np.ndarray | None) -> None:
    if pinned is None:
        return
    if state.grid.dims == 1:
        state.z[0] = pinned[0]
        state.z[-1] = pinned[-1]
    else:
        z2 = state.z.reshape(state.grid.extents)
        p2 = pinned.reshape(state.grid.extents)
        z2[0, :] = p2[0, :]
        z2[-1, :] = p2[-1, :]
        z2[:, 0] = p2[:, 0]
        z2[:, -1] = p2[:, -1]


def run(initial: FieldState, rhs, config: RunConfig) -> RunResult:
    """Advance a field state to t_end, recording step reports and snapshots.

    Snapshots land exactly on the requested save times (the step is shortened
    when needed).  Dirichlet boundaries clamp the edge amplitudes back to
    their initial values after every step.
    """
    t_end = config.t_end
    saves = sorted(config.save_times) if config.save_times is not None else [initial.t, initial.t + t_end]
    tol = 1e-9 * max(1.0, abs(t_end))
    if saves and (saves[0] < initial.t - tol or saves[-1] > initial.t + t_end + tol):
        raise ValueError(f"save times {saves} outside the run window")

    pinned = initial.z.copy() if initial.grid.boundary.kind is BoundaryKind.DIRICHLET else None
    state = initial.copy()
    snapshots: list[tuple[FieldState, StepReport]] = []
    steps: list[StepReport] = []
    cum_p_a = 1.0
    clamp_events = 0
    clip_events = 0
    save_iter = list(saves)

    def maybe_snapshot(report: StepReport) -> None:
        while save_iter and state.t >= save_iter[0] - tol:
            save_iter.pop(0)
            snapshots.append((state.copy(), report))

    F0 = np.asarray(rhs(state), dtype=np.complex128).reshape(-1)
    s0 = sigma(state, F0)
    maybe_snapshot(StepReport(t=state.t, dt_used=0.0, dt_max_allowed=math.inf,
                              sigma_real=s0.real, tr_a_rho=s0, p_a=1.0, cum_p_a=1.0))

    horizon = initial.t + t_end
    while state.t < horizon - tol:
        F = np.asarray(rhs(state), dtype=np.complex128).reshape(-1)
        tr = sigma(state, F)
        dt_max = step_controller(tr, config.epsilon) if config.controller == "pa-bound" else math.inf
        dt = min(config.dt, dt_max)
        next_stop = save_iter[0] if save_iter else horizon
        if state.t + dt > next_stop - tol:
            dt = next_stop - state.t
        p_raw = 1.0 - 2.0 * dt * tr.real
        p_a = min(1.0, max(0.0, p_raw))
        clipped = p_a != p_raw
        clip_events += int(clipped)
        new_var, clamped = variance_step(state.var, tr.real, dt)
        clamp_events += clamped

        if config.scheme == "euler1":
            state = euler_step(state, F, dt)
        else:
            state = trotter2_step(state, rhs, dt, F=F)
        state.var = new_var
        _pin_dirichlet(state, pinned)

        cum_p_a *= p_a
        report = StepReport(t=state.t, dt_used=dt, dt_max_allowed=dt_max,
                            sigma_real=tr.real, tr_a_rho=tr, p_a=p_a, cum_p_a=cum_p_a,
                            var_clamped=clamped, p_a_clipped=clipped)
        steps.append(report)
        maybe_snapshot(report)

    return RunResult(snapshots=snapshots, steps=steps, final=state, cum_p_a=cum_p_a,
                     var_clamp_events=clamp_events, p_a_clip_events=clip_events)
