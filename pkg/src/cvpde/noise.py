"""Photon-loss modelling and its two-stage mitigation.

Uniform single-mode loss at rate gamma shows up at the amplitude level as an
extra linear drift -gamma/2 z on top of the ideal right-hand side.  Knowing a
calibrated rate gamma_bar, the deterministic part is undone by rescaling the
read-out amplitudes by exp(gamma_bar t / 2); the rescaling is exact for the
continuous flow of a linear RHS and leaves an O(gamma dt) residual per step on
discretized trajectories.  Whatever structured gamma-dependence remains after
the counterterm is removed by Richardson extrapolation in gamma to zero using
Lagrange weights over a sweep of scaled noise rates.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import FieldState


class NoisyRhs:
    """Ideal right-hand side with uniform amplitude damping -gamma/2 z."""

    def __init__(self, base, gamma: float):
        if gamma < 0:
            raise ValueError(f"loss rate must be nonnegative, got {gamma}")
        self.base = base
        self.gamma = float(gamma)

    def __call__(self, state: FieldState) -> np.ndarray:
        return self.base(state) - 0.5 * self.gamma * state.z

    def parts(self, state: FieldState) -> dict[str, np.ndarray]:
        out = dict(self.base.parts(state))
        out["loss"] = -0.5 * self.gamma * state.z
        return out

    def jacobian_apply(self, state: FieldState, w: np.ndarray) -> np.ndarray:
        w = np.asarray(w, dtype=np.complex128).reshape(-1)
        return self.base.jacobian_apply(state, w) - 0.5 * self.gamma * w


def with_loss(rhs, gamma: float):
    """Attach amplitude damping; gamma = 0 returns the ideal RHS unchanged."""
    if gamma == 0:
        return rhs
    return NoisyRhs(rhs, gamma)


def counterterm_factor(gamma_bar: float, t: float) -> float:
    """exp(gamma_bar t / 2), the calibrated inverse of uniform damping."""
    return float(np.exp(0.5 * gamma_bar * t))


def apply_counterterm(state: FieldState, gamma_bar: float) -> FieldState:
    """Rescale read-out amplitudes by the calibrated damping inverse."""
    return state.with_z(state.z * counterterm_factor(gamma_bar, state.t))


def counterterm(trajectory, gamma_bar: float) -> list[FieldState]:
    """Apply the damping inverse to every snapshot, using its own timestamp."""
    return [apply_counterterm(state, gamma_bar) for state in trajectory]


def richardson_weights(gammas) -> np.ndarray:
    """Lagrange interpolation weights evaluated at gamma = 0.

    w_i = prod_{j != i} gamma_j / (gamma_j - gamma_i); the weighted sum of
    samples at the given rates is the unique degree-(n-1) polynomial value
    at zero, so polynomial gamma-dependence up to that degree cancels.
    """
    g = np.asarray(gammas, dtype=np.float64).reshape(-1)
    if g.size < 2:
        raise ValueError("need at least two rates to extrapolate")
    if np.unique(g).size != g.size:
        raise ValueError("rates must be distinct")
    if np.any(g <= 0):
        raise ValueError("rates must be positive (gamma = 0 is the target)")
    w = np.ones_like(g)
    for i in range(g.size):
        for j in range(g.size):
            if j != i:
                w[i] *= g[j] / (g[j] - g[i])
    return w


def richardson_extrapolate(gammas, values, order: int | None = None):
    """Extrapolate gamma-indexed samples to gamma = 0.

    values has the rates on its leading axis.  With order = n-1 (or None)
    the Lagrange weights are used directly; a lower order fits a polynomial
    of that degree by least squares and returns its value at zero.
    """
    g = np.asarray(gammas, dtype=np.float64).reshape(-1)
    vals = np.asarray(values)
    if vals.shape[0] != g.size:
        raise ValueError("values leading axis must match the number of rates")
    if order is None:
        order = g.size - 1
    if not 1 <= order <= g.size - 1:
        raise ValueError(f"order must be in [1, {g.size - 1}], got {order}")
    if order == g.size - 1:
        w = richardson_weights(g)
        return np.tensordot(w, vals, axes=(0, 0))
    flat = vals.reshape(g.size, -1)
    coeffs = np.polyfit(g, flat, deg=order)
    out = coeffs[-1]
    return out.reshape(vals.shape[1:]) if vals.ndim > 1 else complex(out[0])


@dataclass(frozen=True)
class NoiseRow:
    """One mitigation-table entry at a single (gamma, t)."""

    gamma: float
    gamma_bar: float
    t: float
    l2_error_raw: float
    l2_error_counterterm: float
    l2_error_richardson: float


def l2_error(z, z_ref) -> float:
    """Euclidean distance between two amplitude snapshots."""
    z = np.asarray(z, dtype=np.complex128).reshape(-1)
    z_ref = np.asarray(z_ref, dtype=np.complex128).reshape(-1)
    return float(np.linalg.norm(z - z_ref))


def mitigation_table(reference, noisy_trajectories: dict[float, list],
                     calibration: float = 1.0,
                     order: int | None = None) -> list[NoiseRow]:
    """Raw / counterterm / Richardson errors against a noiseless reference.

    reference and each rate's trajectory are snapshot lists with matching
    timestamps.  Every run is corrected with its own calibrated rate
    gamma_bar = calibration * gamma (calibration = 1 is perfect knowledge);
    the Richardson column extrapolates the corrected amplitudes over the
    strictly positive rates at each time and is repeated on every row for
    that time.  Rows are ordered by rate, then time.
    """
    if not noisy_trajectories:
        raise ValueError("need at least one noisy run")
    ref = list(reference)
    gammas = sorted(noisy_trajectories)
    trajs = {}
    for gm in gammas:
        traj = list(noisy_trajectories[gm])
        if len(traj) != len(ref):
            raise ValueError(f"run at rate {gm} has {len(traj)} snapshots, reference {len(ref)}")
        for st, rf in zip(traj, ref):
            if abs(st.t - rf.t) > 1e-9 * max(1.0, abs(rf.t)):
                raise ValueError(f"run at rate {gm} sampled t={st.t}, reference t={rf.t}")
        trajs[gm] = traj

    corrected = {gm: counterterm(trajs[gm], calibration * gm) for gm in gammas}
    pos = [gm for gm in gammas if gm > 0]
    extrap_err = []
    for k, rf in enumerate(ref):
        if len(pos) >= 2:
            stack = np.stack([corrected[gm][k].z for gm in pos])
            z_ext = richardson_extrapolate(pos, stack, order=order)
            extrap_err.append(l2_error(z_ext, rf.z))
        else:
            extrap_err.append(float("nan"))

    rows = []
    for gm in gammas:
        for k, rf in enumerate(ref):
            rows.append(NoiseRow(
                gamma=gm,
                gamma_bar=calibration * gm,
                t=rf.t,
                l2_error_raw=l2_error(trajs[gm][k].z, rf.z),
                l2_error_counterterm=l2_error(corrected[gm][k].z, rf.z),
                l2_error_richardson=extrap_err[k],
            ))
    return rows
