"""Shot-noise emulation of amplitude readout.

Each grid point draws n i.i.d. Gaussians around the real part of its mean
amplitude with the modeled theory variance, then reports the unbiased
(n - 1 denominator) sample variance.  Streams are keyed by (seed, point
index) through numpy's SeedSequence, so per-point sampling is reproducible
and order-independent.  The relative-error envelope for the variance
estimate is sqrt(2 / (n - 1)).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import FieldState


@dataclass(frozen=True)
class ShotStats:
    """Sampled moments against the modeled variance for one readout time."""

    n_shots: int
    sample_mean: np.ndarray
    sample_var: np.ndarray
    var_th: np.ndarray
    rel_bias: float
    rel_l2: float
    envelope: float


@dataclass(frozen=True)
class StatsRow:
    t: float
    var_th_mean: float
    var_em_mean: float
    rel_bias: float
    rel_l2: float


def _seed_entropy(seed) -> tuple[int, ...]:
    if isinstance(seed, (tuple, list)):
        return tuple(int(s) for s in seed)
    return (int(seed),)


def _rel_scalar(num: float, den: float) -> float:
    if den == 0.0:
        return 0.0 if num == 0.0 else np.inf
    return num / den


def sample_readout(mean, var_th, n_shots: int, seed) -> ShotStats:
    """Draw per-point Gaussian shots and compare moments with the model."""
    mean = np.asarray(mean, dtype=np.float64).reshape(-1)
    var_th = np.asarray(var_th, dtype=np.float64)
    if var_th.ndim == 0:
        var_th = np.full(mean.size, float(var_th))
    var_th = var_th.reshape(-1)
    if var_th.size != mean.size:
        raise ValueError("var_th does not match the mean field layout")
    if np.any(var_th < 0):
        raise ValueError("theory variances must be nonnegative")
    if n_shots < 2:
        raise ValueError("the unbiased variance estimate needs n_shots >= 2")

    base = _seed_entropy(seed)
    sample_mean = np.empty(mean.size)
    sample_var = np.empty(mean.size)
    for k in range(mean.size):
        rng = np.random.default_rng(base + (k,))
        shots = rng.normal(mean[k], np.sqrt(var_th[k]), n_shots)
        sample_mean[k] = shots.mean()
        sample_var[k] = shots.var(ddof=1)

    rel_bias = _rel_scalar(float(sample_var.mean() - var_th.mean()), float(var_th.mean()))
    rel_l2 = _rel_scalar(float(np.linalg.norm(sample_var - var_th)),
                         float(np.linalg.norm(var_th)))
    return ShotStats(n_shots=n_shots, sample_mean=sample_mean, sample_var=sample_var,
                     var_th=var_th, rel_bias=rel_bias, rel_l2=rel_l2,
                     envelope=float(np.sqrt(2.0 / (n_shots - 1))))


def stats_table(trajectory, n_shots: int, seed, var_model=None,
                times=None) -> list[StatsRow]:
    """Sampled-vs-theory variance rows across a trajectory of snapshots.

    var_model selects the theory variance per snapshot: None propagates the
    state's own variance, a float is a constant model, and a callable maps
    the state to an array.  Readout samples the real part of z.
    """
    states = [item[0] if isinstance(item, tuple) else item for item in trajectory]
    if times is not None:
        wanted = list(times)
        picked = []
        for tw in wanted:
            match = [s for s in states if abs(s.t - tw) <= 1e-9 * max(1.0, abs(tw))]
            if not match:
                raise ValueError(f"no snapshot at requested time {tw}")
            picked.append(match[0])
        states = picked
    base = _seed_entropy(seed)
    rows = []
    for k, state in enumerate(states):
        if var_model is None:
            var_th = state.var
        elif callable(var_model):
            var_th = np.asarray(var_model(state), dtype=np.float64)
        else:
            var_th = np.full(state.z.size, float(var_model))
        stats = sample_readout(state.z.real, var_th, n_shots, base + (k,))
        rows.append(StatsRow(t=state.t, var_th_mean=float(stats.var_th.mean()),
                             var_em_mean=float(stats.sample_var.mean()),
                             rel_bias=stats.rel_bias, rel_l2=stats.rel_l2))
    return rows
