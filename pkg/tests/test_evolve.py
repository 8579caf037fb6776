import math

import numpy as np
import pytest

from cvpde.evolve import (DivergenceError, RunConfig, euler_step, run,
                          step_controller, trotter2_step, variance_step)
from cvpde.grid import Boundary, GridSpec, make_field
from cvpde.rhs import BurgersRhs, LinearRhs


def _grid1(n=8, dx=0.25, boundary=None):
    return GridSpec(extents=(n,), spacing=(dx,), boundary=boundary or Boundary.periodic())


def _decay_rhs():
    return LinearRhs(-np.eye(3))


def test_euler_step_is_linear_update():
    grid = _grid1(3)
    state = make_field(grid, [1.0, 2.0, -1.0], var=0.5, t=0.3)
    F = np.array([0.5, -1.0, 2.0])
    out = euler_step(state, F, 0.1)
    np.testing.assert_allclose(out.z, [1.05, 1.9, -0.8], atol=1e-15)
    assert out.t == 0.4
    np.testing.assert_allclose(out.var, 0.5)  # variance advances separately
    with pytest.raises(ValueError):
        euler_step(state, F, 0.0)
    with pytest.raises(ValueError):
        euler_step(state, F[:2], 0.1)


def test_trotter2_scalar_decay_example():
    """dz/dt = -z from z=1: one dt=0.1 step gives 1 - 0.1 + 0.01/2 = 0.905."""
    grid = _grid1(3, dx=1.0)
    state = make_field(grid, np.ones(3))
    out = trotter2_step(state, _decay_rhs(), 0.1)
    np.testing.assert_allclose(out.z, 0.905, rtol=0, atol=1e-16)
    # one euler step of the same system gives 0.9 exactly
    out1 = euler_step(state, _decay_rhs()(state), 0.1)
    np.testing.assert_allclose(out1.z, 0.9, rtol=0, atol=1e-16)


def test_trotter2_minus_euler_is_half_dtsq_jacobian_term():
    rng = np.random.default_rng(0)
    grid = _grid1(16, dx=0.2)
    z = rng.normal(size=16) + 1j * rng.normal(size=16)
    state = make_field(grid, z)
    rhs = BurgersRhs(re=4.0)
    dt = 0.05
    F = rhs(state)
    e1 = euler_step(state, F, dt)
    t2 = trotter2_step(state, rhs, dt)
    JF = rhs.jacobian_apply(state, F)
    np.testing.assert_allclose(t2.z - e1.z, 0.5 * dt * dt * JF, atol=1e-15)


def test_variance_step_factor_and_clamp():
    var = np.array([1.0, 2.0, 0.0])
    out, clamped = variance_step(var, sigma_real=0.5, dt=0.1)
    np.testing.assert_allclose(out, 0.9 * var)
    assert clamped == 0
    # a factor below zero clamps every positive entry
    out2, clamped2 = variance_step(var, sigma_real=6.0, dt=1.0)
    np.testing.assert_allclose(out2, 0.0)
    assert clamped2 == 2
    # negative sigma grows the variance
    out3, _ = variance_step(np.array([1.0]), sigma_real=-0.5, dt=0.1)
    np.testing.assert_allclose(out3, 1.1)
    with pytest.raises(ValueError):
        variance_step(np.array([-1.0]), 0.0, 0.1)


def test_step_controller_bound_and_sentinel():
    assert step_controller(0.5 + 2.0j, epsilon=0.05) == 0.05
    assert step_controller(0.5, epsilon=0.02) == 0.02
    assert step_controller(-1.0, epsilon=0.05) == math.inf
    assert step_controller(0.0, epsilon=0.05) == math.inf
    with pytest.raises(ValueError):
        step_controller(1.0, epsilon=0.0)


def test_run_config_validation():
    with pytest.raises(ValueError):
        RunConfig(dt=0.0, t_end=1.0)
    with pytest.raises(ValueError):
        RunConfig(dt=0.1, t_end=-1.0)
    with pytest.raises(ValueError):
        RunConfig(dt=0.1, t_end=1.0, scheme="rk4")
    with pytest.raises(ValueError):
        RunConfig(dt=0.1, t_end=1.0, controller="adaptive")
    with pytest.raises(ValueError):
        RunConfig(dt=0.1, t_end=1.0, epsilon=0.0)


def test_run_hits_save_times_exactly():
    grid = _grid1(6, dx=1.0)
    state = make_field(grid, 0.1 * np.ones(6), var=1.0)
    cfg = RunConfig(dt=0.01, t_end=0.1, save_times=(0.0, 0.035, 0.1))
    res = run(state, LinearRhs(-np.eye(6)), cfg)
    ts = [snap.t for snap, _ in res.snapshots]
    np.testing.assert_allclose(ts, [0.0, 0.035, 0.1], atol=1e-12)
    # 0.035 is off the dt lattice; the step was shortened to land on it
    assert any(abs(s.dt_used - 0.005) < 1e-12 for s in res.steps)
    assert res.final.t == pytest.approx(0.1, abs=1e-12)


def test_run_default_saves_are_endpoints():
    grid = _grid1(4, dx=1.0)
    state = make_field(grid, np.ones(4))
    res = run(state, LinearRhs(-np.eye(4)), RunConfig(dt=0.05, t_end=0.2))
    ts = [snap.t for snap, _ in res.snapshots]
    np.testing.assert_allclose(ts, [0.0, 0.2], atol=1e-12)


def test_run_rejects_out_of_window_saves():
    grid = _grid1(4, dx=1.0)
    state = make_field(grid, np.ones(4))
    with pytest.raises(ValueError):
        run(state, LinearRhs(-np.eye(4)), RunConfig(dt=0.05, t_end=0.2, save_times=(0.5,)))


def test_run_reports_sigma_pa_and_cumulative():
    grid = _grid1(4, dx=1.0)
    z0 = 0.5 * np.ones(4)
    state = make_field(grid, z0, var=1.0)
    dt = 0.1
    res = run(state, LinearRhs(np.eye(4)), RunConfig(dt=dt, t_end=0.2))
    # Sigma = sum conj(z) z = |z|^2 for F = z
    s0 = float(np.sum(np.abs(z0) ** 2))
    first = res.steps[0]
    assert first.sigma_real == pytest.approx(s0, rel=1e-14)
    assert first.p_a == pytest.approx(1.0 - 2 * dt * s0, rel=1e-14)
    cum = np.prod([s.p_a for s in res.steps])
    assert res.cum_p_a == pytest.approx(cum, rel=1e-14)
    # variance follows the per-step factors
    factors = np.prod([1.0 - 2 * s.dt_used * s.sigma_real for s in res.steps])
    np.testing.assert_allclose(res.final.var, factors, rtol=1e-13)


def test_run_clips_p_a_and_counts_events():
    grid = _grid1(4, dx=1.0)
    # strongly expanding flow: Sigma > 0 large, p_a would go negative
    state = make_field(grid, 2.0 * np.ones(4), var=1.0)
    res = run(state, LinearRhs(10 * np.eye(4)), RunConfig(dt=0.01, t_end=0.05))
    assert res.p_a_clip_events > 0
    assert all(0.0 <= s.p_a <= 1.0 for s in res.steps)
    assert res.var_clamp_events > 0
    assert np.all(res.final.var == 0.0)


def test_run_pa_bound_controller_caps_dt():
    grid = _grid1(4, dx=1.0)
    z0 = np.ones(4)
    state = make_field(grid, z0)
    eps = 0.05
    cfg = RunConfig(dt=0.5, t_end=0.3, controller="pa-bound", epsilon=eps)
    res = run(state, LinearRhs(np.eye(4)), cfg)
    for s in res.steps:
        assert s.dt_used <= s.dt_max_allowed + 1e-15
        if s.sigma_real > 0:
            assert s.dt_max_allowed == pytest.approx(eps / (2 * s.sigma_real), rel=1e-14)
    # every p_a stays above 1 - eps by the controller bound
    assert all(s.p_a >= 1.0 - eps - 1e-12 for s in res.steps)


def test_run_controller_off_reports_unconstrained():
    grid = _grid1(4, dx=1.0)
    state = make_field(grid, np.ones(4))
    res = run(state, LinearRhs(-np.eye(4)), RunConfig(dt=0.1, t_end=0.2))
    assert all(s.dt_max_allowed == math.inf for s in res.steps)


def test_run_pins_dirichlet_edges():
    grid = _grid1(8, dx=0.1, boundary=Boundary.dirichlet(0.25))
    z0 = np.full(8, 0.25, dtype=np.complex128)
    z0[3] = 1.0
    state = make_field(grid, z0)
    res = run(state, BurgersRhs(re=2.0), RunConfig(dt=1e-4, t_end=0.01))
    assert res.final.z[0] == 0.25
    assert res.final.z[-1] == 0.25
    assert res.final.z[3] != 1.0


def test_run_divergence_raises_with_location():
    grid = _grid1(8, dx=0.05)
    rng = np.random.default_rng(1)
    state = make_field(grid, 5.0 * rng.normal(size=8))
    with np.errstate(over="ignore", invalid="ignore"):
        with pytest.raises(DivergenceError) as err:
            run(state, BurgersRhs(re=0.1), RunConfig(dt=10.0, t_end=100.0))
    assert err.value.index >= 0
    assert err.value.t > 0
