import math

import numpy as np
import pytest

from weakkam.grid import GridField
from weakkam.solver import (ConvergenceError, SolverConfig, backward_step, critical_value,
                            forward_solution, ground_state, ground_tolerance, kink_mask,
                            lipschitz_bound, make_config, max_residual, observed_speed, residual,
                            weights)
from weakkam.grid import GridSpec

from conftest import analytic_u0, mech


def test_weights():
    A, W, Wc = weights(0.3, 0.01)
    assert A == pytest.approx(math.exp(0.003))
    assert W == pytest.approx((math.exp(0.003) - 1) / 0.3, rel=1e-14)
    assert Wc == pytest.approx((1 - math.exp(-0.003)) / 0.3, rel=1e-14)
    assert weights(0.0, 0.01) == (1.0, 0.01, 0.01)


def test_config_rejects_large_steps():
    with pytest.raises(ValueError):
        SolverConfig(GridSpec(1, 64), dt=0.1, v_max=10.0)
    with pytest.raises(ValueError):
        SolverConfig(GridSpec(1, 64), dt=0.01, v_max=10.0, lam=-1.0)


def test_iteration_cap():
    cfg = SolverConfig(GridSpec(1, 64), dt=0.01, v_max=10.0, lam=0.5)
    assert cfg.iteration_cap == math.ceil(20 / (0.5 * 0.01))


def test_backward_step_free_fixed_points(free):
    for lam in (0.0, 0.3):
        cfg = make_config(free, 64, lam=lam)
        zero = GridField(cfg.grid, np.zeros(64))
        assert np.array_equal(backward_step(zero, cfg, free).values, np.zeros(64))
        K = GridField(cfg.grid, np.full(64, 2.5))
        out = backward_step(K, cfg, free).values
        assert np.allclose(out, 2.5 * math.exp(lam * cfg.dt), rtol=0, atol=1e-14)


def test_backward_step_does_not_drop_below_forward_solution(pendulum_fields, pendulum):
    up, _, cfg = pendulum_fields(0.2)
    out = backward_step(up, cfg, pendulum)
    assert np.all(out.values >= up.values - 10 * cfg.grid.dx)


def test_forward_solution_free(free):
    cfg = make_config(free, 64, lam=0.5)
    up = forward_solution(cfg, free)
    assert np.max(np.abs(up.values)) < 1e-12
    um = ground_state(up, cfg, free)
    assert np.max(np.abs(um.values)) < 1e-12


def test_pendulum_fields_at_the_maximum(pendulum_fields):
    up, um, cfg = pendulum_fields(0.1)
    dx = cfg.grid.dx
    assert abs(up.values[0]) <= 2 * dx
    assert abs(um.values[0]) <= 2 * dx
    assert np.all(um.values >= up.values - 2 * dx)
    assert up.meta["converged"] and um.meta["converged"]


def test_ground_state_approaches_weak_kam_solution(pendulum_fields):
    x = np.arange(256) / 256
    errs = [np.max(np.abs(pendulum_fields(lam)[1].values - analytic_u0(x))) for lam in (0.4, 0.2, 0.1)]
    assert errs[0] > errs[1] > errs[2]


def test_forward_non_convergence_keeps_partial(pendulum):
    cfg = make_config(pendulum, 64, lam=0.1, c=1.0, k_max=5)
    with pytest.raises(ConvergenceError) as info:
        forward_solution(cfg, pendulum)
    assert info.value.partial is not None
    assert info.value.partial.finite


def test_ground_state_reports_unconverged(pendulum_fields, pendulum):
    up, _, cfg = pendulum_fields(0.1)
    um = ground_state(up, cfg.with_(k_max=3), pendulum)
    assert um.meta["converged"] is False
    assert um.meta["iterations"] == 3


def test_ground_tolerance_scaling():
    assert ground_tolerance(0.1) == pytest.approx(1e-6 * 11)
    assert ground_tolerance(0.1, 2 ** -9) == pytest.approx(0.5e-6 * 11)
    assert ground_tolerance(0.1, 2 ** -6) == pytest.approx(1e-6 * 11)


def test_critical_value_free(free):
    c = critical_value(free, make_config(free, 128)).value
    assert abs(c) <= 1e-3


@pytest.mark.parametrize("pot", ["pendulum", "two_bump"])
def test_critical_value_mechanical(pot, pendulum, two_bump):
    model = pendulum if pot == "pendulum" else two_bump
    crit = critical_value(model, make_config(model, 256))
    assert abs(crit.value - 1.0) <= 5e-3
    assert set(crit.per_lambda) == {0.1, 0.05, 0.025}


def test_critical_value_lp_hook(pendulum):
    crit = critical_value(pendulum, make_config(pendulum, 64), lp_check=True)
    assert abs(crit.lp_value + crit.value) <= 1e-2


def test_critical_value_schedule_validation(pendulum):
    with pytest.raises(ValueError):
        critical_value(pendulum, make_config(pendulum, 64), schedule=(0.1, 0.07, 0.01))


def test_residual_zero_for_exact_solution(free):
    cfg = make_config(free, 64, lam=0.3)
    res = residual(GridField(cfg.grid, np.zeros(64)), cfg, free)
    assert np.max(np.abs(res.values)) == 0.0


def test_residual_small_outside_kink(pendulum_fields, pendulum):
    _, um, cfg = pendulum_fields(0.1)
    res = residual(um, cfg, pendulum)
    mask = res.meta["kink_mask"]
    assert mask[128]  # the kink at x = 1/2
    assert max_residual(res) <= 0.1


def test_residual_shift(pendulum_fields, pendulum):
    _, um, cfg = pendulum_fields(0.1)
    r0 = residual(um, cfg, pendulum).values
    r1 = residual(um.with_values(um.values + 0.5), cfg, pendulum).values
    assert np.allclose(r1 - r0, -0.5 * cfg.lam, atol=1e-12)


def test_kink_mask_collar():
    x = np.arange(64) / 64
    u = np.abs(x - 0.5)
    m = kink_mask(u * 40, 1 / 64, collar=3)
    assert m[32] and m[29] and m[35] and not m[20]


def test_equi_lipschitz_over_schedule(pendulum_fields, pendulum):
    for lam in (0.4, 0.2, 0.1, 0.05):
        up, um, cfg = pendulum_fields(lam)
        kappa = lipschitz_bound(pendulum, observed_speed(um))
        assert um.lipschitz() <= kappa


def test_two_dim_ordering():
    model = mech({"id": "cos_sum", "k": 1, "amp": 1.0}, dim=2)
    cfg = make_config(model, 32, lam=0.4, c=2.0)
    up = forward_solution(cfg, model)
    um = ground_state(up, cfg, model)
    assert np.all(um.values >= up.values - 2 * cfg.grid.dx)
    assert abs(up.values[0, 0]) <= 2 * cfg.grid.dx


def test_two_bump_fields_symmetric(two_bump):
    cfg = make_config(two_bump, 128, lam=0.2, c=1.0)
    up = forward_solution(cfg, two_bump)
    assert np.allclose(up.values, np.roll(up.values, 64), atol=1e-9)
