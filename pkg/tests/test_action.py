import math

import numpy as np
import pytest

from weakkam.action import (BIG, ActionError, action_sweep, backtrack_minimizer,
                            discounted_action, el_flow, el_residual, energy, finite_action,
                            peierls_barrier, peierls_barriers, point_mass)
from weakkam.solver import make_config

from conftest import analytic_u0


@pytest.fixture(scope="module")
def free_cfg(free):
    return make_config(free, 128)


@pytest.fixture(scope="module")
def pend256(pendulum):
    return make_config(pendulum, 256, c=1.0)


def test_point_mass():
    from weakkam.grid import GridSpec
    F = point_mass(GridSpec(1, 16), [0, 5])
    assert F.shape == (2, 16)
    assert F[0, 0] == 0 and F[1, 5] == 0 and F[0, 5] == BIG


def test_free_action_examples(free, free_cfg):
    dx = free_cfg.grid.dx
    tab = finite_action(0.0, 1.0, free_cfg, free)
    assert abs(tab[1.0](0.0)) <= 2 * dx
    assert tab[1.0](0.5) == pytest.approx(0.125, abs=5 * dx)


def test_action_needs_one_step(free, free_cfg):
    with pytest.raises(ActionError):
        finite_action(0.0, free_cfg.dt / 2, free_cfg, free)


def test_pendulum_action_approaches_barrier(pendulum, pend256):
    tab = finite_action(0.0, 4.0, pend256, pendulum)
    assert tab[4.0](0.5) == pytest.approx(2 / math.pi, abs=0.05)


def test_table_export(tmp_path, free, free_cfg):
    tab = finite_action(0.0, 1.0, free_cfg, free, horizons=[0.5])
    tab.write_csv(tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "t,y1,h"
    assert len(lines) == 1 + 2 * 128


def test_discounted_action_examples(free, pendulum, free_cfg, pend256):
    dx = free_cfg.grid.dx
    assert abs(discounted_action(0.3, 0.3, 0.0, 1.0, 0.5, free_cfg, free)) <= 2 * dx
    assert abs(discounted_action(0.0, 0.0, 0.0, 2.0, 0.2, pend256, pendulum)) <= 2 * pend256.grid.dx
    with pytest.raises(ActionError):
        discounted_action(0.0, 0.0, 1.0, 1.0, 0.2, pend256, pendulum)


def test_discounted_matches_undiscounted_for_tiny_rate(pendulum, rng):
    cfg = make_config(pendulum, 64, c=1.0)
    for _ in range(20):
        x, y = rng.random(2)
        t = float(rng.integers(1, 5)) / 2
        h = finite_action(x, t, cfg, pendulum)[t](y)
        hl = discounted_action(x, y, 0.0, t, 1e-6, cfg, pendulum)
        assert hl == pytest.approx(h, abs=1e-3)


def test_free_barrier_vanishes(free, free_cfg):
    b = peierls_barrier(0.25, free_cfg, free)
    assert np.max(np.abs(b.values)) <= 5 * free_cfg.grid.dx


def test_pendulum_barrier(pendulum, pend256):
    b = peierls_barrier(0.0, pend256, pendulum)
    x = pend256.grid.axis()
    assert np.max(np.abs(b.values - analytic_u0(x))) <= 0.03
    assert abs(b.values[0]) <= 0.01
    assert not b.oscillates
    assert b.per_horizon.shape == (len(b.horizons), 256)


def test_backtrack_free_geodesic(free, free_cfg):
    tab = finite_action(0.0, 1.0, free_cfg, free)
    tr = backtrack_minimizer(tab, 0.5)
    v = tr.velocities[:, 0]
    core = v[len(v) // 10: -len(v) // 10]
    assert np.median(v) == pytest.approx(0.5, abs=0.02)
    assert np.max(np.abs(core - 0.5)) <= 0.05
    assert tr.consistency() <= 1e-9
    still = backtrack_minimizer(tab, 0.0)
    assert np.max(np.abs(still.velocities)) <= 1e-12


def test_backtrack_pendulum_separatrix(pendulum, pend256, tmp_path):
    tab = finite_action(0.0, 8.0, pend256, pendulum)
    tr = backtrack_minimizer(tab, 0.5)
    x, v = tr.positions[:, 0], tr.velocities[:, 0]
    # dwells at the maximum first
    assert np.max(np.abs((x[: len(x) // 2] + 0.5) % 1 - 0.5)) <= 0.02
    # critical-energy speed on the final traverse
    speed = np.sqrt(2 * (1 - np.cos(2 * np.pi * x)))
    tail = slice(3 * len(v) // 4, None)
    moving = np.abs(v[tail]) > 0.2
    assert np.max(np.abs(np.abs(v[tail])[moving] - speed[tail][moving])) <= 0.1
    tr.write_csv(tmp_path / "tr.csv")
    assert (tmp_path / "tr.csv").read_text().startswith("t,x1,v1")


def test_euler_lagrange_residual_of_minimisers(pendulum):
    res = []
    for n in (256, 512):
        cfg = make_config(pendulum, n, c=1.0)
        tr = backtrack_minimizer(finite_action(0.0, 8.0, cfg, pendulum), 0.5)
        res.append(el_residual(tr, pendulum, tau=0.05))
    assert res[0] <= 0.5
    assert res[1] < res[0]


def test_barrier_triangle_inequality_and_pseudometric(pendulum, rng):
    cfg = make_config(pendulum, 64, c=1.0)
    H = np.stack([b.values for b in peierls_barriers(range(64), cfg, pendulum)])
    tol = 10 * cfg.grid.dx
    x, y, z = rng.integers(0, 64, (3, 1000))
    assert np.all(H[x, y] <= H[x, z] + H[z, y] + tol)
    assert np.all(H + H.T >= -tol)


def test_action_subadditivity(pendulum, rng):
    cfg = make_config(pendulum, 64, c=1.0)
    snaps, _, _ = action_sweep(range(64), [1.0, 2.0, 3.0], cfg, pendulum)
    tol = 10 * cfg.grid.dx
    x, y, z = rng.integers(0, 64, (3, 1000))
    assert np.all(snaps[3.0][x, y] <= snaps[1.0][x, z] + snaps[2.0][z, y] + tol)
    assert np.all(np.isfinite(snaps[1.0])) and snaps[1.0].max() < BIG / 2


def test_el_flow_equilibrium(pendulum):
    tr = el_flow((0.0, 0.0), 0.1, 10.0, pendulum)
    assert np.max(np.abs(tr.velocities)) == 0.0
    assert np.max(np.abs(tr.positions)) == 0.0


def test_el_flow_free_wraps(free):
    tr = el_flow((0.0, 1.0), 0.0, 1.0, free)
    assert min(tr.positions[-1, 0], 1 - tr.positions[-1, 0]) <= 1e-12
    assert tr.velocities[-1, 0] == pytest.approx(1.0)


def test_energy_is_kinetic_plus_potential(pendulum):
    x, v = np.array([[0.3]]), np.array([[1.5]])
    assert energy(pendulum, x, v)[0] == pytest.approx(0.5 * 1.5 ** 2 + math.cos(2 * math.pi * 0.3))


def test_el_flow_step_count(pendulum):
    tr = el_flow((0.5, 2.0), 0.0, 2.0, pendulum, dt=0.05)
    assert len(tr) == 201
    with pytest.raises(ValueError):
        el_flow((0.5, 2.0), 0.0, 0.0, pendulum)


def test_drift_flow_conserves_energy():
    from weakkam.model import build_model
    m = build_model({"family": "mechanical-with-drift", "dim": 2,
                     "potential": {"id": "cos_sum", "k": 1, "amp": 1.0},
                     "drift": {"id": "sin", "amp": 0.3}})
    tr = el_flow(((0.1, 0.3), (0.4, -0.7)), 0.0, 2.0, m)
    E = energy(m, tr.positions, tr.velocities)
    assert np.max(np.abs(E - E[0])) <= 1e-6
