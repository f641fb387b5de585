import os
import subprocess
import sys

import numpy as np
import pytest

from weakkam import kernels
from weakkam.model import build_model
from weakkam.solver import make_config, raw_step, weights

from conftest import PENDULUM, mech


@pytest.mark.parametrize("dim,n", [(1, 64), (1, 256), (2, 16), (2, 32)])
@pytest.mark.parametrize("reverse", [False, True])
def test_backends_agree_bitwise(rng, dim, n, reverse):
    spec = {"family": "mechanical-with-drift", "dim": dim,
            "potential": {"id": "cos_sum" if dim == 2 else "cos", "k": 1, "amp": 1.0},
            "drift": {"id": "sin", "amp": 0.3}}
    model = build_model(spec)
    cfg = make_config(model, n, lam=0.2, c=1.0)
    A, W, _ = weights(cfg.lam, cfg.dt)
    f = rng.normal(size=cfg.grid.shape).cumsum(axis=0) * cfg.grid.dx
    a, va = raw_step(f, A, W, cfg, model, reverse=reverse, backend="numba")
    b, vb = raw_step(f, A, W, cfg, model, reverse=reverse, backend="numpy")
    assert np.array_equal(a, b)
    assert np.array_equal(va, vb)


def test_stacked_rows_match_single(rng):
    model = mech(PENDULUM)
    cfg = make_config(model, 64, lam=0.0, c=1.0)
    F = rng.normal(size=(3, 64))
    out, vel = raw_step(F, 1.0, cfg.dt, cfg, model)
    for r in range(3):
        o, v = raw_step(F[r], 1.0, cfg.dt, cfg, model)
        assert np.array_equal(out[r], o)
        assert np.array_equal(vel[r], v)


def test_exact_minimum_beats_dense_lattice(rng):
    """The cellwise closed-form minimum is never worse than brute force."""
    model = mech(PENDULUM)
    cfg = make_config(model, 32, lam=0.1, c=1.0)
    A, W, _ = weights(cfg.lam, cfg.dt)
    f = np.sin(2 * np.pi * cfg.grid.axis()) + 0.1 * rng.normal(size=32)
    out, vel = raw_step(f, A, W, cfg, model)
    from weakkam.grid import interpolate
    vs = np.linspace(-cfg.v_max, cfg.v_max, 40001)
    for i, x in enumerate(cfg.grid.axis()):
        cost = A * interpolate(f, x - vs * cfg.dt) + W * (model.L(np.full((vs.size, 1), x), vs[:, None]) + cfg.c)
        assert out[i] <= cost.min() + 1e-12
        assert out[i] >= cost.min() - 1e-6
        assert abs(vel[i, 0]) <= cfg.v_max


def test_velocities_within_box(rng):
    model = mech({"id": "cos_sum", "k": 1, "amp": 1.0}, dim=2)
    cfg = make_config(model, 16, lam=0.1, c=2.0)
    A, W, _ = weights(cfg.lam, cfg.dt)
    _, vel = raw_step(rng.normal(size=(16, 16)) * 5, A, W, cfg, model)
    assert np.all(np.abs(vel) <= cfg.v_max + 1e-12)


def test_backend_flag_selects_numpy():
    env = dict(os.environ, WEAKKAM_BACKEND="numpy")
    out = subprocess.run([sys.executable, "-c", "from weakkam import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
    assert kernels.BACKEND == os.environ.get("WEAKKAM_BACKEND", "numba")


def test_backend_flag_rejects_unknown():
    env = dict(os.environ, WEAKKAM_BACKEND="cuda")
    out = subprocess.run([sys.executable, "-c", "import weakkam.kernels"], env=env,
                         capture_output=True, text=True)
    assert out.returncode != 0
    assert "WEAKKAM_BACKEND" in out.stderr


def test_set_threads_accepts_counts():
    kernels.set_threads(1)
    kernels.set_threads(10 ** 6)
    kernels.set_threads(None)
