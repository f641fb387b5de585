import numpy as np
import pytest

from weakkam.model import build_model
from weakkam.solver import make_config


def mech(pot, dim=1, **extra):
    spec = {"family": "mechanical", "dim": dim, "potential": pot}
    spec.update(extra)
    return build_model(spec)


PENDULUM = {"id": "cos", "k": 1, "amp": 1.0}
TWO_BUMP = {"id": "two_bump", "amp": 1.0}
ZERO = {"id": "zero"}


def analytic_u0(x):
    """Weak KAM solution of the pendulum vanishing at the potential maximum."""
    x = np.asarray(x)
    return (2 / np.pi) * (1 - np.cos(np.pi * np.minimum(x, 1 - x)))


@pytest.fixture(scope="session")
def pendulum():
    return mech(PENDULUM)


@pytest.fixture(scope="session")
def two_bump():
    return mech(TWO_BUMP)


@pytest.fixture(scope="session")
def free():
    return mech(ZERO)


@pytest.fixture(scope="session")
def pend_cfg(pendulum):
    return make_config(pendulum, 256, lam=0.1, c=1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture(scope="session")
def pendulum_fields(pendulum):
    """(u_plus, u_minus, cfg) per discount on the n=256 pendulum, computed once."""
    from weakkam.solver import forward_solution, ground_state
    cache = {}

    def get(lam, n=256):
        key = (lam, n)
        if key not in cache:
            cfg = make_config(pendulum, n, lam=lam, c=1.0)
            up = forward_solution(cfg, pendulum)
            cache[key] = (up, ground_state(up, cfg, pendulum), cfg)
        return cache[key]

    return get


SCHEDULE = [0.4, 0.2, 0.1, 0.05, 0.025]


def _timed_sweep(model, n=256):
    import time
    from weakkam.limits import analyse_limit, discount_sweep
    t0 = time.perf_counter()
    cfg = make_config(model, n)
    sw = discount_sweep(SCHEDULE, cfg, model)
    la = analyse_limit(sw, cfg, model, 0.05)
    return sw, la, cfg, time.perf_counter() - t0


@pytest.fixture(scope="session")
def pendulum_sweep(pendulum):
    """(sweep, analysis, cfg, seconds) for the full-schedule n=256 pendulum run."""
    return _timed_sweep(pendulum)


@pytest.fixture(scope="session")
def two_bump_sweep(two_bump):
    return _timed_sweep(two_bump)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
