"""Operator-level property checks for the discrete discounted semigroup."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grid import GridField, GridSpec, interpolate
from .model import LagrangianModel
from .solver import (SolverConfig, backward_step, forward_solution, ground_state, lipschitz_bound,
                     max_residual, observed_speed, raw_step, residual, weights)


@dataclass
class PropertyResult:
    name: str
    passed: bool
    measured: float
    threshold: float
    details: dict = field(default_factory=dict)

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"{self.name:<14} {tag}  measured={self.measured:.4g}  threshold={self.threshold:.4g}"


def random_smooth_field(grid: GridSpec, rng: np.random.Generator, modes: int = 3,
                        lipschitz: float | None = 1.0) -> np.ndarray:
    """Random trigonometric polynomial with coefficients decaying like 1/k^2.

    The result is rescaled so its discrete Lipschitz constant equals
    ``lipschitz`` (pass None to keep the raw coefficients).
    """
    X = grid.points()
    out = np.zeros(grid.shape)
    ks = range(1, modes + 1)
    if grid.dim == 1:
        for k in ks:
            a = rng.uniform(-1, 1) / k ** 2
            out += a * np.cos(2 * math.pi * k * X[..., 0] + rng.uniform(0, 2 * math.pi))
    else:
        for k1 in range(-modes, modes + 1):
            for k2 in range(0, modes + 1):
                kk = k1 * k1 + k2 * k2
                if kk == 0 or kk > modes * modes:
                    continue
                a = rng.uniform(-1, 1) / kk
                out += a * np.cos(2 * math.pi * (k1 * X[..., 0] + k2 * X[..., 1])
                                        + rng.uniform(0, 2 * math.pi))
    if lipschitz is not None:
        lip = GridField(grid, out).lipschitz()
        if lip > 0:
            out *= lipschitz / lip
    return out


def _field(cfg: SolverConfig, values) -> GridField:
    return GridField(cfg.grid, values, {"lam": cfg.lam, "c": cfg.c})


def semigroup_margin(cfg: SolverConfig, model: LagrangianModel, rng, trials: int = 5) -> float:
    """max over random fields of |T_dt T_dt phi - T_{2 dt} phi|."""
    worst = 0.0
    double = cfg.with_(dt=2 * cfg.dt, v_max=min(cfg.v_max, 0.5 / (2 * cfg.dt)))
    for _ in range(trials):
        phi = _field(cfg, random_smooth_field(cfg.grid, rng))
        two = backward_step(backward_step(phi, cfg, model), cfg, model)
        one = backward_step(phi, double, model)
        worst = max(worst, float(np.max(np.abs(two.values - one.values))))
    return worst


def check_semigroup(cfg, model, rng) -> PropertyResult:
    m = semigroup_margin(cfg, model, rng)
    thr = 20 * cfg.grid.dx * cfg.dt
    return PropertyResult("semigroup", m <= thr, m, thr)


def check_nonexpansive(cfg, model, rng, pairs: int = 50) -> PropertyResult:
    """||T a - T b|| <= e^{lam dt} ||a - b|| + 1e-12 on random pairs."""
    A, W, _ = weights(cfg.lam, cfg.dt)
    worst = -np.inf
    for _ in range(pairs):
        a = random_smooth_field(cfg.grid, rng)
        b = a + 0.3 * random_smooth_field(cfg.grid, rng, modes=6) + rng.normal(0, 0.05, cfg.grid.shape)
        ta, _ = raw_step(a, A, W, cfg, model)
        tb, _ = raw_step(b, A, W, cfg, model)
        excess = float(np.max(np.abs(ta - tb))) - A * float(np.max(np.abs(a - b)))
        worst = max(worst, excess)
    return PropertyResult("nonexpansive", worst <= 1e-12, worst, 1e-12)


def check_monotone(cfg, model, rng, pairs: int = 50) -> PropertyResult:
    """a <= b pointwise implies T a <= T b pointwise."""
    A, W, _ = weights(cfg.lam, cfg.dt)
    worst = -np.inf
    for _ in range(pairs):
        a = random_smooth_field(cfg.grid, rng)
        b = a + np.abs(rng.normal(0, 0.1, cfg.grid.shape)) * (rng.random(cfg.grid.shape) < 0.5)
        ta, _ = raw_step(a, A, W, cfg, model)
        tb, _ = raw_step(b, A, W, cfg, model)
        worst = max(worst, float(np.max(ta - tb)))
    return PropertyResult("monotone", worst <= 1e-12, worst, 1e-12)


def check_lipschitz(cfg, model, rng, lams=(0.1, 0.5, 1.0)) -> PropertyResult:
    """Discrete Lipschitz constant after one unit of time is at most kappa."""
    worst_ratio, info = 0.0, {}
    steps = int(math.ceil(1.0 / cfg.dt))
    for lam in lams:
        sub = cfg.with_(lam=lam)
        phi = _field(sub, random_smooth_field(cfg.grid, rng))
        for _ in range(steps):
            phi = backward_step(phi, sub, model)
        alpha0 = observed_speed(phi)
        kappa = lipschitz_bound(model, alpha0)
        lip = phi.lipschitz()
        info[lam] = {"lipschitz": lip, "kappa": kappa, "alpha0": alpha0}
        worst_ratio = max(worst_ratio, lip / kappa)
    return PropertyResult("lipschitz", worst_ratio <= 1.0, worst_ratio, 1.0, info)


def check_fixed_point(cfg, model, tol: float = 0.1) -> PropertyResult:
    """The ground state (a fixed point of the step) has a small viscosity residual."""
    up = forward_solution(cfg, model)
    um = ground_state(up, cfg, model)
    r = max_residual(residual(um, cfg, model))
    return PropertyResult("fixed-point", r <= tol, r, tol, {"iterations": um.meta["iterations"]})


def domination_gap(u: GridField, cfg: SolverConfig, model: LagrangianModel, rng,
                   curves: int = 100, substeps: int = 64, speed: float = 2.0) -> float:
    """max over random straight curves on [0, 1] of
    e^{-lam} u(g(1)) - u(g(0)) - int_0^1 e^{-lam s} (L + c) ds (trapezoid rule)."""
    d = cfg.grid.dim
    s = np.linspace(0.0, 1.0, substeps + 1)
    wts = np.full(substeps + 1, 1.0 / substeps)
    wts[[0, -1]] *= 0.5
    worst = -np.inf
    for _ in range(curves):
        x0 = rng.random(d)
        v = rng.uniform(-speed, speed, d)
        path = x0[None, :] + s[:, None] * v[None, :]
        integrand = np.exp(-cfg.lam * s) * (model.L(np.mod(path, 1.0), np.broadcast_to(v, path.shape)) + cfg.c)
        action = float(wts @ integrand)
        lhs = math.exp(-cfg.lam) * float(interpolate(u.values, path[-1])) - float(interpolate(u.values, path[0]))
        worst = max(worst, lhs - action)
    return worst


def check_domination(cfg, model, rng, u: GridField | None = None) -> PropertyResult:
    if u is None:
        u = ground_state(forward_solution(cfg, model), cfg, model)
    gap = domination_gap(u, cfg, model, rng)
    thr = 5 * cfg.grid.dx
    return PropertyResult("domination", gap <= thr, gap, thr)


def run_all(cfg: SolverConfig, model: LagrangianModel, seed: int = 42) -> list[PropertyResult]:
    rng = np.random.default_rng(seed)
    return [check_semigroup(cfg, model, rng), check_nonexpansive(cfg, model, rng),
            check_monotone(cfg, model, rng), check_lipschitz(cfg, model, rng),
            check_fixed_point(cfg, model), check_domination(cfg, model, rng)]
