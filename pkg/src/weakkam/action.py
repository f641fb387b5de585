"""Finite-horizon and discounted action, Peierls barrier, and curves.

The action tables are built by dynamic programming with the same one-step
minimisation as the discounted solver, started from a point mass (zero at
the source node, ``BIG`` elsewhere).
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass

import numpy as np

from .grid import GridField, GridSpec, interpolate
from .model import LagrangianModel, as_torus_point
from .solver import SolverConfig, raw_step

log = logging.getLogger(__name__)

BIG = 1.0e6
BARRIER_HORIZON = 16


class ActionError(ValueError):
    pass


@dataclass
class ActionTable:
    """Action fields h^t(x, .) from one source node.

    ``policy[k]`` holds the minimising velocities used on the step that ends
    at time ``(k + 1) * dt`` (empty unless requested).
    """

    source: np.ndarray
    source_index: int
    horizons: list[float]
    fields: dict[float, GridField]
    dt: float
    lam: float = 0.0
    policy: np.ndarray | None = None
    reverse: bool = False

    def __getitem__(self, t: float) -> GridField:
        return self.fields[self._key(t)]

    def _key(self, t: float) -> float:
        for h in self.horizons:
            if abs(h - t) < 1e-9:
                return h
        raise KeyError(f"horizon {t} not in table {self.horizons}")

    def steps_for(self, t: float) -> int:
        return int(round(self._key(t) / self.dt))

    def write_csv(self, path) -> None:
        g = next(iter(self.fields.values())).grid
        pts = g.flat_points()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + ["y" + str(k + 1) for k in range(g.dim)] + ["h"])
            for t in self.horizons:
                vals = self.fields[t].values.ravel()
                for p, v in zip(pts, vals):
                    w.writerow([repr(t)] + [repr(float(a)) for a in p] + [repr(float(v))])


@dataclass
class Trajectory:
    """Sampled curve: times, positions on the torus and velocities."""

    times: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    lam: float = 0.0

    def __len__(self) -> int:
        return len(self.times)

    def consistency(self) -> float:
        """max |x_{k+1} - x_k - v_k dt| with wraparound."""
        if len(self) < 2:
            return 0.0
        dt = np.diff(self.times)[:, None]
        step = self.positions[1:] - self.positions[:-1] - self.velocities[:-1] * dt
        step = (step + 0.5) % 1.0 - 0.5
        return float(np.max(np.abs(step)))

    def write_csv(self, path) -> None:
        d = self.positions.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"x{k + 1}" for k in range(d)] + [f"v{k + 1}" for k in range(d)])
            for t, x, v in zip(self.times, self.positions, self.velocities):
                w.writerow([repr(float(t))] + [repr(float(a)) for a in x]
                           + [repr(float(a)) for a in v])


def point_mass(grid: GridSpec, nodes) -> np.ndarray:
    """Stack of initial fields: 0 at each given node, BIG elsewhere."""
    nodes = np.atleast_1d(np.asarray(nodes, dtype=np.int64))
    F = np.full((len(nodes), grid.size), BIG)
    F[np.arange(len(nodes)), nodes] = 0.0
    return F.reshape((len(nodes),) + grid.shape)


def _uniform_steps(t: float, dt: float) -> tuple[int, float]:
    n = int(math.ceil(t / dt - 1e-9))
    return n, t / n


def action_sweep(sources, horizons, cfg: SolverConfig, model: LagrangianModel,
                 keep_policy: bool = False, reverse: bool = False, step_dt: float | None = None):
    """Undiscounted DP from several source nodes at once.

    Returns ``(snapshots, policy, dt)`` with ``snapshots[t]`` of shape
    ``(S,) + grid.shape``.  The step is ``1 / ceil(1 / cfg.dt)`` so that
    integer horizons fall on step boundaries.
    """
    grid = cfg.grid
    horizons = sorted(float(t) for t in horizons)
    if step_dt is None:
        per_unit = int(math.ceil(1.0 / cfg.dt - 1e-9))
        step_dt = 1.0 / per_unit
    targets = {int(round(t / step_dt)): t for t in horizons}
    if any(abs(k * step_dt - t) > 1e-9 for k, t in targets.items()):
        raise ActionError("horizons must be multiples of the step")
    sub = cfg.with_(dt=step_dt, lam=0.0)
    F = point_mass(grid, sources)
    total = max(targets)
    policy = np.empty((total,) + F.shape + (grid.dim,)) if keep_policy else None
    snaps = {}
    for k in range(1, total + 1):
        F, vel = raw_step(F, 1.0, step_dt, sub, model, reverse=reverse)
        if keep_policy:
            policy[k - 1] = vel
        if k in targets:
            snaps[targets[k]] = F.copy()
    return snaps, policy, step_dt


def finite_action(x, t: float, cfg: SolverConfig, model: LagrangianModel,
                  horizons=None, keep_policy: bool = True) -> ActionTable:
    """h^t(x, .) with ``ceil(t / dt)`` uniform undiscounted steps.

    ``horizons`` optionally lists intermediate times to keep (each must be a
    multiple of the step ``t / ceil(t / dt)``).
    """
    if t < cfg.dt - 1e-12:
        raise ActionError(f"horizon {t} is shorter than one time step {cfg.dt}")
    grid = cfg.grid
    src = grid.node_of(x)
    n_steps, step = _uniform_steps(t, cfg.dt)
    hs = sorted(set([float(t)] + [float(s) for s in (horizons or [])]))
    snaps, policy, step = action_sweep([src], hs, cfg, model, keep_policy, step_dt=step)
    fields = {h: GridField(grid, snaps[h][0], {"t": h, "c": cfg.c, "source": src}) for h in hs}
    return ActionTable(grid.coords_of(src), src, hs, fields, step, 0.0,
                       None if policy is None else policy[:, 0])


def discounted_action(x, y, a: float, b: float, lam: float, cfg: SolverConfig,
                      model: LagrangianModel) -> float:
    """Discounted minimal action from ``x`` at time ``a`` to ``y`` at time ``b``.

    Step k spans ``[tau_k, tau_k + dt]`` and carries the exact weight
    ``(e^{-lam tau_k} - e^{-lam (tau_k + dt)}) / lam``.
    """
    if not a < b:
        raise ActionError(f"need a < b, got a={a}, b={b}")
    grid = cfg.grid
    n_steps, step = _uniform_steps(b - a, cfg.dt)
    sub = cfg.with_(dt=step, lam=0.0)
    F = point_mass(grid, [grid.node_of(x)])[0]
    for k in range(n_steps):
        tau = a + k * step
        if lam == 0.0:
            w = step
        else:
            w = math.exp(-lam * tau) * (-math.expm1(-lam * step)) / lam
        F, _ = raw_step(F, 1.0, w, sub, model)
    return float(interpolate(F, as_torus_point(y)))


@dataclass
class Barrier:
    """Peierls barrier surrogate h(x, .) with its per-horizon history."""

    field: GridField
    horizons: list[float]
    per_horizon: np.ndarray
    oscillation: float
    oscillates: bool

    @property
    def values(self) -> np.ndarray:
        return self.field.values


def barrier_from_snapshots(grid: GridSpec, snaps: dict, row: int, source: int,
                           c: float, reverse: bool = False) -> Barrier:
    hs = sorted(snaps)
    stack = np.stack([snaps[t][row] for t in hs])
    low = stack.min(axis=0)
    tail = stack[len(hs) // 2:]
    osc = float(np.max(tail.max(axis=0) - tail.min(axis=0)))
    fld = GridField(grid, low, {"source": source, "c": c, "kind": "barrier",
                                "reverse": reverse, "horizons": hs})
    return Barrier(fld, hs, stack, osc, osc > 5 * grid.dx)


def barrier_horizons(T: float = BARRIER_HORIZON) -> list[float]:
    lo = int(math.ceil(T / 2))
    return [float(t) for t in range(lo, int(T) + 1)]


def peierls_barrier(x, cfg: SolverConfig, model: LagrangianModel,
                    T: float = BARRIER_HORIZON, reverse: bool = False) -> Barrier:
    """min over integer horizons in [T/2, T] of h^t(x, .).

    With ``reverse`` the result is h(., x) (computed on the time-reversed
    Lagrangian).  The ``oscillates`` flag is raised when the values over the
    later half of the window spread by more than 5 dx.
    """
    return peierls_barriers([cfg.grid.node_of(x)], cfg, model, T, reverse)[0]


def peierls_barriers(nodes, cfg: SolverConfig, model: LagrangianModel,
                     T: float = BARRIER_HORIZON, reverse: bool = False,
                     batch: int = 64) -> list[Barrier]:
    """Barriers from many source nodes, batched through the stacked kernel."""
    nodes = [int(k) for k in nodes]
    out = []
    hs = barrier_horizons(T)
    for start in range(0, len(nodes), batch):
        chunk = nodes[start:start + batch]
        snaps, _, _ = action_sweep(chunk, hs, cfg, model, reverse=reverse)
        for r, src in enumerate(chunk):
            b = barrier_from_snapshots(cfg.grid, snaps, r, src, cfg.c, reverse)
            if b.oscillates:
                log.info("barrier from node %d oscillates by %.3g over the window", src, b.oscillation)
            out.append(b)
    return out


def backtrack_minimizer(table: ActionTable, y, t: float | None = None) -> Trajectory:
    """Follow stored argmin velocities from ``y`` back to the source.

    Velocities are looked up at the node nearest to the current position;
    positions are then integrated exactly, so consecutive samples satisfy
    ``x_{k+1} = x_k + v_k dt`` up to rounding.
    """
    if table.policy is None:
        raise ActionError("table was built without a policy")
    t = table.horizons[-1] if t is None else t
    n_steps = table.steps_for(t)
    grid = table.fields[table._key(t)].grid
    y = as_torus_point(y)
    if table.fields[table._key(t)](y) >= BIG / 2:
        raise ActionError(f"{y} not reachable from the source within horizon {t}")
    pos = np.empty((n_steps + 1, grid.dim))
    vel = np.empty((n_steps + 1, grid.dim))
    pos[n_steps] = y
    for k in range(n_steps, 0, -1):
        node = np.unravel_index(grid.node_of(pos[k]), grid.shape)
        v = table.policy[k - 1][node]
        vel[k - 1] = v
        pos[k - 1] = np.mod(pos[k] - v * table.dt, 1.0)
    vel[n_steps] = vel[n_steps - 1]
    # re-integrate forward from the recovered start so the samples are exactly consistent
    for k in range(n_steps):
        pos[k + 1] = np.mod(pos[k] + vel[k] * table.dt, 1.0)
    times = np.arange(n_steps + 1) * table.dt
    return Trajectory(times, pos, vel, table.lam)


# ---------------------------------------------------------------------------
# Euler-Lagrange flow
# ---------------------------------------------------------------------------

def el_rhs(model: LagrangianModel, lam: float, x: np.ndarray, v: np.ndarray, fd: float = 1e-6):
    """Acceleration from d/dt L_v - lam L_v = L_x."""
    if model.quadratic:
        X = x[None]
        om = model.drift.value(X)[0]
        J = model.drift.jac(X)[0]
        # d/dt (v - om(x)) = a - J v
        return J @ v + lam * (v - om) + model.L_x(X, v[None])[0]
    Lvv = model.L_vv(x[None], v[None])[0]
    Lvx = np.empty((len(x), len(x)))
    for j in range(len(x)):
        e = np.zeros(len(x))
        e[j] = fd
        Lvx[:, j] = (model.L_v(x[None] + e, v[None])[0] - model.L_v(x[None] - e, v[None])[0]) / (2 * fd)
    rhs = model.L_x(x[None], v[None])[0] + lam * model.L_v(x[None], v[None])[0] - Lvx @ v
    return np.linalg.solve(Lvv, rhs)


def el_flow(start, lam: float, horizon: float, model: LagrangianModel,
            h: float | None = None, dt: float | None = None) -> Trajectory:
    """Classical RK4 for the (discounted) Euler-Lagrange system.

    The step is ``min(dt, 1e-2)`` (``dt`` defaults to 1e-2) unless ``h`` is
    given; the last step is shortened to land on ``horizon``.
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    x0, v0 = start
    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    v = np.atleast_1d(np.asarray(v0, dtype=float)).copy()
    if h is None:
        h = min(1e-2 if dt is None else dt, 1e-2)
    n = int(math.ceil(horizon / h - 1e-9))
    hstep = horizon / n
    T = np.empty(n + 1)
    P = np.empty((n + 1, len(x)))
    V = np.empty((n + 1, len(x)))
    T[0], P[0], V[0] = 0.0, x, v

    def f(x, v):
        return v, el_rhs(model, lam, x, v)

    for k in range(n):
        k1x, k1v = f(x, v)
        k2x, k2v = f(x + 0.5 * hstep * k1x, v + 0.5 * hstep * k1v)
        k3x, k3v = f(x + 0.5 * hstep * k2x, v + 0.5 * hstep * k2v)
        k4x, k4v = f(x + hstep * k3x, v + hstep * k3v)
        x = x + hstep / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x)
        v = v + hstep / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
        T[k + 1], P[k + 1], V[k + 1] = (k + 1) * hstep, x, v
    return Trajectory(T, np.mod(P, 1.0), V, lam)


def energy(model: LagrangianModel, x, v) -> np.ndarray:
    """E = L_v . v - L (conserved by the undiscounted flow)."""
    X = np.asarray(x, dtype=float)
    Vv = np.asarray(v, dtype=float)
    return np.sum(model.L_v(X, Vv) * Vv, axis=-1) - model.L(X, Vv)


def el_residual(traj: Trajectory, model: LagrangianModel, window: int = 1,
                interior: float = 0.1, tau: float | None = None) -> float:
    """max |d/dt L_v - lam L_v - L_x| along a sampled path.

    Velocities are re-estimated from positions and L_v is differenced over
    ``2 * window`` samples (or over a time span ``2 * tau`` when ``tau`` is
    given, which keeps the stencil fixed under refinement); a fraction
    ``interior`` of the samples at each end is ignored.
    """
    if tau is not None:
        window = max(1, int(round(tau / (traj.times[1] - traj.times[0]))))
    X = traj.positions
    T = traj.times
    n = len(T)
    if n < 4 * window + 3:
        raise ValueError("trajectory too short for the requested window")
    unwrapped = X.copy()
    jumps = np.round(np.diff(X, axis=0))
    unwrapped[1:] -= np.cumsum(jumps, axis=0)
    w = window
    k = np.arange(w, n - w)
    vel = (unwrapped[k + w] - unwrapped[k - w]) / (T[k + w] - T[k - w])[:, None]
    Xk = X[k]
    Lv = model.L_v(Xk, vel)
    Lx = model.L_x(Xk, vel)
    m = len(k)
    j = np.arange(w, m - w)
    dLv = (Lv[j + w] - Lv[j - w]) / (T[k[j + w]] - T[k[j - w]])[:, None]
    r = dLv - traj.lam * Lv[j] - Lx[j]
    norms = np.sqrt(np.sum(r * r, axis=-1))
    cut = int(interior * len(norms))
    core = norms[cut:len(norms) - cut] if len(norms) > 2 * cut else norms
    return float(core.max())
