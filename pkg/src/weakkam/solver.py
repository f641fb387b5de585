"""Semi-Lagrangian discounted Lax-Oleinik operators and the fields built on them.

Sign conventions
----------------
``backward_step`` discretises the expanding operator

    T phi(x) = min_v  e^{lam dt} phi(x - v dt) + w (L(x, v) + c),
    w = (e^{lam dt} - 1) / lam      (w = dt when lam = 0),

whose long-time orbit from the forward solution gives the ground state.
The forward solution is minus the fixed point of the contracting twin

    S u(x) = min_v  e^{-lam dt} u(x - v dt) + w_hat (L(x, -v) + c),
    w_hat = (1 - e^{-lam dt}) / lam.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .grid import GridField, GridSpec
from .model import LagrangianModel, hamiltonian_array

log = logging.getLogger(__name__)

CRITICAL_SCHEDULE = (0.1, 0.05, 0.025)


class SolverError(RuntimeError):
    """Raised for blow-up or non-finite values."""


class ConvergenceError(SolverError):
    """Iteration budget exhausted before the tolerance was met."""

    def __init__(self, msg: str, partial: GridField | None = None):
        super().__init__(msg)
        self.partial = partial


@dataclass(frozen=True)
class SolverConfig:
    """Discretisation and stopping parameters.

    Parameters
    ----------
    grid : GridSpec
    dt : float
        Time step; ``dt * v_max <= 0.5``.
    v_max : float
        Velocity box half-width.
    lam : float
        Discount rate (>= 0).
    c : float
        Critical value added to the Lagrangian.
    m, r : int
        Lattice points per axis and golden-section rounds.  Only used by the
        lattice search (custom Lagrangians); built-in families are minimised
        exactly over the box.
    tol_fix : float
        Stopping tolerance for the contraction.
    k_max : int or None
        Iteration cap; ``None`` means ``ceil(20 / (lam dt))``.
    """

    grid: GridSpec
    dt: float
    v_max: float
    lam: float = 0.1
    c: float = 0.0
    m: int = 17
    r: int = 2
    tol_fix: float = 1e-9
    k_max: int | None = None

    def __post_init__(self):
        if self.dt <= 0 or self.v_max <= 0:
            raise ValueError("dt and v_max must be positive")
        if self.dt * self.v_max > 0.5 + 1e-12:
            raise ValueError(f"dt * v_max = {self.dt * self.v_max:.3g} exceeds 0.5")
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if self.tol_fix <= 0:
            raise ValueError("tol_fix must be positive")
        if self.m < 3 or self.r < 0:
            raise ValueError("need m >= 3 and r >= 0")

    def with_(self, **kw) -> "SolverConfig":
        return replace(self, **kw)

    @property
    def iteration_cap(self) -> int:
        if self.k_max is not None:
            return int(self.k_max)
        if self.lam <= 0:
            return 10 ** 6
        return int(math.ceil(20.0 / (self.lam * self.dt)))

    def to_json(self) -> dict:
        return {"n": self.grid.n, "dim": self.grid.dim, "dt": self.dt, "v_max": self.v_max,
                "lam": self.lam, "c": self.c, "m": self.m, "r": self.r,
                "tol_fix": self.tol_fix, "k_max": self.k_max}


def make_config(model: LagrangianModel, n: int, lam: float = 0.1, c: float = 0.0,
                dt: float | None = None, v_max: float | None = None, **kw) -> SolverConfig:
    """Config with defaults ``v_max = 4 (1 + max|grad V| + max|om|)`` and
    ``dt = min(0.5 / v_max, dx)``."""
    grid = GridSpec(model.dim, n)
    if v_max is None:
        v_max = model.default_v_max()
    if dt is None:
        dt = min(0.5 / v_max, grid.dx)
    return SolverConfig(grid, float(dt), float(v_max), float(lam), float(c), **kw)


def weights(lam: float, dt: float) -> tuple[float, float, float]:
    """(e^{lam dt}, expanding weight, contracting weight)."""
    if lam == 0.0:
        return 1.0, dt, dt
    return math.exp(lam * dt), math.expm1(lam * dt) / lam, -math.expm1(-lam * dt) / lam


# ---------------------------------------------------------------------------
# one step
# ---------------------------------------------------------------------------

@dataclass
class _NodeData:
    """Per-node drift and velocity-free cost for one direction of time."""

    om: tuple[np.ndarray, ...]
    uc: np.ndarray


_node_cache: dict = {}


def _node_data(model: LagrangianModel, grid: GridSpec, c: float, reverse: bool) -> _NodeData:
    key = (id(model), grid, c, reverse)
    hit = _node_cache.get(key)
    if hit is not None and hit[0] is model:
        return hit[1]
    X = grid.points()
    om = model.drift.value(X)
    if reverse:
        om = -om
    data = _NodeData(tuple(np.ascontiguousarray(om[..., k]) for k in range(grid.dim)),
                     np.ascontiguousarray(model.U(X) + c))
    if len(_node_cache) > 64:
        _node_cache.clear()
    _node_cache[key] = (model, data)
    return data


def raw_step(values: np.ndarray, A: float, W: float, cfg: SolverConfig,
             model: LagrangianModel, reverse: bool = False, c: float | None = None,
             backend=None) -> tuple[np.ndarray, np.ndarray]:
    """Minimise ``A phi(x - v dt) + W (L(x, +-v) + c)`` at every node.

    ``values`` is one field (``grid.shape``) or a stack of fields
    (``(S,) + grid.shape``).  Returns the new values and the minimising
    velocities (trailing axis of length d).  With ``reverse`` the cost uses
    ``L(x, -v)`` and the velocities are negated back to the convention of
    ``L``.
    """
    grid = cfg.grid
    c = cfg.c if c is None else c
    f = np.ascontiguousarray(values, dtype=float)
    stacked = f.ndim == grid.dim + 1
    if not stacked and f.shape != grid.shape:
        raise ValueError(f"field shape {f.shape} does not match grid {grid.shape}")
    h = cfg.dt / grid.dx
    out = np.empty_like(f)
    vel = np.empty(f.shape + (grid.dim,))
    if model.quadratic:
        impl = kernels.get_backend(backend)
        data = _node_data(model, grid, c, reverse)
        comps = [np.empty_like(f) for _ in range(grid.dim)]
        if grid.dim == 1:
            fn = impl.step1d_rows if stacked else impl.step1d
            fn(f, A, W, data.om[0], data.uc, h, cfg.v_max, out, comps[0])
        else:
            fn = impl.step2d_rows if stacked else impl.step2d
            fn(f, A, W, data.om[0], data.om[1], data.uc, h, cfg.v_max, out, *comps)
        for k in range(grid.dim):
            vel[..., k] = comps[k]
    elif stacked:
        for r in range(f.shape[0]):
            out[r], vel[r] = lattice_step(f[r], A, W, cfg, model, reverse, c)
    else:
        out, vel = lattice_step(f, A, W, cfg, model, reverse, c)
    if reverse:
        vel = -vel
    if not np.all(np.isfinite(out)):
        bad = int(np.flatnonzero(~np.isfinite(out.ravel()))[0])
        raise SolverError(f"non-finite value at node {bad}")
    return out, vel


_GOLD = (math.sqrt(5.0) - 1.0) / 2.0


def lattice_step(f, A, W, cfg: SolverConfig, model: LagrangianModel, reverse: bool, c: float,
                 golden_iters: int = 30):
    """Velocity lattice plus coordinate-wise golden-section refinement.

    Used for custom Lagrangians whose evaluators are plain Python callables.
    """
    from .grid import interpolate

    grid = cfg.grid
    d = grid.dim
    X = grid.flat_points()
    N = len(X)
    sgn = -1.0 if reverse else 1.0
    axis = np.linspace(-cfg.v_max, cfg.v_max, cfg.m)
    lat = np.stack(np.meshgrid(*[axis] * d, indexing="ij"), -1).reshape(-1, d)

    def cost(V):  # V: (N, d)
        return A * interpolate(f, X - V * cfg.dt) + W * (model.L(X, sgn * V) + c)

    vals = np.stack([cost(np.broadcast_to(v, (N, d))) for v in lat], axis=1)
    k = np.argmin(vals, axis=1)
    best_v = lat[k].copy()
    best = vals[np.arange(N), k]
    spacing = axis[1] - axis[0]
    radius = spacing
    for _ in range(cfg.r):
        for ax in range(d):
            lo = np.maximum(best_v[:, ax] - radius, -cfg.v_max)
            hi = np.minimum(best_v[:, ax] + radius, cfg.v_max)
            a = hi - _GOLD * (hi - lo)
            b = lo + _GOLD * (hi - lo)

            def at(t):
                V = best_v.copy()
                V[:, ax] = t
                return cost(V)

            fa, fb = at(a), at(b)
            for _ in range(golden_iters):
                left = fa < fb
                hi = np.where(left, b, hi)
                lo = np.where(left, lo, a)
                b_new = np.where(left, a, lo + _GOLD * (hi - lo))
                a_new = np.where(left, hi - _GOLD * (hi - lo), b)
                fb_new = np.where(left, fa, np.nan)
                fa_new = np.where(left, np.nan, fb)
                a, b = a_new, b_new
                need_a = np.isnan(fa_new)
                need_b = np.isnan(fb_new)
                fa = np.where(need_a, at(a), fa_new)
                fb = np.where(need_b, at(b), fb_new)
            t = 0.5 * (lo + hi)
            ft = at(t)
            better = ft < best
            best = np.where(better, ft, best)
            best_v[better, ax] = t[better]
        radius = radius / 4.0
    return best.reshape(grid.shape), best_v.reshape(grid.shape + (d,))


def backward_step(phi: GridField, cfg: SolverConfig, model: LagrangianModel,
                  dt: float | None = None) -> GridField:
    """One step of the expanding discounted operator."""
    if dt is not None:
        cfg = cfg.with_(dt=dt)
    A, W, _ = weights(cfg.lam, cfg.dt)
    out, vel = raw_step(phi.values, A, W, cfg, model)
    return GridField(cfg.grid, out, {"lam": cfg.lam, "c": cfg.c, "velocity": vel})


def forward_step(u: GridField, cfg: SolverConfig, model: LagrangianModel) -> GridField:
    """One step of the contracting twin (acts on minus the forward solution)."""
    _, _, Wc = weights(cfg.lam, cfg.dt)
    A = math.exp(-cfg.lam * cfg.dt)
    out, vel = raw_step(u.values, A, Wc, cfg, model, reverse=True)
    return GridField(cfg.grid, out, {"lam": cfg.lam, "c": cfg.c, "velocity": vel})


# ---------------------------------------------------------------------------
# fixed points
# ---------------------------------------------------------------------------

def _contract(cfg: SolverConfig, model: LagrangianModel, c: float):
    """Fixed point of the contracting step by relative value iteration.

    Iterating ``w <- S w - g`` with the scalar ``g`` set to the mid-range of
    ``S w - w`` removes the slow constant mode; the fixed point of ``S`` is
    then ``w + g / (1 - a)`` and its plain increment equals ``S w - w - g``.

    The loop runs until that increment is below ``tol_fix * (1 - a)``, so the
    distance to the exact fixed point (increment over ``1 - a``) is itself
    below ``tol_fix``; a rounding floor keeps the target reachable.
    """
    lam = cfg.lam
    a = math.exp(-lam * cfg.dt)
    one_minus_a = -math.expm1(-lam * cfg.dt)
    _, _, Wc = weights(lam, cfg.dt)
    w = np.zeros(cfg.grid.shape)
    cap = cfg.iteration_cap
    incr = np.inf
    vel = None
    for it in range(1, cap + 1):
        Sw, vel = raw_step(w, a, Wc, cfg, model, reverse=True, c=c)
        delta = Sw - w
        hi, lo = float(delta.max()), float(delta.min())
        g = 0.5 * (hi + lo)
        incr = 0.5 * (hi - lo)
        floor = 64.0 * np.finfo(float).eps * (1.0 + float(np.max(np.abs(Sw))))
        if incr < max(cfg.tol_fix * one_minus_a, floor):
            return w + g / one_minus_a, vel, it, incr, True
        w = Sw - g
    return w + g / one_minus_a, vel, cap, incr, False


def forward_solution(cfg: SolverConfig, model: LagrangianModel) -> GridField:
    """Forward discounted solution ``u+`` (minus the contraction fixed point)."""
    if cfg.lam <= 0:
        raise ValueError("forward_solution needs lam > 0")
    u_hat, vel, it, incr, ok = _contract(cfg, model, cfg.c)
    fld = GridField(cfg.grid, -u_hat, {"lam": cfg.lam, "c": cfg.c, "iterations": it,
                                       "increment": incr, "converged": ok,
                                       "kind": "forward", "velocity": vel})
    if not ok:
        raise ConvergenceError(
            f"forward iteration hit {it} steps with increment {incr:.3e}", fld)
    log.debug("forward lam=%g: %d iterations, increment %.2e", cfg.lam, it, incr)
    return fld


REFERENCE_DT = 2.0 ** -8


def ground_tolerance(lam: float, dt: float = REFERENCE_DT) -> float:
    """Per-step envelope tolerance ``1e-6 (1 + 1/lam)``.

    Steps finer than :data:`REFERENCE_DT` shrink it proportionally, so the
    implied rate of change per unit time does not loosen under refinement.
    """
    return 1e-6 * (1.0 + 1.0 / lam) * min(1.0, dt / REFERENCE_DT)


def blowup_bound(u_plus: GridField, cfg: SolverConfig, model: LagrangianModel) -> float:
    k0 = math.sqrt(cfg.grid.dim) / 2.0
    return (float(u_plus.values.max())
            + (model.max_L(k0) + cfg.c) * math.exp(cfg.lam) / cfg.lam + 1.0)


def ground_state(u_plus: GridField, cfg: SolverConfig, model: LagrangianModel,
                 tol: float | None = None) -> GridField:
    """Long-time limit of the expanding operator started from ``u_plus``.

    The running pointwise maximum of the orbit is returned and the stopping
    test is applied to its increments: the continuous orbit is nondecreasing,
    while the discrete one can sag by interpolation error and then drift
    under the expansion.  When the cap
    ``ceil(20 / (lam dt))`` is reached the field is returned with
    ``converged = False`` in its metadata.
    """
    if cfg.lam <= 0:
        raise ValueError("ground_state needs lam > 0")
    tol = ground_tolerance(cfg.lam, cfg.dt) if tol is None else tol
    A, W, _ = weights(cfg.lam, cfg.dt)
    bound = blowup_bound(u_plus, cfg, model)
    phi = u_plus.values.copy()
    env = phi.copy()
    cap = int(math.ceil(20.0 / (cfg.lam * cfg.dt))) if cfg.k_max is None else cfg.k_max
    incr = raw_incr = np.inf
    vel = None
    it = 0
    for it in range(1, cap + 1):
        nxt, vel = raw_step(phi, A, W, cfg, model)
        raw_incr = float(np.max(np.abs(nxt - phi)))
        phi = nxt
        grown = np.maximum(env, phi)
        incr = float(np.max(grown - env))
        env = grown
        top = float(env.max())
        if top > bound:
            raise SolverError(
                f"ground-state envelope {top:.4g} exceeds the a-priori bound {bound:.4g} "
                f"after {it} steps; reduce dt")
        if incr < tol:
            break
    ok = incr < tol
    if not ok:
        log.warning("ground state unconverged after %d steps (increment %.2e)", it, incr)
    return GridField(cfg.grid, env, {"lam": cfg.lam, "c": cfg.c, "iterations": it,
                                     "increment": incr, "orbit_increment": raw_incr,
                                     "converged": ok, "kind": "ground",
                                     "bound": bound, "velocity": vel})


@dataclass
class CriticalValue:
    value: float
    per_lambda: dict[float, float]
    iterations: dict[float, int]
    lp_value: float | None = None
    diagnostics: dict = field(default_factory=dict)

    def __float__(self) -> float:
        return self.value


def critical_value(model: LagrangianModel, cfg: SolverConfig,
                   schedule=CRITICAL_SCHEDULE, lp_check: bool = False) -> CriticalValue:
    """Critical value from the small-discount behaviour of the contraction.

    For each rate the grid mean of ``-lam u`` is formed, and the three rates
    (each half the previous) are combined by Richardson extrapolation, which
    cancels the first- and second-order terms in ``lam``.
    """
    lams = sorted(schedule, reverse=True)
    if len(lams) != 3 or not (abs(lams[1] - lams[0] / 2) < 1e-12 and abs(lams[2] - lams[1] / 2) < 1e-12):
        raise ValueError("schedule must be three rates, each half the previous")
    est, iters = {}, {}
    for lam in lams:
        sub = cfg.with_(lam=lam, c=0.0)
        u_hat, _, it, incr, ok = _contract(sub, model, 0.0)
        if not ok:
            raise ConvergenceError(f"critical-value solve at lam={lam} did not converge "
                                   f"(increment {incr:.2e})")
        est[lam] = -lam * float(u_hat.mean())
        iters[lam] = it
    c1, c2, c4 = (est[l] for l in lams)
    value = (8.0 * c4 - 6.0 * c2 + c1) / 3.0
    res = CriticalValue(value, est, iters)
    if lp_check:
        from .aubry import mather_lp
        res.lp_value = mather_lp(cfg, model).value
        res.diagnostics["lp_gap"] = abs(res.lp_value + value)
    return res


# ---------------------------------------------------------------------------
# residuals and a-priori constants
# ---------------------------------------------------------------------------

def one_sided_gradients(values: np.ndarray, dx: float):
    fwd = [(np.roll(values, -1, axis=k) - values) / dx for k in range(values.ndim)]
    bwd = [(values - np.roll(values, 1, axis=k)) / dx for k in range(values.ndim)]
    return fwd, bwd


def kink_mask(values: np.ndarray, dx: float, jump: float = 1.0, collar: int = 3) -> np.ndarray:
    """Nodes whose one-sided slopes differ by more than ``jump``, dilated by ``collar``."""
    fwd, bwd = one_sided_gradients(values, dx)
    mask = np.zeros(values.shape, dtype=bool)
    for f, b in zip(fwd, bwd):
        mask |= np.abs(f - b) > jump
    grown = mask.copy()
    for k in range(values.ndim):
        for s in range(1, collar + 1):
            grown |= np.roll(mask, s, axis=k) | np.roll(mask, -s, axis=k)
    return grown


def residual(u: GridField, cfg: SolverConfig, model: LagrangianModel) -> GridField:
    """Upwind residual ``-lam u + H(x, Du) - c``; the kink collar is in ``meta``."""
    grid = u.grid
    X = grid.points()
    fwd, bwd = one_sided_gradients(u.values, grid.dx)
    best = np.full(grid.shape, -np.inf)
    for combo in range(2 ** grid.dim):
        P = np.stack([fwd[k] if (combo >> k) & 1 else bwd[k] for k in range(grid.dim)], -1)
        best = np.maximum(best, hamiltonian_array(model, X, P))
    res = -cfg.lam * u.values + best - cfg.c
    mask = kink_mask(u.values, grid.dx)
    return GridField(grid, res, {"lam": cfg.lam, "c": cfg.c, "kink_mask": mask})


def max_residual(res: GridField) -> float:
    mask = res.meta.get("kink_mask")
    vals = np.abs(res.values)
    if mask is not None:
        vals = vals[~mask]
    return float(vals.max()) if vals.size else 0.0


def lipschitz_bound(model: LagrangianModel, alpha0: float) -> float:
    """kappa = C_{alpha0 + 1} + C(0) + 1 with C(0) = -min L."""
    return model.max_L(alpha0 + 1.0) - model.min_L() + 1.0


def observed_speed(fld: GridField) -> float:
    vel = fld.meta.get("velocity")
    if vel is None:
        return 0.0
    return float(np.max(np.sqrt(np.sum(vel ** 2, axis=-1))))
