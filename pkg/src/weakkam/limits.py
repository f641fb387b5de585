"""Vanishing-discount sweeps and the checks run on their results."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .action import BARRIER_HORIZON
from .aubry import (BarrierCache, PointSet, aubry_set, calibrated_set, class_representatives,
                    distance_to_set, projected_mather_set, static_classes)
from .grid import GridField
from .model import LagrangianModel
from .solver import (CriticalValue, SolverConfig, SolverError, critical_value, forward_solution,
                     ground_state)

log = logging.getLogger(__name__)

LAMBDA_FLOOR = 0.01


class SweepError(SolverError):
    def __init__(self, msg: str, partial: "SweepResult"):
        super().__init__(msg)
        self.partial = partial


@dataclass
class CheckReport:
    """Outcome of one structural check."""

    name: str
    passed: bool
    margin: float
    eps: float
    violations: list = field(default_factory=list)
    details: dict = field(default_factory=dict)

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"{self.name:<16} {tag}  margin={self.margin:.4g}  eps={self.eps:.3g}"

    def to_json(self) -> dict:
        return {"name": self.name, "passed": bool(self.passed), "margin": float(self.margin),
                "eps": float(self.eps), "violations": [str(v) for v in self.violations[:20]],
                "details": _jsonable(self.details)}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


@dataclass
class SweepResult:
    schedule: list[float]
    c: float
    u_plus: dict[float, GridField] = field(default_factory=dict)
    u_minus: dict[float, GridField] = field(default_factory=dict)
    calibrated: dict[float, PointSet] = field(default_factory=dict)
    cauchy: list[float] = field(default_factory=list)
    critical: CriticalValue | None = None
    error: str | None = None

    @property
    def completed(self) -> list[float]:
        return [lam for lam in self.schedule if lam in self.u_minus]

    @property
    def u0_minus(self) -> GridField:
        return self.u_minus[self.completed[-1]]

    @property
    def u0_plus(self) -> GridField:
        return self.u_plus[self.completed[-1]]


def discount_sweep(schedule, cfg: SolverConfig, model: LagrangianModel,
                   eps_G: float | None = None, c: float | None = None) -> SweepResult:
    """Solve along a decreasing discount schedule.

    The critical value is computed once (unless ``c`` is given); the limit
    fields are the ones at the smallest discount.  ``eps_G`` is the
    calibrated-set threshold (default ``dx``).
    """
    schedule = [float(s) for s in schedule]
    if not schedule or any(b >= a for a, b in zip(schedule, schedule[1:])):
        raise ValueError("schedule must be strictly decreasing")
    if min(schedule) < LAMBDA_FLOOR:
        raise ValueError(f"discounts below {LAMBDA_FLOOR} are not supported")
    crit = None
    if c is None:
        crit = critical_value(model, cfg)
        c = crit.value
    res = SweepResult(schedule, c, critical=crit)
    eps_G = cfg.grid.dx if eps_G is None else eps_G
    prev = None
    for lam in schedule:
        sub = cfg.with_(lam=lam, c=c)
        try:
            up = forward_solution(sub, model)
            um = ground_state(up, sub, model)
        except SolverError as exc:
            res.error = f"lam={lam}: {exc}"
            raise SweepError(res.error, res) from exc
        res.u_plus[lam] = up
        res.u_minus[lam] = um
        res.calibrated[lam] = calibrated_set(um, up, eps_G)
        if prev is not None:
            res.cauchy.append(float(np.max(np.abs(um.values - prev.values))))
        prev = um
        log.info("lam=%g: forward %d its, ground %d its, |G|=%d", lam,
                 up.meta["iterations"], um.meta["iterations"], len(res.calibrated[lam]))
    return res


def conjugate_check(u_minus: GridField, u_plus: GridField, M_set: PointSet, eps: float) -> CheckReport:
    """u_minus >= u_plus - eps everywhere and |u_minus - u_plus| <= eps on M_set."""
    if u_minus.grid != u_plus.grid:
        raise ValueError("fields live on different grids")
    diff = (u_minus.values - u_plus.values).ravel()
    viol = [("order", int(k), float(diff[k])) for k in np.flatnonzero(diff < -eps)]
    on_m = np.abs(diff[M_set.indices]) if len(M_set) else np.zeros(0)
    viol += [("mather", int(k), float(diff[k])) for k, g in zip(M_set.indices, on_m) if g > eps]
    margin = min(eps + float(diff.min()), eps - float(on_m.max(initial=0.0)))
    return CheckReport("conjugate", not viol, margin, eps, viol,
                       {"min_difference": float(diff.min()),
                        "max_gap_on_mather": float(on_m.max(initial=0.0))})


def representation_check(u: GridField, A: PointSet, barriers: BarrierCache, eps: float,
                         sources=None, u_alt: GridField | None = None,
                         classes: PointSet | None = None) -> CheckReport:
    """u(x) = min over Aubry sources x0 of u(x0) + h(x0, x), to within eps.

    ``sources`` defaults to every Aubry node with a cached barrier.  When a
    second solution ``u_alt`` and the class labels are given, the difference
    ``u - u_alt`` must also be constant (spread <= eps) on each class.
    """
    if sources is None:
        sources = [k for k in A.indices if int(k) in barriers.forward]
    sources = [int(k) for k in sources]
    if not sources:
        raise ValueError("no barrier tables available for the Aubry set")
    barriers.ensure(sources)
    flat = u.values.ravel()
    rhs = np.full(flat.shape, np.inf)
    arg = np.full(flat.shape, -1)
    for k in sources:
        cand = flat[k] + barriers.get(k).values.ravel()
        better = cand < rhs
        rhs = np.where(better, cand, rhs)
        arg = np.where(better, k, arg)
    gap = np.abs(flat - rhs)
    viol = [("formula", int(k), float(gap[k])) for k in np.flatnonzero(gap > eps)]
    spreads = {}
    if u_alt is not None and classes is not None:
        d = flat - u_alt.values.ravel()
        for lab in np.unique(classes.labels):
            idx = classes.class_members(int(lab))
            s = float(d[idx].max() - d[idx].min())
            spreads[int(lab)] = s
            if s > eps:
                viol.append(("class-constant", int(lab), s))
    worst = max([float(gap.max())] + list(spreads.values()))
    return CheckReport("representation", not viol, eps - worst, eps, viol,
                       {"sup_gap": float(gap.max()), "sources": sources,
                        "class_spread": spreads, "argmin_source": arg})


def star_condition_check(sweep: SweepResult, classes: PointSet, eps: float) -> CheckReport:
    """Each static class is approached by the calibrated sets along the schedule.

    Only the one discount sequence in the sweep is certified; the condition
    quantifies over all sequences tending to zero.
    """
    lams = sweep.completed
    if len(lams) < 3:
        raise ValueError("star condition needs at least three schedule entries")
    grid = classes.grid
    viol, per_class = [], {}
    margin = np.inf
    for lab in np.unique(classes.labels):
        members = classes.class_members(int(lab))
        pts = np.array([grid.coords_of(k) for k in members])
        best = None
        for z, pz in zip(members, pts):
            dists = []
            for lam in lams:
                G = sweep.calibrated[lam]
                dists.append(float(distance_to_set(pz[None], G.points())[0]) if len(G) else np.inf)
            if best is None or dists[-1] < best[1][-1]:
                best = (int(z), dists)
        z, dists = best
        monotone = all(b <= a + 1e-12 for a, b in zip(dists, dists[1:]))
        ok = monotone and dists[-1] <= eps
        per_class[int(lab)] = {"node": z, "distances": dists, "monotone": monotone}
        margin = min(margin, eps - dists[-1])
        if not ok:
            viol.append(("class", int(lab), dists))
    return CheckReport("star", not viol, float(margin), eps, viol,
                       {"per_class": per_class,
                        "note": "certifies the single schedule supplied, not every sequence"})


def usc_check(sweep: SweepResult, G0: PointSet, eps: float) -> CheckReport:
    """Every node of the smallest-discount calibrated set lies within eps of G0."""
    G = sweep.calibrated[sweep.completed[-1]]
    if len(G) == 0:
        return CheckReport("usc", True, eps, eps, [], {"empty": True})
    d = distance_to_set(G.points(), G0.points())
    viol = [("far", int(k), float(x)) for k, x in zip(G.indices, d) if x > eps]
    return CheckReport("usc", not viol, eps - float(d.max()), eps, viol,
                       {"max_distance": float(d.max()), "size": len(G)})


def undiscounted_calibrated(classes: PointSet, barriers: BarrierCache,
                            tol: float | None = None) -> PointSet:
    """Nodes on near-minimising connections between Aubry classes.

    With one class this is the Aubry set itself.  Otherwise x is kept when
    h(a, x) + h(x, b) - h(a, b) <= tol for some class representatives a, b
    (tol defaults to 10 dx).
    """
    grid = classes.grid
    tol = 10.0 * grid.dx if tol is None else tol
    if classes.n_classes <= 1:
        return PointSet(grid, classes.indices, classes.scores, classes.labels, classes.threshold,
                        "G0", {"rule": "aubry"})
    reps = list(class_representatives(classes).values())
    barriers.ensure(reps)
    barriers.ensure(reps, reverse=True)
    best = np.full(grid.size, np.inf)
    for a in reps:
        ha = barriers.get(a).values.ravel()
        for b in reps:
            hb = barriers.get(b, reverse=True).values.ravel()  # h(., b)
            best = np.minimum(best, ha + hb - ha[b])
    nodes = np.union1d(np.flatnonzero(best <= tol), classes.indices)
    return PointSet(grid, nodes, np.where(np.isfinite(best[nodes]), best[nodes], 0.0),
                    [-1] * len(nodes), tol, "G0", {"rule": "connections"})


@dataclass
class LimitAnalysis:
    aubry: PointSet
    classes: PointSet
    barriers: BarrierCache
    mather: PointSet
    reports: list[CheckReport]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.reports)


def analyse_limit(sweep: SweepResult, cfg: SolverConfig, model: LagrangianModel, eps: float,
                  eps_A: float | None = None, horizon: float = BARRIER_HORIZON,
                  lp_grid: int = 64) -> LimitAnalysis:
    """Aubry set, classes and Mather support at the critical value, then every
    structural check on the smallest-discount fields of ``sweep``."""
    cfg = cfg.with_(c=sweep.c)
    A = aubry_set(cfg, model, eps_A=eps_A, barriers=BarrierCache(cfg, model, horizon))
    B = A.meta["barriers"]
    classes = static_classes(A, B)
    reps = class_representatives(classes)
    M = projected_mather_set(cfg, model, lp_grid)
    sources = sorted(set(reps.values()) | {int(k) for k in A.indices})
    reports = [
        conjugate_check(sweep.u0_minus, sweep.u0_plus, M, eps),
        representation_check(sweep.u0_minus, A, B, eps, sources=sources,
                             u_alt=B.get(reps[min(reps)]).field, classes=classes),
    ]
    if len(sweep.completed) >= 3:
        reports.append(star_condition_check(sweep, classes, eps))
    reports.append(usc_check(sweep, undiscounted_calibrated(classes, B), eps))
    return LimitAnalysis(A, classes, B, M, reports)
