"""Aubry set, static classes, Mather measures and calibrated sets on the grid."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from . import simplex
from .action import BARRIER_HORIZON, Barrier, peierls_barriers
from .grid import GridField, GridSpec
from .model import LagrangianModel, torus_metric
from .solver import SolverConfig, make_config

log = logging.getLogger(__name__)

LP_MAX_N = {1: 64, 2: 16}
LP_VELOCITIES = {1: 17, 2: 9}


class AubryError(ValueError):
    pass


@dataclass
class PointSet:
    """Grid nodes with a score and a class label each."""

    grid: GridSpec
    indices: np.ndarray
    scores: np.ndarray
    labels: np.ndarray
    threshold: float
    name: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        order = np.argsort(self.indices, kind="stable")
        self.indices = self.indices[order]
        self.scores = np.asarray(self.scores, dtype=float)[order]
        self.labels = np.asarray(self.labels, dtype=np.int64)[order]
        if len(np.unique(self.indices)) != len(self.indices):
            raise AubryError("duplicate node indices")
        if len(self.indices) and (self.indices.min() < 0 or self.indices.max() >= self.grid.size):
            raise AubryError("node index out of range")

    def __len__(self) -> int:
        return len(self.indices)

    def __contains__(self, node) -> bool:
        return int(node) in set(self.indices.tolist())

    def points(self) -> np.ndarray:
        return np.array([self.grid.coords_of(k) for k in self.indices]).reshape(-1, self.grid.dim)

    @property
    def n_classes(self) -> int:
        lab = self.labels[self.labels >= 0]
        return int(len(np.unique(lab)))

    def class_members(self, label: int) -> np.ndarray:
        return self.indices[self.labels == label]

    def write_csv(self, path) -> None:
        d = self.grid.dim
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{k + 1}" for k in range(d)] + ["score", "label"])
            for p, s, lab in zip(self.points(), self.scores, self.labels):
                w.writerow([repr(float(a)) for a in p] + [repr(float(s)), int(lab)])


def distance_to_set(points: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Torus distance from each point to the nearest target."""
    if len(targets) == 0:
        return np.full(len(points), np.inf)
    D = torus_metric(points[:, None, :], targets[None, :, :])
    return np.atleast_2d(D).min(axis=1)


def hausdorff(a: np.ndarray, b: np.ndarray) -> float:
    if len(a) == 0 or len(b) == 0:
        return np.inf
    return float(max(distance_to_set(a, b).max(), distance_to_set(b, a).max()))


# ---------------------------------------------------------------------------
# barriers and the Aubry set
# ---------------------------------------------------------------------------

class BarrierCache:
    """Peierls barriers keyed by source node, computed on demand.

    ``forward[x]`` is h(x, .); ``backward[y]`` is h(., y) from the
    time-reversed Lagrangian.
    """

    def __init__(self, cfg: SolverConfig, model: LagrangianModel, T: float = BARRIER_HORIZON):
        self.cfg = cfg
        self.model = model
        self.T = T
        self.forward: dict[int, Barrier] = {}
        self.backward: dict[int, Barrier] = {}

    def ensure(self, nodes, reverse: bool = False) -> None:
        store = self.backward if reverse else self.forward
        todo = sorted({int(k) for k in nodes} - set(store))
        if not todo:
            return
        for k, b in zip(todo, peierls_barriers(todo, self.cfg, self.model, self.T, reverse)):
            store[k] = b

    def get(self, node: int, reverse: bool = False, compute: bool = True) -> Barrier:
        store = self.backward if reverse else self.forward
        node = int(node)
        if node not in store:
            if not compute:
                raise AubryError(f"no barrier table for node {node}")
            self.ensure([node], reverse)
        return store[node]

    def h(self, x: int, y: int, compute: bool = True) -> float:
        """h(x, y) from whichever table is available."""
        if int(x) in self.forward:
            return float(self.forward[int(x)].values.flat[int(y)])
        if int(y) in self.backward:
            return float(self.backward[int(y)].values.flat[int(x)])
        return float(self.get(x, compute=compute).values.flat[int(y)])

    def self_barrier(self, x: int) -> float:
        return self.h(x, x)

    @property
    def sources(self) -> list[int]:
        return sorted(self.forward)


def _neighbours(grid: GridSpec, nodes, radius: int) -> set[int]:
    out = set()
    offs = np.arange(-radius, radius + 1)
    for k in nodes:
        idx = np.array(np.unravel_index(int(k), grid.shape))
        if grid.dim == 1:
            for o in offs:
                out.add(int((idx[0] + o) % grid.n))
        else:
            for a in offs:
                for b in offs:
                    out.add(int(np.ravel_multi_index(((idx[0] + a) % grid.n, (idx[1] + b) % grid.n),
                                                     grid.shape)))
    return out


def default_aubry_threshold(grid: GridSpec) -> float:
    """20 dx^2: a closed loop of length ~dx costs O(dx^2) action."""
    return 20.0 * grid.dx ** 2


def aubry_set(cfg: SolverConfig, model: LagrangianModel, eps_A: float | None = None,
              stride: int = 4, eps_hit: float | None = None,
              barriers: BarrierCache | None = None) -> PointSet:
    """Nodes with self-barrier h(x, x) below ``eps_A``.

    Barriers are first computed from a stride-``stride`` sub-grid; every
    source scoring below ``eps_hit`` (default 20 dx) has its neighbourhood
    refined, and refinement keeps growing while new nodes also score below
    ``eps_hit``.  Membership uses the stricter ``eps_A``.
    """
    grid = cfg.grid
    eps_A = default_aubry_threshold(grid) if eps_A is None else eps_A
    eps_hit = 20.0 * grid.dx if eps_hit is None else eps_hit
    cache = barriers if barriers is not None else BarrierCache(cfg, model)
    axis = np.arange(0, grid.n, stride)
    if grid.dim == 1:
        coarse = [int(k) for k in axis]
    else:
        coarse = [int(np.ravel_multi_index((a, b), grid.shape)) for a in axis for b in axis]
    cache.ensure(coarse)
    scores = {k: cache.self_barrier(k) for k in coarse}
    hits = [k for k in coarse if scores[k] < eps_hit]
    if not hits:
        hits = [min(scores, key=scores.get)]
        log.warning("no coarse node below the hit threshold; refining around node %d", hits[0])
    frontier = set(hits)
    done = set(coarse)
    while frontier:
        cand = _neighbours(grid, frontier, stride) - done
        if not cand:
            break
        cache.ensure(cand)
        done |= cand
        new = {k: cache.self_barrier(k) for k in cand}
        scores.update(new)
        frontier = {k for k, s in new.items() if s < eps_hit}
    members = sorted(k for k, s in scores.items() if s < eps_A)
    return PointSet(grid, members, [scores[k] for k in members], [-1] * len(members), eps_A,
                    "aubry", {"barriers": cache, "all_scores": scores, "eps_hit": eps_hit})


def pseudo_metric(x: int, y: int, barriers: BarrierCache, compute: bool = False) -> float:
    """d_c(x, y) = h(x, y) + h(y, x)."""
    return barriers.h(x, y, compute) + barriers.h(y, x, compute)


def static_classes(A: PointSet, barriers: BarrierCache, eps_class: float = 0.1) -> PointSet:
    """Union-find clustering of the Aubry set: x ~ y when d_c(x, y) < eps_class."""
    if len(A) == 0:
        raise AubryError("empty Aubry set")
    nodes = [int(k) for k in A.indices]
    barriers.ensure(nodes)
    parent = list(range(len(nodes)))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for a in range(len(nodes)):
        for b in range(a + 1, len(nodes)):
            if pseudo_metric(nodes[a], nodes[b], barriers) < eps_class:
                ra, rb = find(a), find(b)
                if ra != rb:
                    parent[max(ra, rb)] = min(ra, rb)
    roots = sorted({find(a) for a in range(len(nodes))})
    label_of = {r: i for i, r in enumerate(roots)}
    labels = [label_of[find(a)] for a in range(len(nodes))]
    out = PointSet(A.grid, nodes, A.scores, labels, A.threshold, "classes",
                   dict(A.meta, eps_class=eps_class))
    pts = out.points()
    close = []
    for i in range(len(roots)):
        for j in range(i + 1, len(roots)):
            pi = pts[out.labels == i]
            pj = pts[out.labels == j]
            if distance_to_set(pi, pj).min() <= 4 * A.grid.dx:
                close.append((i, j))
    if close:
        log.warning("static classes %s lie within 4 dx of each other", close)
    out.meta["near_classes"] = close
    return out


def class_representatives(classes: PointSet) -> dict[int, int]:
    """Lowest-score member of each class."""
    reps = {}
    for lab in np.unique(classes.labels):
        mask = classes.labels == lab
        k = int(np.argmin(np.where(mask, classes.scores, np.inf)))
        reps[int(lab)] = int(classes.indices[k])
    return reps


# ---------------------------------------------------------------------------
# Mather measures
# ---------------------------------------------------------------------------

@dataclass
class DiscreteMeasure:
    """Weights on (grid node, lattice velocity) pairs."""

    grid: GridSpec
    velocities: np.ndarray
    weights: np.ndarray
    value: float
    meta: dict = field(default_factory=dict)

    def marginal(self) -> np.ndarray:
        return self.weights.sum(axis=1)

    def closedness_residual(self) -> float:
        """max over hat functions of |sum mu <grad phi_k, v>| (central differences)."""
        return float(np.max(np.abs(closedness_operator(self.grid, self.velocities)
                                   @ self.weights.ravel())))

    def mass(self) -> float:
        return float(self.weights.sum())

    def write_csv(self, path) -> None:
        d = self.grid.dim
        pts = self.grid.flat_points()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{k + 1}" for k in range(d)] + [f"v{k + 1}" for k in range(d)] + ["weight"])
            for i, j in zip(*np.nonzero(self.weights)):
                w.writerow([repr(float(a)) for a in pts[i]] + [repr(float(a)) for a in self.velocities[j]]
                           + [repr(float(self.weights[i, j]))])


def closedness_operator(grid: GridSpec, velocities: np.ndarray) -> np.ndarray:
    """Row k: coefficients of sum_ij mu_ij <grad phi_k(x_i), v_j> for the hat at node k."""
    N = grid.size
    M = len(velocities)
    C = np.zeros((N, N * M))
    inv = 1.0 / (2.0 * grid.dx)
    for k in range(N):
        idx = np.array(np.unravel_index(k, grid.shape))
        for a in range(grid.dim):
            for sgn in (1, -1):
                nb = idx.copy()
                nb[a] = (nb[a] - sgn) % grid.n  # node k - e_a carries +1, k + e_a carries -1
                i = int(np.ravel_multi_index(tuple(nb), grid.shape))
                C[k, i * M:(i + 1) * M] += sgn * inv * velocities[:, a]
    return C


def velocity_lattice(dim: int, m: int, vmax: float) -> np.ndarray:
    axis = np.linspace(-vmax, vmax, m)
    return np.stack(np.meshgrid(*[axis] * dim, indexing="ij"), -1).reshape(-1, dim)


def mather_lp(cfg: SolverConfig, model: LagrangianModel, m: int | None = None,
              v_lp: float | None = None) -> DiscreteMeasure:
    """Minimise the average Lagrangian over discretely closed probability measures.

    Velocities form an ``m``-point lattice per axis on ``[-v_lp, v_lp]`` with
    ``v_lp = v_max / 4`` by default.  Closedness is imposed against every grid
    hat function with central-difference gradients; the LP is solved by the
    embedded simplex.
    """
    grid = cfg.grid
    if grid.n > LP_MAX_N[grid.dim]:
        raise AubryError(f"LP size guard: n={grid.n} exceeds {LP_MAX_N[grid.dim]} in d={grid.dim}")
    m = LP_VELOCITIES[grid.dim] if m is None else m
    if m % 2 == 0:
        raise AubryError("velocity lattice needs an odd point count so that v = 0 is included")
    v_lp = cfg.v_max / 4.0 if v_lp is None else v_lp
    V = velocity_lattice(grid.dim, m, v_lp)
    X = grid.flat_points()
    N, M = len(X), len(V)
    cost = model.L(np.repeat(X, M, axis=0), np.tile(V, (N, 1)))
    C = closedness_operator(grid, V) * (2.0 * grid.dx)
    A = np.vstack([C, np.ones(N * M)])
    b = np.zeros(N + 1)
    b[-1] = 1.0
    res = simplex.solve(cost, A, b)
    W = res.x.reshape(N, M)
    mu = DiscreteMeasure(grid, V, W, float(cost @ res.x), {"pivots": res.iterations, "v_lp": v_lp})
    log.debug("mather LP: value %.6f after %d pivots", mu.value, res.iterations)
    return mu


def mather_set(mu: DiscreteMeasure, eps_supp: float = 1e-3) -> PointSet:
    marg = mu.marginal()
    cut = eps_supp * marg.max()
    nodes = np.flatnonzero(marg > cut)
    return PointSet(mu.grid, nodes, marg[nodes], [-1] * len(nodes), cut, "mather")


def projected_mather_set(cfg: SolverConfig, model: LagrangianModel, lp_grid: int = 64) -> PointSet:
    """Mather support from the LP on a grid of at most ``lp_grid`` nodes per axis,
    mapped to the nodes of ``cfg.grid``."""
    grid = cfg.grid
    n_lp = min(lp_grid, grid.n, LP_MAX_N[grid.dim])
    coarse = cfg if n_lp == grid.n else make_config(model, n_lp, lam=cfg.lam, c=cfg.c)
    mu = mather_lp(coarse, model)
    supp = mather_set(mu)
    nodes = sorted({grid.node_of(p) for p in supp.points()})
    return PointSet(grid, nodes, [0.0] * len(nodes), [-1] * len(nodes), supp.threshold,
                    "mather", {"lp_value": mu.value, "lp_grid": n_lp, "measure": mu})


def calibrated_set(u_minus: GridField, u_plus: GridField, eps_G: float | None = None) -> PointSet:
    """Nodes where ``u_minus - u_plus < eps_G`` (default 10 dx)."""
    if u_minus.grid != u_plus.grid:
        raise AubryError("fields live on different grids")
    la, lb = u_minus.meta.get("lam"), u_plus.meta.get("lam")
    if la is not None and lb is not None and abs(la - lb) > 1e-15:
        raise AubryError(f"fields computed at different discounts ({la} vs {lb})")
    eps_G = 10.0 * u_minus.grid.dx if eps_G is None else eps_G
    diff = (u_minus.values - u_plus.values).ravel()
    nodes = np.flatnonzero(diff < eps_G)
    return PointSet(u_minus.grid, nodes, diff[nodes], [-1] * len(nodes), eps_G, "calibrated",
                    {"lam": la})
