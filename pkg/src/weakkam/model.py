"""Tonelli Lagrangians on the unit flat torus.

Built-in families share the form

    L(x, v) = 1/2 |v - omega(x)|^2 - V(x) + phi(x)

(``omega`` is zero for the plain mechanical family), so every solver kernel
only needs two per-node arrays: the drift and the velocity-independent part
``U = -V + phi``.  Custom models carry their own vectorised evaluators.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

TWO_PI = 2.0 * math.pi

FAMILIES = ("mechanical", "mechanical-with-drift", "custom")


class ModelError(ValueError):
    """Invalid model description."""


class ConvexityError(ModelError):
    """The Lagrangian failed the sampled Tonelli checks."""


class LegendreError(RuntimeError):
    """Newton iteration for the Legendre transform did not converge."""


# ---------------------------------------------------------------------------
# torus geometry
# ---------------------------------------------------------------------------

def as_torus_point(x) -> np.ndarray:
    """Reduce coordinates to the half-open unit cube ``[0, 1)^d``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.mod(x, 1.0)
    # mod can return exactly 1.0 for tiny negative inputs
    y[y >= 1.0] = 0.0
    return y


def periodic_delta(x, y) -> np.ndarray:
    """Componentwise periodic displacement of magnitude at most 1/2."""
    d = np.abs(np.asarray(x, dtype=float) - np.asarray(y, dtype=float)) % 1.0
    return np.minimum(d, 1.0 - d)


def torus_metric(x, y) -> float | np.ndarray:
    """Periodic Euclidean distance on the unit torus.

    Broadcasts over leading axes; the last axis holds the coordinates.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim == 0:
        x = x[None]
    if y.ndim == 0:
        y = y[None]
    if x.shape[-1] != y.shape[-1]:
        raise ModelError(
            f"dimension mismatch: {x.shape[-1]} vs {y.shape[-1]}")
    d = np.sqrt(np.sum(periodic_delta(x, y) ** 2, axis=-1))
    return float(d) if np.ndim(d) == 0 else d


# ---------------------------------------------------------------------------
# potentials and drifts
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Potential:
    """Scalar field on the torus with an analytic gradient.

    ``value`` and ``grad`` take arrays of shape ``(..., d)``.
    """

    id: str
    params: dict
    value: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]

    def to_json(self) -> dict:
        return {"id": self.id, **self.params}


def _zero_potential(dim: int) -> Potential:
    return Potential(
        "zero", {},
        lambda X: np.zeros(np.shape(X)[:-1]),
        lambda X: np.zeros(np.shape(X)),
    )


def make_potential(spec: dict | None, dim: int) -> Potential:
    """Build a potential from its JSON description.

    Ids: ``zero``; ``cos`` (amp * prod_i cos(2 pi k x_i)); ``cos_sum``
    (amp * sum_i cos(2 pi k x_i)); ``two_bump`` (amp * sum_i cos(4 pi x_i));
    ``asym`` (amp * sum_i (cos 2 pi x_i + 0.3 sin 4 pi x_i)).
    """
    if spec is None:
        return _zero_potential(dim)
    if not isinstance(spec, dict) or "id" not in spec:
        raise ModelError(f"potential spec must be an object with 'id': {spec!r}")
    pid = spec["id"]
    amp = float(spec.get("amp", 1.0))
    k = int(spec.get("k", 1))

    if pid == "zero":
        return _zero_potential(dim)

    if pid == "cos":
        w = TWO_PI * k

        def value(X):
            return amp * np.prod(np.cos(w * X), axis=-1)

        def grad(X):
            c = np.cos(w * X)
            s = np.sin(w * X)
            g = np.empty(np.shape(X))
            for i in range(dim):
                others = np.prod(np.delete(c, i, axis=-1), axis=-1)
                g[..., i] = -amp * w * s[..., i] * others
            return g

        return Potential(pid, {"k": k, "amp": amp}, value, grad)

    if pid in ("cos_sum", "two_bump"):
        w = TWO_PI * (k if pid == "cos_sum" else 2)

        def value(X):
            return amp * np.sum(np.cos(w * X), axis=-1)

        def grad(X):
            return -amp * w * np.sin(w * X)

        params = {"k": k, "amp": amp} if pid == "cos_sum" else {"amp": amp}
        return Potential(pid, params, value, grad)

    if pid == "asym":
        def value(X):
            return amp * np.sum(np.cos(TWO_PI * X) + 0.3 * np.sin(2 * TWO_PI * X), axis=-1)

        def grad(X):
            return amp * (-TWO_PI * np.sin(TWO_PI * X)
                          + 0.3 * 2 * TWO_PI * np.cos(2 * TWO_PI * X))

        return Potential(pid, {"amp": amp}, value, grad)

    raise ModelError(f"unknown potential id {pid!r}")


@dataclass(frozen=True)
class Drift:
    id: str
    params: dict
    value: Callable[[np.ndarray], np.ndarray]
    jac: Callable[[np.ndarray], np.ndarray]

    def to_json(self) -> dict:
        return {"id": self.id, **self.params}


def make_drift(spec: dict | None, dim: int) -> Drift:
    """Drift field ``omega``: ``zero``, ``const`` (``omega``: list) or ``sin``
    (omega_i = amp * sin(2 pi x_i))."""
    if spec is None or spec.get("id") == "zero":
        return Drift("zero", {},
                     lambda X: np.zeros(np.shape(X)),
                     lambda X: np.zeros(np.shape(X) + (dim,)))
    did = spec.get("id")
    if did == "const":
        om = np.asarray(spec.get("omega", [0.0] * dim), dtype=float)
        if om.shape != (dim,):
            raise ModelError(f"const drift needs {dim} components")
        return Drift("const", {"omega": om.tolist()},
                     lambda X: np.broadcast_to(om, np.shape(X)).copy(),
                     lambda X: np.zeros(np.shape(X) + (dim,)))
    if did == "sin":
        amp = float(spec.get("amp", 1.0))

        def jac(X):
            J = np.zeros(np.shape(X) + (dim,))
            for i in range(dim):
                J[..., i, i] = amp * TWO_PI * np.cos(TWO_PI * X[..., i])
            return J

        return Drift("sin", {"amp": amp},
                     lambda X: amp * np.sin(TWO_PI * X), jac)
    raise ModelError(f"unknown drift id {did!r}")


# ---------------------------------------------------------------------------
# the model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CustomLagrangian:
    """User-supplied vectorised evaluators.

    Each callable takes ``X`` of shape ``(..., d)`` and ``V`` of shape
    ``(..., d)``; ``L`` returns ``(...)``, ``L_x`` and ``L_v`` return
    ``(..., d)`` and ``L_vv`` returns ``(..., d, d)``.
    """

    L: Callable
    L_x: Callable
    L_v: Callable
    L_vv: Callable
    name: str = "custom"


@dataclass(frozen=True)
class LagrangianModel:
    dim: int
    family: str
    potential: Potential
    drift: Drift
    perturbation: Potential
    custom: CustomLagrangian | None = None
    spec: dict = field(default_factory=dict)

    @property
    def quadratic(self) -> bool:
        """True when L = 1/2|v - omega|^2 + U(x) (exact kernels apply)."""
        return self.custom is None

    # -- evaluators --------------------------------------------------------
    def _xv(self, x, v):
        X = np.asarray(x, dtype=float)
        Vv = np.asarray(v, dtype=float)
        if X.ndim == 0:
            X = X[None]
        if Vv.ndim == 0:
            Vv = Vv[None]
        return X, Vv

    def U(self, x) -> np.ndarray:
        """Velocity-independent part ``-V(x) + phi(x)``."""
        X = np.asarray(x, dtype=float)
        return -self.potential.value(X) + self.perturbation.value(X)

    def U_grad(self, x) -> np.ndarray:
        X = np.asarray(x, dtype=float)
        return -self.potential.grad(X) + self.perturbation.grad(X)

    def L(self, x, v):
        X, Vv = self._xv(x, v)
        if self.custom is not None:
            return self.custom.L(X, Vv)
        w = Vv - self.drift.value(X)
        return 0.5 * np.sum(w * w, axis=-1) + self.U(X)

    def L_x(self, x, v):
        X, Vv = self._xv(x, v)
        if self.custom is not None:
            return self.custom.L_x(X, Vv)
        w = Vv - self.drift.value(X)
        J = self.drift.jac(X)  # J[..., i, j] = d omega_i / d x_j
        return -np.einsum("...ij,...i->...j", J, w) + self.U_grad(X)

    def L_v(self, x, v):
        X, Vv = self._xv(x, v)
        if self.custom is not None:
            return self.custom.L_v(X, Vv)
        return Vv - self.drift.value(X)

    def L_vv(self, x, v):
        X, Vv = self._xv(x, v)
        if self.custom is not None:
            return self.custom.L_vv(X, Vv)
        shape = np.broadcast_shapes(X.shape, Vv.shape)[:-1]
        return np.broadcast_to(np.eye(self.dim), shape + (self.dim, self.dim)).copy()

    def __call__(self, x, v):
        return self.L(x, v)

    # -- bounds used by defaults and a-priori estimates --------------------
    def sample_points(self, n: int = 64) -> np.ndarray:
        axes = [np.arange(n) / n] * self.dim
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.dim)

    def max_force(self) -> float:
        """max |grad(V - phi)| + max |omega| on a sample lattice."""
        X = self.sample_points(128 if self.dim == 1 else 64)
        g = np.sqrt(np.sum(self.U_grad(X) ** 2, axis=-1)).max()
        om = np.sqrt(np.sum(self.drift.value(X) ** 2, axis=-1)).max()
        return float(g + om)

    def default_v_max(self) -> float:
        return 4.0 * (1.0 + self.max_force())

    def max_L(self, speed: float) -> float:
        """C_k = max{L(x, v) : |v| <= k} (sampled)."""
        X = self.sample_points(64 if self.dim == 1 else 32)
        if self.quadratic:
            om = np.sqrt(np.sum(self.drift.value(X) ** 2, axis=-1))
            return float(np.max(0.5 * (speed + om) ** 2 + self.U(X)))
        dirs = _unit_directions(self.dim, 16)
        best = -np.inf
        for r in np.linspace(0.0, speed, 9):
            for e in dirs:
                best = max(best, float(np.max(self.L(X, r * e))))
        return best

    def min_L(self) -> float:
        """min over (x, v) of L; C(0) in the Lipschitz estimate is its negative."""
        X = self.sample_points(128 if self.dim == 1 else 64)
        if self.quadratic:
            return float(np.min(self.U(X)))
        vs = np.linspace(-4, 4, 33)
        grids = np.stack(np.meshgrid(*[vs] * self.dim, indexing="ij"), -1).reshape(-1, self.dim)
        return float(min(np.min(self.L(X, v)) for v in grids))

    def to_json(self) -> dict:
        return dict(self.spec)


def _unit_directions(dim: int, k: int) -> np.ndarray:
    if dim == 1:
        return np.array([[1.0], [-1.0]])
    th = np.linspace(0, TWO_PI, k, endpoint=False)
    return np.stack([np.cos(th), np.sin(th)], axis=-1)


def _quartic(potential: Potential, perturbation: Potential) -> CustomLagrangian:
    def L(X, V):
        r2 = np.sum(V * V, axis=-1)
        return 0.25 * r2 * r2 - potential.value(X) + perturbation.value(X)

    def L_x(X, V):
        return np.broadcast_to(-potential.grad(X) + perturbation.grad(X),
                               np.broadcast_shapes(X.shape, V.shape)).copy()

    def L_v(X, V):
        r2 = np.sum(V * V, axis=-1, keepdims=True)
        return np.broadcast_to(r2 * V, np.broadcast_shapes(X.shape, V.shape)).copy()

    def L_vv(X, V):
        d = V.shape[-1]
        r2 = np.sum(V * V, axis=-1)[..., None, None]
        out = r2 * np.eye(d) + 2.0 * V[..., :, None] * V[..., None, :]
        shape = np.broadcast_shapes(X.shape, V.shape)[:-1] + (d, d)
        return np.broadcast_to(out, shape).copy()

    return CustomLagrangian(L, L_x, L_v, L_vv, name="quartic")


CUSTOM_LIBRARY = {"quartic": _quartic}


def build_model(spec: dict | str, validate: bool = True) -> LagrangianModel:
    """Construct a model from its JSON description.

    Example: ``{"family": "mechanical", "dim": 1,
    "potential": {"id": "cos", "k": 1, "amp": 1.0}, "perturbation": null}``.
    Custom models are picked by ``"id"`` from :data:`CUSTOM_LIBRARY` or
    assembled directly with :func:`custom_model`.
    """
    if isinstance(spec, str):
        spec = json.loads(spec)
    spec = dict(spec)
    family = spec.get("family")
    if family not in FAMILIES:
        raise ModelError(f"unknown family tag {family!r}")
    dim = int(spec.get("dim", 1))
    if dim not in (1, 2):
        raise ModelError(f"dimension must be 1 or 2, got {dim}")

    potential = make_potential(spec.get("potential"), dim)
    perturbation = make_potential(spec.get("perturbation"), dim)
    if family == "mechanical":
        if spec.get("drift") not in (None, {"id": "zero"}):
            raise ModelError("mechanical family takes no drift; use mechanical-with-drift")
        drift = make_drift(None, dim)
    elif family == "mechanical-with-drift":
        if spec.get("drift") is None:
            raise ModelError("mechanical-with-drift requires a 'drift' object")
        drift = make_drift(spec["drift"], dim)
    else:
        drift = make_drift(None, dim)

    custom = None
    if family == "custom":
        cid = spec.get("id")
        if cid not in CUSTOM_LIBRARY:
            raise ModelError(f"unknown custom Lagrangian id {cid!r}")
        custom = CUSTOM_LIBRARY[cid](potential, perturbation)

    echo = {"family": family, "dim": dim, "potential": potential.to_json(),
            "perturbation": None if spec.get("perturbation") is None else perturbation.to_json()}
    if family == "mechanical-with-drift":
        echo["drift"] = drift.to_json()
    if family == "custom":
        echo["id"] = spec["id"]
    model = LagrangianModel(dim, family, potential, drift, perturbation, custom, echo)
    if validate:
        check_tonelli(model)
    return model


def custom_model(dim: int, lagrangian: CustomLagrangian, validate: bool = True) -> LagrangianModel:
    model = LagrangianModel(dim, "custom", _zero_potential(dim), make_drift(None, dim),
                            _zero_potential(dim), lagrangian,
                            {"family": "custom", "dim": dim, "id": lagrangian.name})
    if validate:
        check_tonelli(model)
    return model


def check_tonelli(model: LagrangianModel, n: int = 16, m: int = 17) -> None:
    """Sampled positive-definiteness and superlinearity checks.

    Raises :class:`ConvexityError` on failure.
    """
    X = model.sample_points(n)
    vmax = model.default_v_max() if model.quadratic else 8.0
    axis = np.linspace(-vmax, vmax, m)
    Vs = np.stack(np.meshgrid(*[axis] * model.dim, indexing="ij"), -1).reshape(-1, model.dim)
    XX = np.repeat(X, len(Vs), axis=0)
    VV = np.tile(Vs, (len(X), 1))
    H = model.L_vv(XX, VV)
    eig = np.linalg.eigvalsh(H)
    if not np.all(eig > 0):
        bad = int(np.argmin(eig.min(axis=-1)))
        raise ConvexityError(
            f"d2L/dv2 not positive definite at x={XX[bad]}, v={VV[bad]}")
    for e in np.eye(model.dim):
        for sgn in (1.0, -1.0):
            ratios = [np.min(model.L(X, sgn * R * e)) / R for R in (10.0, 100.0, 1000.0)]
            if not (ratios[0] < ratios[1] < ratios[2]):
                raise ConvexityError(f"L(x, R e)/R not increasing along {sgn * e}: {ratios}")


# ---------------------------------------------------------------------------
# Legendre transform
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HamiltonianValue:
    value: float
    velocity: np.ndarray


def lagrangian(model: LagrangianModel, x, v) -> float:
    return float(np.asarray(model.L(as_torus_point(x), np.atleast_1d(v))).reshape(()))


def hamiltonian(model: LagrangianModel, x, p, tol: float = 1e-10,
                max_iter: int = 100) -> HamiltonianValue:
    """H(x, p) = sup_v <p, v> - L(x, v) with its maximising velocity."""
    x = as_torus_point(x)
    p = np.atleast_1d(np.asarray(p, dtype=float))
    if model.quadratic:
        om = model.drift.value(x)
        v = p + om
        val = 0.5 * float(p @ p) + float(p @ om) - float(model.U(x))
        return HamiltonianValue(val, v)
    v = _legendre_newton(model, x, p, tol, max_iter)
    val = float(p @ v) - float(model.L(x, v))
    return HamiltonianValue(val, v)


def _legendre_newton(model, x, p, tol, max_iter):
    v = p.copy()

    def objective(w):
        return float(p @ w) - float(model.L(x, w))

    for _ in range(max_iter):
        g = p - model.L_v(x, v)
        if np.max(np.abs(g)) <= tol:
            return v
        Hs = model.L_vv(x, v)
        try:
            step = np.linalg.solve(Hs, g)
        except np.linalg.LinAlgError:
            break
        if not np.all(np.isfinite(step)):
            break
        f0 = objective(v)
        t = 1.0
        while t > 1e-12 and objective(v + t * step) < f0 - 1e-14 * (1 + abs(f0)):
            t *= 0.5
        v = v + t * step
    g = p - model.L_v(x, v)
    if np.max(np.abs(g)) <= tol:
        return v
    if model.dim == 1:
        return _legendre_bisect(model, x, p, tol)
    raise LegendreError(f"Newton did not converge for x={x}, p={p}")


def _legendre_bisect(model, x, p, tol):
    def g(w):
        return float(model.L_v(x, np.array([w]))[0] - p[0])

    lo, hi = -1.0, 1.0
    while g(lo) > 0:
        lo *= 2
        if lo < -1e8:
            raise LegendreError("no bracket for the Legendre maximiser")
    while g(hi) < 0:
        hi *= 2
        if hi > 1e8:
            raise LegendreError("no bracket for the Legendre maximiser")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if g(mid) < 0:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-15 * max(1.0, abs(mid)):
            break
    v = np.array([0.5 * (lo + hi)])
    if abs(g(v[0])) > max(tol, 1e-8):
        raise LegendreError("bisection failed to resolve dL/dv = p")
    return v


def hamiltonian_array(model: LagrangianModel, X: np.ndarray, P: np.ndarray) -> np.ndarray:
    """Vectorised H over arrays of shape ``(..., d)``."""
    X = np.asarray(X, dtype=float)
    P = np.asarray(P, dtype=float)
    if model.quadratic:
        om = model.drift.value(X)
        return 0.5 * np.sum(P * P, -1) + np.sum(P * om, -1) - model.U(X)
    shape = np.broadcast_shapes(X.shape, P.shape)
    Xf = np.broadcast_to(X, shape).reshape(-1, model.dim)
    Pf = np.broadcast_to(P, shape).reshape(-1, model.dim)
    out = np.array([hamiltonian(model, xi, pi).value for xi, pi in zip(Xf, Pf)])
    return out.reshape(shape[:-1])


def load_model_json(text: str) -> dict:
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelError(f"malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc


def describe(model: LagrangianModel) -> dict[str, Any]:
    return {"family": model.family, "dim": model.dim, "spec": model.spec}
