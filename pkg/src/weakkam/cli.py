"""Command-line front end.

Every subcommand reads an optional JSON run configuration, fills in the
defaults, writes its artifacts plus a ``manifest.json`` echoing the resolved
configuration, and exits with

    0  success / all checks pass
    1  configuration or input error
    2  solver failure (partial results are still written)
    3  a check failed (results are still written)
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import kernels
from .action import BARRIER_HORIZON, peierls_barrier
from .aubry import (LP_MAX_N, AubryError, BarrierCache, aubry_set, calibrated_set,
                    class_representatives, mather_lp, mather_set, projected_mather_set,
                    static_classes)
from .grid import GridError, GridField, GridSpec, read_field, write_field, write_field_csv
from .limits import SweepError, analyse_limit, discount_sweep
from .model import ModelError, build_model, load_model_json
from .properties import run_all
from .solver import (ConvergenceError, SolverError, critical_value, forward_solution,
                     ground_state, make_config, max_residual, residual)

log = logging.getLogger("weakkam")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_CHECK = 0, 1, 2, 3

PENDULUM = {"family": "mechanical", "dim": 1, "potential": {"id": "cos", "k": 1, "amp": 1.0},
            "perturbation": None}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """Resolved run parameters.  ``None`` entries are filled from the model."""

    model: dict = field(default_factory=lambda: dict(PENDULUM))
    n: int = 256
    dt: float | None = None
    v_max: float | None = None
    m: int = 17
    r: int = 2
    tol_fix: float = 1e-9
    k_max: int | None = None
    lam: float = 0.1
    c: float | None = None
    schedule: list = field(default_factory=lambda: [0.4, 0.2, 0.1, 0.05, 0.025])
    eps: float = 0.05
    eps_G: float | None = None
    eps_A: float | None = None
    horizon: float = BARRIER_HORIZON
    source: list | float = 0.0
    lp_grid: int = 64
    out: str = "weakkam_out"
    seed: int = 42
    threads: int | None = None

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            raw = load_model_json(text)
        except ModelError as exc:
            raise ConfigError(str(exc)) from exc
        if not isinstance(raw, dict):
            raise ConfigError("configuration must be a JSON object")
        known = {f.name for f in fields(cls)}
        extra = sorted(set(raw) - known)
        if extra:
            raise ConfigError(f"unknown configuration keys: {', '.join(extra)}")
        return cls(**raw)

    def validate(self) -> None:
        try:
            self._validate()
        except TypeError as exc:
            raise ConfigError(f"bad value type: {exc}") from exc

    def _validate(self) -> None:
        if not isinstance(self.model, dict):
            raise ConfigError("'model' must be an object")
        if int(self.n) != self.n:
            raise ConfigError("'n' must be an integer")
        if self.eps <= 0:
            raise ConfigError("'eps' must be positive")
        if self.lp_grid not in (16, 32, 64):
            raise ConfigError("'lp_grid' must be 16, 32 or 64")
        if not isinstance(self.schedule, list) or len(self.schedule) < 1:
            raise ConfigError("'schedule' must be a non-empty list")
        if self.threads is not None and self.threads < 1:
            raise ConfigError("'threads' must be >= 1")


@dataclass
class Context:
    run: RunConfig
    model: object
    cfg: object
    out: Path
    started: float

    def manifest(self, command: str, results: dict, files: list[str]) -> None:
        body = {"command": command, "config": asdict(self.run), "solver": self.cfg.to_json(),
                "backend": kernels.BACKEND, "results": results, "files": sorted(files),
                "elapsed_s": round(time.time() - self.started, 3)}
        (self.out / "manifest.json").write_text(json.dumps(body, indent=2, default=_default) + "\n")


def _default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return str(obj)


def _setup(args, need_out: bool = True) -> Context:
    run = RunConfig()
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        run = RunConfig.from_json(text)
    if args.grid is not None:
        run.n = args.grid
    if getattr(args, "lam", None) is not None:
        run.lam = args.lam
    if args.out is not None:
        run.out = args.out
    if args.threads is not None:
        run.threads = args.threads
    run.validate()
    try:
        model = build_model(run.model)
        cfg = make_config(model, int(run.n), lam=max(run.lam, 0.0), c=run.c or 0.0, dt=run.dt,
                          v_max=run.v_max, m=run.m, r=run.r, tol_fix=run.tol_fix, k_max=run.k_max)
    except (ModelError, GridError, ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    run.dt, run.v_max, run.n = cfg.dt, cfg.v_max, cfg.grid.n
    run.model = model.to_json()
    kernels.set_threads(run.threads)
    out = Path(run.out)
    if need_out:
        out.mkdir(parents=True, exist_ok=True)
    return Context(run, model, cfg, out, time.time())


def _critical(ctx: Context) -> float:
    if ctx.run.c is None:
        ctx.run.c = critical_value(ctx.model, ctx.cfg).value
    ctx.cfg = ctx.cfg.with_(c=ctx.run.c)
    return ctx.run.c


def _save(ctx: Context, name: str, fld: GridField, files: list[str]) -> None:
    write_field(ctx.out / f"{name}.wkf", fld)
    write_field_csv(ctx.out / f"{name}.csv", fld)
    files += [f"{name}.wkf", f"{name}.csv"]


def _lam_tag(lam: float) -> str:
    return f"{lam:.6g}"


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_critical(args) -> int:
    ctx = _setup(args)
    crit = critical_value(ctx.model, ctx.cfg)
    ctx.run.c = crit.value
    results = {"c": crit.value, "per_lambda": crit.per_lambda, "iterations": crit.iterations}
    if ctx.cfg.grid.n <= LP_MAX_N[ctx.model.dim]:
        mu = mather_lp(ctx.cfg.with_(c=crit.value), ctx.model)
        results["lp_value"] = mu.value
        results["lp_gap"] = abs(mu.value + crit.value)
    (ctx.out / "critical.json").write_text(json.dumps(results, indent=2, default=_default) + "\n")
    ctx.manifest("critical", results, ["critical.json"])
    print(f"c = {crit.value:.6f}")
    return EXIT_OK


def cmd_solve(args) -> int:
    ctx = _setup(args)
    if ctx.run.lam <= 0:
        print("error: lambda must be positive; use sweep for the limit", file=sys.stderr)
        return EXIT_CONFIG
    _critical(ctx)
    cfg, files, results = ctx.cfg.with_(lam=ctx.run.lam), [], {"c": ctx.run.c, "lam": ctx.run.lam}
    try:
        up = forward_solution(cfg, ctx.model)
    except ConvergenceError as exc:
        if exc.partial is not None:
            _save(ctx, "u_plus_partial", exc.partial, files)
        ctx.manifest("solve", {**results, "error": str(exc)}, files)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    _save(ctx, "u_plus", up, files)
    um = ground_state(up, cfg, ctx.model)
    suffix = "" if um.meta["converged"] else "_partial"
    _save(ctx, "u_minus" + suffix, um, files)
    G = calibrated_set(um, up, ctx.run.eps_G)
    mask = np.zeros(cfg.grid.size)
    mask[G.indices] = 1.0
    _save(ctx, "calibrated", GridField(cfg.grid, mask.reshape(cfg.grid.shape), {"eps_G": G.threshold}), files)
    G.write_csv(ctx.out / "calibrated_nodes.csv")
    files.append("calibrated_nodes.csv")
    res = residual(um, cfg, ctx.model)
    _save(ctx, "residual", res, files)
    results.update({"forward_iterations": up.meta["iterations"],
                    "ground_iterations": um.meta["iterations"],
                    "ground_converged": um.meta["converged"],
                    "calibrated_size": len(G), "max_residual": max_residual(res)})
    ctx.manifest("solve", results, files)
    print(f"lambda = {cfg.lam:g}  c = {ctx.run.c:.6f}  forward {up.meta['iterations']} its  "
          f"ground {um.meta['iterations']} its  |G| = {len(G)}  residual = {results['max_residual']:.4f}")
    if not um.meta["converged"]:
        print("error: ground state did not converge", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


def cmd_sweep(args) -> int:
    ctx = _setup(args)
    _critical(ctx)
    files: list[str] = []
    try:
        sw = discount_sweep(ctx.run.schedule, ctx.cfg, ctx.model, eps_G=ctx.run.eps_G, c=ctx.run.c)
        status = EXIT_OK
    except SweepError as exc:
        sw, status = exc.partial, EXIT_SOLVER
        print(f"error: {exc}", file=sys.stderr)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    for lam in sw.completed:
        tag = _lam_tag(lam)
        _save(ctx, f"u_plus_{tag}", sw.u_plus[lam], files)
        _save(ctx, f"u_minus_{tag}", sw.u_minus[lam], files)
        sw.calibrated[lam].write_csv(ctx.out / f"calibrated_{tag}.csv")
        files.append(f"calibrated_{tag}.csv")
    with open(ctx.out / "cauchy.csv", "w") as fh:
        fh.write("lam_from,lam_to,sup_difference\n")
        for a, b, d in zip(sw.completed, sw.completed[1:], sw.cauchy):
            fh.write(f"{a!r},{b!r},{d!r}\n")
    files.append("cauchy.csv")
    results = {"c": sw.c, "completed": sw.completed, "cauchy": sw.cauchy}
    if status != EXIT_OK:
        ctx.manifest("sweep", {**results, "error": sw.error}, files)
        return status

    la = analyse_limit(sw, ctx.cfg, ctx.model, ctx.run.eps, eps_A=ctx.run.eps_A,
                       horizon=ctx.run.horizon, lp_grid=ctx.run.lp_grid)
    A, classes, M, reports = la.aubry, la.classes, la.mather, la.reports
    classes.write_csv(ctx.out / "aubry.csv")
    reps = class_representatives(classes)
    _save(ctx, "barrier", la.barriers.get(reps[min(reps)]).field, files)
    files.append("aubry.csv")
    for rep in reports:
        print(rep.line())
    results.update({"aubry": [int(k) for k in A.indices], "classes": classes.n_classes,
                    "mather": [int(k) for k in M.indices], "lp_value": M.meta["lp_value"],
                    "checks": [r.to_json() for r in reports]})
    ctx.manifest("sweep", results, files)
    return EXIT_OK if all(r.passed for r in reports) else EXIT_CHECK


def cmd_aubry(args) -> int:
    ctx = _setup(args)
    _critical(ctx)
    A = aubry_set(ctx.cfg, ctx.model, eps_A=ctx.run.eps_A,
                  barriers=BarrierCache(ctx.cfg, ctx.model, ctx.run.horizon))
    classes = static_classes(A, A.meta["barriers"])
    classes.write_csv(ctx.out / "aubry.csv")
    files = ["aubry.csv"]
    results = {"c": ctx.run.c, "aubry": [int(k) for k in A.indices],
               "classes": classes.n_classes, "near_classes": classes.meta.get("near_classes", False)}
    if ctx.cfg.grid.n <= LP_MAX_N[ctx.model.dim]:
        mu = mather_lp(ctx.cfg, ctx.model)
        mu.write_csv(ctx.out / "mather_measure.csv")
        M = mather_set(mu)
        files.append("mather_measure.csv")
        results.update({"lp_value": mu.value, "mather": [int(k) for k in M.indices]})
    else:
        M = projected_mather_set(ctx.cfg, ctx.model, ctx.run.lp_grid)
        results.update({"lp_value": M.meta["lp_value"], "mather": [int(k) for k in M.indices],
                        "lp_grid": M.meta["lp_grid"]})
    ctx.manifest("aubry", results, files)
    pts = ", ".join(" ".join(f"{v:.4f}" for v in p) for p in A.points()[:12])
    more = " ..." if len(A) > 12 else ""
    print(f"c = {ctx.run.c:.6f}  |A| = {len(A)}  classes = {classes.n_classes}  A: {pts}{more}")
    return EXIT_OK


def cmd_barrier(args) -> int:
    ctx = _setup(args)
    _critical(ctx)
    src = np.atleast_1d(np.asarray(ctx.run.source if args.source is None else args.source, float))
    if src.size != ctx.model.dim:
        raise ConfigError(f"source point needs {ctx.model.dim} coordinate(s)")
    ctx.run.source = src.tolist()
    b = peierls_barrier(src, ctx.cfg, ctx.model, T=ctx.run.horizon)
    files: list[str] = []
    _save(ctx, "barrier", b.field, files)
    node = ctx.cfg.grid.node_of(src)
    results = {"c": ctx.run.c, "source_node": node, "self_barrier": float(b.values.flat[node]),
               "oscillation": b.oscillation, "oscillates": b.oscillates, "horizons": b.horizons}
    ctx.manifest("barrier", results, files)
    print(f"h(x, x) = {results['self_barrier']:.6f}  max h = {float(b.values.max()):.6f}  "
          f"oscillation = {b.oscillation:.3g}")
    return EXIT_OK


def cmd_check(args) -> int:
    ctx = _setup(args)
    if ctx.run.lam <= 0:
        raise ConfigError("the property suite needs a positive discount")
    _critical(ctx)
    cfg = ctx.cfg.with_(lam=ctx.run.lam)
    props = run_all(cfg, ctx.model, seed=ctx.run.seed)
    for p in props:
        print(p.line())
    results = {"c": ctx.run.c, "properties": [
        {"name": p.name, "passed": bool(p.passed), "measured": p.measured,
         "threshold": p.threshold} for p in props]}
    ctx.manifest("check", results, [])
    return EXIT_OK if all(p.passed for p in props) else EXIT_CHECK


def _write_dat_1d(path: Path, grid: GridSpec, columns: list[np.ndarray], header: str) -> None:
    data = np.column_stack([grid.axis()] + [c.ravel() for c in columns])
    np.savetxt(path, data, header=header, fmt="%.10g")


def cmd_plot(args) -> int:
    src = Path(args.directory)
    if not src.is_dir():
        print(f"error: {src} is not a directory", file=sys.stderr)
        return EXIT_CONFIG
    minus = {p.stem[len("u_minus_"):]: p for p in src.glob("u_minus_*.wkf")}
    plus = {p.stem[len("u_plus_"):]: p for p in src.glob("u_plus_*.wkf")}
    if (src / "u_minus.wkf").exists():
        minus["solve"] = src / "u_minus.wkf"
    if (src / "u_plus.wkf").exists():
        plus["solve"] = src / "u_plus.wkf"
    barrier = src / "barrier.wkf"
    if not minus and not barrier.exists():
        print(f"error: no field files in {src}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out) if args.out else src
    out.mkdir(parents=True, exist_ok=True)
    tags = sorted(minus, key=lambda t: -float(t) if t != "solve" else 0.0)
    script = ["# gnuplot script", "set terminal pngcairo size 900,600", "set key outside"]
    for tag in tags:
        um = read_field(minus[tag])
        up = read_field(plus[tag]) if tag in plus else None
        if um.grid.dim == 1:
            cols = [um.values] + ([up.values] if up is not None else [])
            _write_dat_1d(out / f"fields_{tag}.dat", um.grid, cols, "x u_minus u_plus")
        else:
            np.savetxt(out / f"u_minus_{tag}.dat", um.values, fmt="%.10g")
    dim = read_field(minus[tags[0]]).grid.dim if tags else read_field(barrier).grid.dim
    if tags and dim == 1:
        script += ["set output 'fields.png'", "set xlabel 'x'",
                   "plot " + ", \\\n     ".join(
                       f"'fields_{t}.dat' using 1:2 with lines title 'u- {t}'"
                       + (f", 'fields_{t}.dat' using 1:3 with lines dt 2 title 'u+ {t}'" if t in plus else "")
                       for t in tags)]
    elif tags:
        script += ["set output 'u_minus.png'", "set view map",
                   f"plot 'u_minus_{tags[-1]}.dat' matrix with image title 'u-'"]
    if barrier.exists():
        b = read_field(barrier)
        if b.grid.dim == 1:
            _write_dat_1d(out / "barrier.dat", b.grid, [b.values], "x h")
            script += ["set output 'barrier.png'", "plot 'barrier.dat' using 1:2 with lines title 'h'"]
        else:
            np.savetxt(out / "barrier.dat", b.values, fmt="%.10g")
            script += ["set output 'barrier.png'", "set view map",
                       "plot 'barrier.dat' matrix with image title 'h'"]
    cal = sorted(src.glob("calibrated_[0-9]*.csv"), key=lambda p: -float(p.stem.split("_")[1]))
    if cal:
        with open(out / "calibrated_size.dat", "w") as fh:
            fh.write("# lam size\n")
            for p in cal:
                size = max(0, sum(1 for _ in open(p)) - 1)
                fh.write(f"{p.stem.split('_')[1]} {size}\n")
        script += ["set output 'calibrated.png'", "set logscale x", "set xlabel 'lambda'",
                   "plot 'calibrated_size.dat' using 1:2 with linespoints title '|G|'", "unset logscale x"]
    (out / "plot.gp").write_text("\n".join(script) + "\n")
    print(f"wrote {out / 'plot.gp'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--out", help="output directory")
    common.add_argument("--grid", type=int, help="grid nodes per axis (power of two)")
    common.add_argument("--threads", type=int, help="worker threads for the compiled kernels")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="weakkam", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("critical", parents=[common], help="estimate the critical value").set_defaults(func=cmd_critical)
    p = sub.add_parser("solve", parents=[common], help="forward and ground-state fields at one discount")
    p.add_argument("--lambda", dest="lam", type=float)
    p.set_defaults(func=cmd_solve)
    sub.add_parser("sweep", parents=[common], help="vanishing-discount sweep with limit checks").set_defaults(func=cmd_sweep)
    sub.add_parser("aubry", parents=[common], help="Aubry set, static classes, Mather LP").set_defaults(func=cmd_aubry)
    p = sub.add_parser("barrier", parents=[common], help="barrier field from one source point")
    p.add_argument("--source", type=float, nargs="+")
    p.set_defaults(func=cmd_barrier)
    p = sub.add_parser("check", parents=[common], help="operator property suite")
    p.add_argument("--lambda", dest="lam", type=float)
    p.set_defaults(func=cmd_check)
    p = sub.add_parser("plot", help="emit a gnuplot script for a result directory")
    p.add_argument("directory")
    p.add_argument("--out", help="where to write plot files (default: the directory)")
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, AubryError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
