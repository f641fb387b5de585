"""Compare the compiled and pure-numpy step kernels.

Run with ``python3 benchmarks/bench_kernels.py``.  Both backends are timed
on the same random fields; the script also reports the largest difference
between their outputs, which should be zero.
"""

import argparse
import time

import numpy as np

from weakkam.model import build_model
from weakkam.solver import make_config, raw_step, weights

MODELS = {
    1: {"family": "mechanical", "dim": 1, "potential": {"id": "cos", "k": 1, "amp": 1.0}},
    2: {"family": "mechanical", "dim": 2, "potential": {"id": "cos_sum", "k": 1, "amp": 1.0}},
}


def time_step(values, A, W, cfg, model, backend, repeat):
    raw_step(values, A, W, cfg, model, backend=backend)  # warm-up / compile
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out, _ = raw_step(values, A, W, cfg, model, backend=backend)
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--sizes-1d", type=int, nargs="+", default=[256, 1024, 4096])
    ap.add_argument("--sizes-2d", type=int, nargs="+", default=[32, 64])
    args = ap.parse_args()
    rng = np.random.default_rng(42)

    print(f"{'dim':>3} {'n':>6} {'numba ms':>10} {'numpy ms':>10} {'speedup':>8} {'max diff':>9}")
    for dim, sizes in ((1, args.sizes_1d), (2, args.sizes_2d)):
        model = build_model(MODELS[dim])
        for n in sizes:
            cfg = make_config(model, n, lam=0.1, c=1.0)
            A, W, _ = weights(cfg.lam, cfg.dt)
            values = rng.normal(size=cfg.grid.shape).cumsum(axis=0) * cfg.grid.dx
            t_nb, out_nb = time_step(values, A, W, cfg, model, "numba", args.repeat)
            t_np, out_np = time_step(values, A, W, cfg, model, "numpy", args.repeat)
            diff = float(np.max(np.abs(out_nb - out_np)))
            print(f"{dim:>3} {n:>6} {1e3 * t_nb:>10.3f} {1e3 * t_np:>10.3f} "
                  f"{t_np / t_nb:>8.1f} {diff:>9.1e}")


if __name__ == "__main__":
    main()
