"""Time the compiled and pure-Python coordinate-descent kernels side by side.

Usage::

    python benchmarks/bench_kernels.py [--repeat 3] [--sizes 100x50 400x200 400x600]

Both backends solve the same penalized problems (a single fit at a
moderate penalty and a 50-point warm-started path); the script reports the
best wall time of each and checks that the solutions agree.
"""
import argparse
import time

import numpy as np

from undersmooth import _cd_py

try:
    from undersmooth import _cd_ext
except ImportError:  # extension not built
    _cd_ext = None


def problem(n, p, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, p))
    X[:, 1:] = 0.6 * X[:, :-1] + 0.8 * X[:, 1:]
    b = np.zeros(p)
    b[:5] = [2.0, -1.5, 1.0, 0.5, -0.5]
    y = X @ b + rng.standard_normal(n)
    X -= X.mean(axis=0)
    y -= y.mean()
    G, c = X.T @ X, X.T @ y
    lam_max = np.abs(c).max()
    return G, c, lam_max, float(y @ y), n


def best_time(fn, repeat):
    best, out = np.inf, None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def bench(n, p, repeat):
    G, c, lam_max, yy, n = problem(n, p)
    kkt = 0.5 * 1e-6 * n
    w = np.full(p, 0.1 * lam_max)
    lambdas = 2 * lam_max * np.geomspace(1, 1e-3, 50)
    psi = np.ones(p)
    rows = []
    backends = [("python", _cd_py)] + ([("cython", _cd_ext)] if _cd_ext else [])
    for task, call in (
        ("single", lambda m: m.cd_gram(G, c, w, np.zeros(p), kkt, 100_000)[0]),
        ("path50", lambda m: m.cd_path_gram(G, c, psi, lambdas, kkt, 100_000, yy, 0.999)[0]),
    ):
        res = {}
        for name, mod in backends:
            res[name] = best_time(lambda: call(mod), repeat)
        diff = (np.abs(res["python"][1] - res["cython"][1]).max() if "cython" in res else float("nan"))
        rows.append((f"{n}x{p}", task, res["python"][0], res.get("cython", (np.nan,))[0], diff))
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--sizes", nargs="*", default=["100x50", "400x200", "400x600"])
    args = ap.parse_args()
    if _cd_ext is None:
        print("compiled extension not built; timing the Python kernel only")
    print(f"{'size':>9} {'task':>7} {'python s':>10} {'cython s':>10} {'speedup':>8} {'max |diff|':>11}")
    for size in args.sizes:
        n, p = (int(v) for v in size.split("x"))
        for name, task, tp, tc, diff in bench(n, p, args.repeat):
            print(f"{name:>9} {task:>7} {tp:10.4f} {tc:10.4f} {tp / tc:8.1f} {diff:11.2e}")


if __name__ == "__main__":
    main()
