"""Compare the numba and numpy kernel backends on the builtin grids.

Each backend runs in its own interpreter because the choice is fixed at
import time (PSOMDP_DISABLE_NUMBA). Example:

    python3 benchmarks/bench_kernels.py --grid benchmark_6x11 --k 4,5 --repeats 3
"""
import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, time
import numpy as np
from psomdp import backend_name
from psomdp.domains import builtin, build_gridworld
from psomdp.model import compose
from psomdp.solver import value_iteration
from psomdp.bnb import solve_bnb

grid, ks, repeats = sys.argv[1], [int(x) for x in sys.argv[2].split(",")], int(sys.argv[3])
spec = builtin(grid)
# warm-up so JIT compilation is not timed
m = build_gridworld(spec.with_params(checkin_period=2))
value_iteration(compose(m, 2)); solve_bnb(m)
out = []
for k in ks:
    m = build_gridworld(spec.with_params(checkin_period=k))
    for r in range(repeats):
        t0 = time.perf_counter(); c = compose(m, k); t1 = time.perf_counter()
        sol = value_iteration(c); t2 = time.perf_counter()
        _, st = solve_bnb(m); t3 = time.perf_counter()
        out.append({"backend": backend_name(), "k": k, "repeat": r, "compose": t1 - t0,
                    "vi": t2 - t1, "bnb": t3 - t2, "checksum": float(np.sum(sol.values))})
print(json.dumps(out))
"""


def run(backend, grid, ks, repeats):
    env = dict(os.environ)
    env["PSOMDP_DISABLE_NUMBA"] = "1" if backend == "numpy" else "0"
    res = subprocess.run([sys.executable, "-c", WORKER, grid, ks, str(repeats)],
                         env=env, capture_output=True, text=True, check=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--grid", default="benchmark_6x11")
    ap.add_argument("--k", default="3,4,5")
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args()

    rows = run("numba", args.grid, args.k, args.repeats) + run("numpy", args.grid, args.k,
                                                               args.repeats)
    print("backend,k,repeat,compose_seconds,vi_seconds,bnb_seconds,checksum")
    for r in rows:
        print(f"{r['backend']},{r['k']},{r['repeat']},{r['compose']:.5f},{r['vi']:.5f},"
              f"{r['bnb']:.5f},{r['checksum']:.12f}")
    best = {}
    for r in rows:
        key = (r["backend"], r["k"])
        tot = r["compose"] + r["vi"]
        best[key] = min(best.get(key, tot), tot)
    for k in sorted({r["k"] for r in rows}):
        nb, npy = best[("numba", k)], best[("numpy", k)]
        print(f"# k={k}: compose+vi best numba {nb:.4f}s numpy {npy:.4f}s "
              f"speedup {npy / nb:.2f}x", file=sys.stderr)


if __name__ == "__main__":
    main()
