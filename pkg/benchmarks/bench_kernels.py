"""Compare the numba-compiled kernels with the plain numpy fallback.

Each mode runs in its own interpreter because the switch is read at import
time. Usage::

    python benchmarks/bench_kernels.py [--repeat 3]

The numba timings exclude compilation (one warm-up call is made first, and
compiled kernels are cached on disk after the first run).
"""

import argparse
import json
import os
import subprocess
import sys
import time

WORKER = r"""
import json, sys, time
import numpy as np
from mixedfleet import _jit
from mixedfleet.model import NetworkSpec, build_derived, generate_grid
from mixedfleet.cv_eq import solve_cv_equilibrium
from mixedfleet.bilevel import av_dispatch_lp, evaluate_profit

repeat = int(sys.argv[1])

def random_net(rng, L):
    d = rng.uniform(0.0, 2.0, (L, L)) * (rng.random((L, L)) > 0.3)
    t = rng.uniform(0.5, 3.0, (L, L))
    return build_derived(NetworkSpec(L, d, t, 1.0, 0.1, 0.5))

def cases():
    rng = np.random.default_rng(0)
    nets = [random_net(rng, L) for L in (2, 3, 4, 5) for _ in range(5)]
    grid = build_derived(generate_grid(3, 3, seed=1))
    ys = [grid.b * u for u in np.random.default_rng(1).uniform(0.0, 1.0, (10, grid.L))]
    return {
        "cv equilibrium (20 random networks)": lambda: [solve_cv_equilibrium(n, n.b, 3.0) for n in nets],
        "AV dispatch LP (20 random networks)": lambda: [av_dispatch_lp(n, n.b, 2.0) for n in nets],
        "bi-level profit (3x3 grid, 10 points)": lambda: [evaluate_profit(grid, y, 4.0, 8.0) for y in ys],
    }

out = {"numba": _jit.NUMBA_ENABLED}
for name, fn in cases().items():
    fn()  # warm-up: compiles kernels and fills the end-component cache
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    out[name] = best
print(json.dumps(out))
"""


def run(disable, repeat):
    env = dict(os.environ)
    env.pop("MIXEDFLEET_DISABLE_NUMBA", None)
    if disable:
        env["MIXEDFLEET_DISABLE_NUMBA"] = "1"
    res = subprocess.run([sys.executable, "-c", WORKER, str(repeat)], env=env,
                         capture_output=True, text=True, check=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    t0 = time.perf_counter()
    fast = run(False, args.repeat)
    slow = run(True, args.repeat)
    if not fast.pop("numba"):
        print("warning: numba is not importable, both columns use the fallback")
    slow.pop("numba")

    width = max(len(k) for k in fast)
    print(f"{'case':<{width}}  {'numba [s]':>10}  {'numpy [s]':>10}  {'speed-up':>8}")
    for name in fast:
        print(f"{name:<{width}}  {fast[name]:>10.4f}  {slow[name]:>10.4f}  {slow[name] / fast[name]:>7.1f}x")
    print(f"total wall time {time.perf_counter() - t0:.1f} s")


if __name__ == "__main__":
    main()
