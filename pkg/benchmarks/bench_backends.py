"""Compare the numba and pure-numpy kernel backends.

The backend is fixed at import time, so each backend runs in its own
interpreter. Usage::

    python benchmarks/bench_backends.py --images 100000 --repeats 5
"""
import argparse
import json
import os
import subprocess
import sys

WORKER = r"""
import json, sys, time
import numpy as np
from rebalance import BACKEND, RebalanceConfig, build_table, compute_frequencies, plan_epochs
from rebalance.analysis import generate_synthetic

n, repeats = int(sys.argv[1]), int(sys.argv[2])
index = generate_synthetic(8, 1.2, n, "poisson:1.5", multi_class=True, seed=1)
freqs = compute_frequencies(index)
out = {"backend": BACKEND}
for mode in ("draw", "expand"):
    times = []
    for _ in range(repeats + 1):  # first run pays for compilation
        start = time.perf_counter()
        table = build_table(freqs, index, RebalanceConfig())
        plan_epochs(table, mode, 1)
        times.append(time.perf_counter() - start)
    out[mode] = float(np.median(times[1:]))
print(json.dumps(out))
"""


def run(backend, images, repeats):
    env = dict(os.environ, REBALANCE_BACKEND=backend)
    proc = subprocess.run([sys.executable, "-c", WORKER, str(images), str(repeats)],
                          env=env, capture_output=True, text=True, check=True)
    return json.loads(proc.stdout)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--images", type=int, nargs="+", default=[10**4, 10**5, 10**6])
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args(argv)
    print(f"{'images':>9} {'mode':>7} {'numba ms':>10} {'numpy ms':>10} {'speedup':>8}")
    for n in args.images:
        fast, slow = run("numba", n, args.repeats), run("numpy", n, args.repeats)
        for mode in ("draw", "expand"):
            print(f"{n:>9} {mode:>7} {fast[mode] * 1e3:>10.2f} {slow[mode] * 1e3:>10.2f} "
                  f"{slow[mode] / fast[mode]:>7.1f}x")


if __name__ == "__main__":
    main()
