"""Time the particle kernel with numba and with the numpy fallback.

    python3 benchmarks/bench_kernels.py [--molecules 1000] [--steps 1500] [--repeats 3]

Both backends consume identical random streams, so the script also checks
that they absorb the same molecules at the same steps.
"""
import argparse
import math
import time

import numpy as np

from molmimo._accel import USE_NUMBA
from molmimo.geometry import CuboidSpec, SystemParams, place_topology
from molmimo.sim import first_passage, replication_streams


def run(sys_, n, n_steps, dt, use_numba, body):
    topo = place_topology(sys_, CuboidSpec(enabled=body))
    rng, key = replication_streams(0, 0)
    t0 = time.perf_counter()
    out = first_passage(topo.tx[0], n, n_steps, topo, math.sqrt(2 * sys_.D * dt), rng, key,
                        use_numba=use_numba)
    return time.perf_counter() - t0, out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--molecules", type=int, default=1000)
    ap.add_argument("--steps", type=int, default=1500)
    ap.add_argument("--dt", type=float, default=1e-3)
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--no-body", action="store_true")
    args = ap.parse_args()
    sys_ = SystemParams(2.0, 1.0, 3.0, 100.0)
    body = not args.no_body
    backends = [False] + ([True] if USE_NUMBA else [])
    if USE_NUMBA:
        run(sys_, 10, 10, args.dt, True, body)  # compile
    results = {}
    for nb in backends:
        times = []
        for _ in range(args.repeats):
            dt, out = run(sys_, args.molecules, args.steps, args.dt, nb, body)
            times.append(dt)
        results[nb] = (min(times), out)
        name = "numba" if nb else "numpy"
        print(f"{name:6s} best {min(times):.3f} s  ({args.molecules} molecules x {args.steps} steps)")
    if len(results) == 2:
        (a, (ra, sa)), (b, (rb, sb)) = results[False], results[True]
        same = np.array_equal(ra, rb) and np.array_equal(sa, sb)
        print(f"speed-up {a / b:.1f}x, identical outcomes: {same}")


if __name__ == "__main__":
    main()
