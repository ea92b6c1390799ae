"""Time the numba kernels against the pure-numpy fallback.

    python benchmarks/bench_backends.py [--points 20000] [--repeat 3]

Each workload runs once per backend to warm up (numba compiles on first
call), then the best of ``--repeat`` timings is reported together with the
largest disagreement between the two backends' outputs (deterministic
workloads only).
"""
import argparse
import math
import time

import numpy as np

from latskg._accel import HAVE_NUMBA, use_backend
from latskg.construction import build_chain
from latskg.gaussian import log_periodic_density, randomized_round
from latskg.lattice import Lattice, nearest_coords


def _best(func, repeat):
    func()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        func()
        times.append(time.perf_counter() - t0)
    return min(times)


def workloads(points, rng):
    hexagonal = Lattice(np.array([[1.0, 0.5], [0.0, math.sqrt(3) / 2]]))
    chain = build_chain(4, (0.05, 0.2, 0.8), np.random.default_rng(3))
    L6 = build_chain(6, (0.05, 0.2, 0.8), np.random.default_rng(1)).lattice1
    X2 = rng.normal(size=(points, 2)) * 3
    X4 = rng.normal(size=(points, 4)) * 3
    # the numpy enumeration in six dimensions is slow, so it gets a tenth of the points
    X6 = rng.normal(size=(max(points // 10, 1), 6)) * 3
    seed = int(rng.integers(2 ** 32))
    # (name, function, deterministic); the samplers draw from the same law on both
    # backends but visit candidates in a different order, so draws are not pathwise equal
    return [
        ("nearest point, hexagonal", lambda: nearest_coords(hexagonal, X2), True),
        ("nearest point, n=4 chain L2", lambda: nearest_coords(chain.lattice2, X4), True),
        ("nearest point, n=6", lambda: nearest_coords(L6, X6), True),
        ("periodic density, n=4 L1", lambda: log_periodic_density(chain.lattice1, 0.25, X4), True),
        ("randomized rounding, n=4 L1",
         lambda: randomized_round(chain.lattice1, 0.2, X4, np.random.default_rng(seed)), False),
    ]


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--points", type=int, default=20_000)
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args(argv)
    if not HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    rng = np.random.default_rng(0)
    print(f"{'workload':32s} {'numba s':>10s} {'numpy s':>10s} {'speed-up':>9s} {'max diff':>10s}")
    for name, func, exact in workloads(args.points, rng):
        results, times = {}, {}
        for backend in ("numba", "numpy"):
            with use_backend(backend):
                times[backend] = _best(func, args.repeat)
                results[backend] = np.asarray(func(), dtype=np.float64)
        if exact:
            diff = f"{float(np.max(np.abs(results['numba'] - results['numpy']))):10.2e}"
        else:
            diff = f"{'(random)':>10s}"
        print(f"{name:32s} {times['numba']:10.4f} {times['numpy']:10.4f} "
              f"{times['numpy'] / times['numba']:8.1f}x {diff}")


if __name__ == "__main__":
    main()
