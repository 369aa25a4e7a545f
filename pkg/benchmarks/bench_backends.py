"""Time the numba kernels against the pure-numpy fallback.

    python3 benchmarks/bench_backends.py [--repeats 5]

Both backends are imported in the same process, so the env flag is not
needed here. The first numba call per signature compiles (or loads the
on-disk cache) and is excluded from the timings.
"""
import argparse
import time

import numpy as np

from entsearch import entanglement as ent
from entsearch import kernels, vqc


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    print(f"{'case':<34}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}")
    for n_q, batch in ((4, 8), (8, 8), (8, 64), (10, 8), (12, 8)):
        spec = vqc.CircuitSpec(ent.sample(ent.Constrained(n_q, 2), rng))
        f = rng.uniform(-np.pi, np.pi, (batch, n_q))
        theta = rng.uniform(-np.pi, np.pi, n_q)
        cases = {
            f"forward      n_q={n_q:<2} B={batch}": lambda be: vqc.forward_batch(spec, f, theta, backend=be),
            f"param-shift  n_q={n_q:<2} B={batch}": lambda be: vqc.gradients_batch(spec, f, theta, backend=be),
        }
        for name, call in cases.items():
            call(kernels.numba_backend)  # warm up
            t_np = best_of(lambda: call(kernels.numpy_backend), args.repeats)
            t_nb = best_of(lambda: call(kernels.numba_backend), args.repeats)
            a, b = call(kernels.numpy_backend), call(kernels.numba_backend)
            a = a[0] if isinstance(a, tuple) else a
            b = b[0] if isinstance(b, tuple) else b
            assert np.max(np.abs(a - b)) < 1e-12, name
            print(f"{name:<34}{t_np * 1e3:>10.2f}{t_nb * 1e3:>10.2f}{t_np / t_nb:>8.1f}x")


if __name__ == "__main__":
    main()
