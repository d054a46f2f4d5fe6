"""Compare the compiled and numpy kernel backends.

Times the three hot kernels (Gram/moment accumulation, basis prediction and
the stochastic exponential with its running integral) plus one end-to-end
regression solve, and prints a table of median wall times.

    python3 benchmarks/bench_kernels.py [--paths 200000] [--threads 4] [--repeat 5]
"""
import argparse
import statistics
import time

import numpy as np

from zbsde import (CompensatorSpec, WienerIntegral, ZeroDriver, _backend, build_K, make_grid,
                   simulate_brownian, solve_regression)


def _median_time(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def cases(n_paths, threads):
    rng = np.random.default_rng(0)
    V = np.ascontiguousarray(rng.standard_normal((n_paths, 2)))
    powers = np.array([[i, j] for i in range(4) for j in range(4) if i + j <= 3], dtype=np.int32)
    Y = np.ascontiguousarray(rng.standard_normal((n_paths, 2)))
    coef = np.ascontiguousarray(rng.standard_normal((powers.shape[0], 2)))
    n = 100
    dB = np.ascontiguousarray(rng.standard_normal((n_paths, n)) * 0.1)
    slope = np.ones(n)
    dt = np.full(n, 0.01)
    drift = 0.5 * slope ** 2 * dt
    paths = simulate_brownian(make_grid(1.0, 50), n_paths // 4, seed=1)
    comp = build_K(paths, CompensatorSpec(1.0, 1.0, "case1"))
    xi = WienerIntegral(lambda t: t - 1.0)
    return {
        "gram": lambda: _backend.kernels().gram(V, powers, Y, True, threads),
        "predict": lambda: _backend.kernels().predict(V, powers, coef, threads),
        "stoch_exp": lambda: _backend.kernels().stoch_exp(dB, slope, drift, dt, threads),
        "solve_regression": lambda: solve_regression(xi, ZeroDriver(), comp, paths,
                                                     stderr_batches=0),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--paths", type=int, default=200_000)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    backends = _backend.available()
    bench = cases(args.paths, args.threads)
    results = {}
    previous = _backend.backend_name()
    try:
        for b in backends:
            _backend.use_backend(b)
            for name, fn in bench.items():
                fn()  # warm-up
                results[name, b] = _median_time(fn, args.repeat)
    finally:
        _backend.use_backend(previous)
    print(f"paths={args.paths} threads={args.threads} repeat={args.repeat}")
    print(f"{'kernel':<18}" + "".join(f"{b:>12}" for b in backends)
          + ("     speedup" if len(backends) > 1 else ""))
    for name in bench:
        line = f"{name:<18}" + "".join(f"{results[name, b] * 1e3:>10.1f}ms" for b in backends)
        if "cython" in backends and "python" in backends:
            line += f"{results[name, 'python'] / results[name, 'cython']:>11.2f}x"
        print(line)


if __name__ == "__main__":
    main()
