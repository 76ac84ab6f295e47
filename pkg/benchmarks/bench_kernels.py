"""Compare the compiled and pure-Python kernel backends.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Both backends are fed identical inputs; results are checked for equality
before timings are reported.
"""

import argparse
import timeit

import numpy as np

from pillarforge.kernels import available_backends


def _boxes(rng, n):
    return np.column_stack([rng.uniform(-10, 10, (n, 2)), rng.uniform(1, 5, n), rng.uniform(0.5, 2.5, n),
                            rng.uniform(-np.pi, np.pi, n)])


def cases(rng):
    pts_small, pts_large = rng.normal(size=(200, 3)), rng.normal(size=(5000, 3))
    a, b = _boxes(rng, 200), _boxes(rng, 200)
    return {
        "fps 200 -> 40": lambda m: m.fps(pts_small, 40, 0),
        "fps 5000 -> 1000": lambda m: m.fps(pts_large, 1000, 0),
        "pairwise BEV area 200x200": lambda m: m.pairwise_inter_area(a, b),
    }


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args(argv)

    backends = available_backends()
    if "cython" not in backends:
        print("compiled backend not built; only the Python fallback is available")
    rng = np.random.default_rng(0)
    print(f"{'case':<28}" + "".join(f"{name:>14}" for name in backends) + f"{'speedup':>10}")
    for label, fn in cases(rng).items():
        results = {name: fn(mod) for name, mod in backends.items()}
        ref = results["python"]
        for name, res in results.items():
            if not np.array_equal(res, ref):
                raise SystemExit(f"{label}: {name} disagrees with the Python fallback")
        times = {}
        for name, mod in backends.items():
            number = 1 if name == "python" else 10
            times[name] = min(timeit.repeat(lambda: fn(mod), number=number, repeat=args.repeat)) / number
        row = f"{label:<28}" + "".join(f"{times[n] * 1e3:>12.2f}ms" for n in backends)
        if "cython" in times:
            row += f"{times['python'] / times['cython']:>9.0f}x"
        print(row)


if __name__ == "__main__":
    main()
