"""Time the numba kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py [--sizes 20 80 320] [--repeat 20]
"""

import argparse
import time

import numpy as np

from relscene import kernels


def random_boxes(rng, n):
    centers = rng.uniform(0, 6, (n, 3))
    sizes = rng.uniform(0.2, 1.5, (n, 3))
    return centers, sizes


def timed(fn, *args, repeat):
    fn(*args)  # warm-up; triggers compilation for the numba variant
    t0 = time.perf_counter()
    for _ in range(repeat):
        out = fn(*args)
    return (time.perf_counter() - t0) / repeat * 1000, out


def same(a, b):
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    return np.array_equal(a, b)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[20, 80, 320])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(args.seed)

    print(f"{'kernel':<14}{'n':>6}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}  equal")
    for n in args.sizes:
        centers, sizes = random_boxes(rng, n)
        mask = np.zeros((4 * n, 4 * n), bool)
        mask[n : 3 * n, n // 2 : 3 * n] = True
        cases = [
            ("binary_masks", kernels.binary_masks_np, kernels.binary_masks_nb, (centers, sizes, 0.05, 1.0, 0.25)),
            ("extrema", kernels.extrema_np, kernels.extrema_nb, (centers,)),
            ("between", kernels.between_np, kernels.between_nb, (centers, sizes, 0.5)),
            ("outline", kernels.outline_np, kernels.outline_nb, (mask, 3)),
        ]
        for name, f_np, f_nb, fargs in cases:
            # the cubic between scan gets slow on the numpy side; keep runs short
            rep = max(1, args.repeat // (10 if name == "between" and n > 100 else 1))
            t_np, r_np = timed(f_np, *fargs, repeat=rep)
            t_nb, r_nb = timed(f_nb, *fargs, repeat=rep)
            print(f"{name:<14}{n:>6}{t_np:>12.3f}{t_nb:>12.3f}{t_np / t_nb:>9.1f}x  {same(r_np, r_nb)}")


if __name__ == "__main__":
    main()
