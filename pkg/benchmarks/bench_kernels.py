"""Time the numba and numpy kernel backends on training-sized inputs.

Usage::

    python benchmarks/bench_kernels.py [--repeat 5] [--seed 0]

Each kernel is run once per backend before timing so that numba compilation
(or loading from its on-disk cache) is excluded. Reports the best of
``--repeat`` wall-clock timings and checks that both backends agree.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from daftir import kernels


def best_time(fn, repeat: int) -> float:
    fn()
    timings = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        timings.append(time.perf_counter() - start)
    return min(timings)


def cases(rng: np.random.Generator):
    """(label, kernel name, positional args) at the sizes the trainer and CLI use."""
    kl_x, kl_y = rng.normal(size=(2000, 8)), rng.normal(size=(2000, 8))
    val_x, val_y = rng.normal(size=(200, 32)), rng.normal(size=(200, 32))
    scores = rng.normal(size=(200, 2000))
    tie = rng.permutation(2000)
    groups = rng.integers(0, 500, size=2000)
    hidden = rng.normal(size=(16 * 64, 128))
    return [
        ("KL neighbours 2000x2000, d=8", "kth_neighbor_distances", (kl_x, kl_y, 1)),
        ("KL neighbours self 200, d=32", "kth_neighbor_distances", (val_x, val_x, 1, True)),
        ("KL neighbours cross 200, d=32", "kth_neighbor_distances", (val_x, val_y, 1)),
        ("top-100 of 200x2000 scores", "topk_order", (scores, tie, 100)),
        ("group max 200x2000 -> 500", "group_max", (scores, groups, 500)),
        ("GELU value+deriv 1024x128", "gelu", (hidden,)),
    ]


def agree(a, b) -> bool:
    if isinstance(a, tuple):
        return all(agree(x, y) for x, y in zip(a, b))
    if np.issubdtype(np.asarray(a).dtype, np.integer):
        return np.array_equal(a, b)
    return np.allclose(a, b, rtol=1e-12, atol=1e-14)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    parser.add_argument("--repeat", type=int, default=5, help="timed runs per kernel (best is reported)")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    if "numba" not in kernels.BACKENDS:
        print("numba is not installed; only the numpy backend is available")
        return 1
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':34s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}  agree")
    for label, name, call_args in cases(rng):
        np_fn = kernels.BACKENDS["numpy"][name]
        nb_fn = kernels.BACKENDS["numba"][name]
        t_np = best_time(lambda: np_fn(*call_args), args.repeat)
        t_nb = best_time(lambda: nb_fn(*call_args), args.repeat)
        same = agree(np_fn(*call_args), nb_fn(*call_args))
        print(f"{label:34s} {1e3 * t_np:10.3f} {1e3 * t_nb:10.3f} {t_np / t_nb:7.1f}x  {same}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
