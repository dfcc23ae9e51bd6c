"""Timing comparison of the numba kernels against their numpy fallbacks.

Run from the repository root:

    python benchmarks/bench_kernels.py [--rows 4096] [--cols 64] [--repeat 7]

Each kernel is called once for warm-up (so JIT compilation is not
timed), then the best of ``repeat`` timed loops is reported for both
implementations along with the speed ratio. With EMPERSONA_BACKEND
forced to numpy the numba column is skipped.
"""

import argparse
import time

import numpy as np

from empersona.backend import implementations


def make_inputs(rows, cols, rng):
    x = rng.standard_normal((rows, cols)).astype(np.float32)
    keep = np.ones((rows, cols), dtype=bool)
    keep[:, cols // 2:] = rng.random((rows, cols - cols // 2)) > 0.3
    keep[:, 0] = True
    gout = rng.standard_normal((rows, cols)).astype(np.float32)
    targets = rng.integers(0, cols, size=rows).astype(np.int64)
    gl = rng.standard_normal(rows).astype(np.float32)
    p = rng.standard_normal(rows * cols).astype(np.float32)
    g = rng.standard_normal(rows * cols).astype(np.float32)
    v = np.abs(rng.standard_normal(rows * cols)).astype(np.float32)
    return {"x": x, "keep": keep, "gout": gout, "targets": targets, "gl": gl,
            "p": p, "g": g, "v": v}


def calls(impl, d):
    softmax_y = impl["softmax_rows"](d["x"])
    ln_y, ln_inv = impl["layernorm_rows"](d["x"], 1e-5)
    _, probs = impl["cross_entropy_rows"](d["x"], d["targets"])
    return [
        ("softmax_rows", lambda: impl["softmax_rows"](d["x"])),
        ("softmax_rows_masked", lambda: impl["softmax_rows_masked"](d["x"], d["keep"])),
        ("softmax_rows_grad", lambda: impl["softmax_rows_grad"](softmax_y, d["gout"])),
        ("layernorm_rows", lambda: impl["layernorm_rows"](d["x"], 1e-5)),
        ("layernorm_rows_grad", lambda: impl["layernorm_rows_grad"](ln_y, ln_inv, d["gout"])),
        ("cross_entropy_rows", lambda: impl["cross_entropy_rows"](d["x"], d["targets"])),
        ("cross_entropy_rows_grad", lambda: impl["cross_entropy_rows_grad"](probs, d["targets"], d["gl"])),
        ("adaptive_update", lambda: impl["adaptive_update"](d["p"].copy(), d["g"], d["v"].copy(),
                                                            1e-3, 0.999, 1e-8, 0.5)),
    ]


def best_time(fn, inner, repeat):
    fn()  # warm-up; first numba call compiles
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        for _ in range(inner):
            fn()
        best = min(best, (time.perf_counter() - t0) / inner)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, default=4096)
    ap.add_argument("--cols", type=int, default=64)
    ap.add_argument("--inner", type=int, default=20)
    ap.add_argument("--repeat", type=int, default=7)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    impls = implementations()
    d = make_inputs(args.rows, args.cols, np.random.default_rng(args.seed))

    names = [name for name, _ in calls(impls["numpy"], d)]
    results = {}
    for backend, impl in impls.items():
        for name, fn in calls(impl, d):
            results[(backend, name)] = best_time(fn, args.inner, args.repeat)

    have_numba = "numba" in impls
    header = f"{'kernel':<26} {'numpy':>12}" + (f" {'numba':>12} {'ratio':>7}" if have_numba else "")
    print(f"rows={args.rows} cols={args.cols} inner={args.inner} repeat={args.repeat}")
    print(header)
    print("-" * len(header))
    for name in names:
        np_t = results[("numpy", name)]
        line = f"{name:<26} {np_t * 1e6:>10.1f}us"
        if have_numba:
            nb_t = results[("numba", name)]
            line += f" {nb_t * 1e6:>10.1f}us {np_t / nb_t:>6.2f}x"
        print(line)
    if not have_numba:
        print("(numba unavailable or disabled; numpy column only)")


if __name__ == "__main__":
    main()
