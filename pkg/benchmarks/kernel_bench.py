"""Benchmark the jitted kernels against their pure-numpy twins.

Imports both backend modules directly (bypassing the DFM_BACKEND
dispatcher) so one process can time and cross-check them side by side.

    python3 benchmarks/kernel_bench.py --rows 4096 --width 128 --reps 30
"""

import argparse
import time

import numpy as np

from dfm.kernels import numpy_backend as np_be

try:
    from dfm.kernels import numba_backend as nb_be
except ImportError:
    nb_be = None


def make_cases(rows: int, width: int, rng):
    # raw backend shape contracts (the package dispatcher normalizes):
    # layernorm/softmax (n, c); elementwise flat; rope (n, t, hd);
    # resamplers (n, h, w)
    x2 = rng.standard_normal((rows, width))
    dy2 = rng.standard_normal((rows, width))
    _, mean, rstd = np_be.layernorm_fwd(x2, 1e-6)
    sm = np_be.softmax_fwd(x2)
    flat = rng.standard_normal(rows * width)
    dflat = rng.standard_normal(rows * width)
    _, gelu_th = np_be.gelu_fwd(flat)
    hd = 64
    xr = rng.standard_normal((rows // 8 or 1, 64, hd))
    angles = rng.standard_normal((64, hd // 2))
    cos, sin = np.cos(angles), np.sin(angles)
    g = rng.standard_normal(rows * width)
    zeros = np.zeros(rows * width)
    img = rng.standard_normal((rows // 16 or 1, 16, 16))
    small = rng.standard_normal((rows // 16 or 1, 8, 8))

    def adamw(k):
        p, m, v = flat.copy(), zeros.copy(), zeros.copy()
        k.adamw_step(p, g, m, v, 1e-3, 0.9, 0.99, 1e-8, 0.01, 0.1, 0.01)
        return p

    def ema(k):
        e = flat.copy()
        k.ema_update(e, g, 0.999)
        return e

    return [
        ("layernorm_fwd", lambda k: k.layernorm_fwd(x2, 1e-6), lambda r: r[0]),
        ("layernorm_bwd", lambda k: k.layernorm_bwd(dy2, x2, mean, rstd),
         lambda r: r),
        ("softmax_fwd", lambda k: k.softmax_fwd(x2), lambda r: r),
        ("softmax_bwd", lambda k: k.softmax_bwd(dy2, sm), lambda r: r),
        ("silu_fwd", lambda k: k.silu_fwd(flat), lambda r: r),
        ("silu_bwd", lambda k: k.silu_bwd(dflat, flat), lambda r: r),
        ("gelu_fwd", lambda k: k.gelu_fwd(flat), lambda r: r[0]),
        ("gelu_bwd", lambda k: k.gelu_bwd(dflat, flat, gelu_th), lambda r: r),
        ("rope_fwd", lambda k: k.rope_fwd(xr, cos, sin), lambda r: r),
        ("rope_bwd", lambda k: k.rope_bwd(xr, cos, sin), lambda r: r),
        ("adamw_step", adamw, lambda r: r),
        ("ema_update", ema, lambda r: r),
        ("block_down", lambda k: k.block_down(img, 2, 2), lambda r: r),
        ("nearest_up", lambda k: k.nearest_up(small, 2, 2), lambda r: r),
    ]


def best_of(fn, reps: int) -> float:
    best = float("inf")
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best * 1e3


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--rows", type=int, default=4096)
    ap.add_argument("--width", type=int, default=128)
    ap.add_argument("--reps", type=int, default=30)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    cases = make_cases(args.rows, args.width, rng)

    if nb_be is None:
        print("numba unavailable; timing the numpy backend only")
    else:
        for _, call, _ in cases:  # trigger jit compilation before timing
            call(nb_be)

    header = f"{'kernel':<14} {'numpy ms':>9} {'numba ms':>9} " \
             f"{'speedup':>8} {'max|diff|':>10}"
    print(header)
    print("-" * len(header))
    for name, call, pick in cases:
        t_np = best_of(lambda: call(np_be), args.reps)
        if nb_be is None:
            print(f"{name:<14} {t_np:9.3f} {'-':>9} {'-':>8} {'-':>10}")
            continue
        t_nb = best_of(lambda: call(nb_be), args.reps)
        a = np.asarray(pick(call(np_be)), dtype=np.float64)
        b = np.asarray(pick(call(nb_be)), dtype=np.float64)
        diff = float(np.max(np.abs(a - b)))
        agree = "" if diff < 1e-10 else "  <-- MISMATCH"
        print(f"{name:<14} {t_np:9.3f} {t_nb:9.3f} {t_np / t_nb:8.2f} "
              f"{diff:10.2e}{agree}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
