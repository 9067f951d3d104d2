"""Time the numba kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]

Shapes match one desk-config block (16 fields x 8 views x 16 tokens, width 128).
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from t1diff import _kernels as K


def cases(rng):
    rows, d = 16 * 8 * 16, 128
    x = rng.standard_normal((rows, d))
    g = rng.standard_normal((rows, d))
    y, rstd = K.layer_norm_fwd(x, 1e-5, use_numba=False)
    att = rng.standard_normal((16 * 8 * 4 * 16, 16))
    sm = K.softmax_fwd(att, use_numba=False)
    h = rng.standard_normal((rows, 4 * d))
    _, th = K.gelu_fwd(h)
    img = np.zeros((64, 64, 3))
    tri = np.array([[3.0, 4.0], [60.0, 10.0], [20.0, 59.0]])
    col = np.ones(3)
    return {
        "layer_norm_fwd": lambda nb: K.layer_norm_fwd(x, 1e-5, use_numba=nb),
        "layer_norm_bwd": lambda nb: K.layer_norm_bwd(g, y, rstd, use_numba=nb),
        "softmax_fwd": lambda nb: K.softmax_fwd(att, use_numba=nb),
        "softmax_bwd": lambda nb: K.softmax_bwd(att, sm, use_numba=nb),
        "gelu_bwd": lambda nb: K.gelu_bwd(h, h, th, use_numba=nb),
        "fill_triangle": lambda nb: K.fill_triangle(img, tri, col, use_numba=nb),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)
    if not K._HAVE_NUMBA:
        raise SystemExit("numba is not installed")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<16}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}")
    for name, fn in cases(rng).items():
        fn(True)  # compile
        t_np = min(timeit.repeat(lambda: fn(False), number=1, repeat=args.repeat)) * 1e3
        t_nb = min(timeit.repeat(lambda: fn(True), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<16}{t_np:>10.3f}{t_nb:>10.3f}{t_np / t_nb:>8.1f}x")


if __name__ == "__main__":
    main()
