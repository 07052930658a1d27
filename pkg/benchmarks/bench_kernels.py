#!/usr/bin/env python3
"""Compare the numba and numpy backends on the lattice hot loops.

    python3 benchmarks/bench_kernels.py [--h 0.0625] [--repeat 3]

Prints one row per kernel with the best-of-N wall time for each backend,
the speedup, and the largest difference between the two results.
"""
import argparse
import time

import numpy as np

from fracmin import accel
from fracmin.grid import Exterior, IndicatorSet, build_domain
from fracmin.kernel import (
    build_curvature_tables,
    build_tail_model,
    build_weight_table,
    frac_curvature,
    local_field,
    per_sigma_terms,
)


def best_of(fn, repeat):
    best = np.inf
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def setup(n, h, sigma):
    dom = build_domain(n, 1.0, h, 2.0)
    normal = [1.0] if n == 1 else [0.0, 1.0]
    # a bumpy interface so nothing cancels trivially
    x = dom.centers
    inside = x[..., -1] > 0.2 * np.sin(3 * x[..., 0]) if n == 2 else x[..., 0] > 0.1
    E = IndicatorSet.from_exterior(dom, Exterior.half_space(normal), inside=inside)
    table = build_weight_table(dom, sigma)
    tails = build_tail_model(dom, E.exterior, sigma)
    ctabs = build_curvature_tables(dom, sigma)
    cell = tuple(np.argwhere(E.boundary_mask() & dom.omega_mask)[0])
    return E, table, tails, ctabs, cell


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--h", type=float, default=1.0 / 16, help="2D lattice spacing")
    ap.add_argument("--h1", type=float, default=1.0 / 256, help="1D lattice spacing")
    ap.add_argument("--sigma", type=float, default=0.5)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    cases = []
    for n, h in ((1, args.h1), (2, args.h)):
        E, table, tails, ctabs, cell = setup(n, h, args.sigma)
        cases += [
            (f"per_sigma n={n}", lambda E=E, t=table, tl=tails: per_sigma_terms(E, t, tl).total),
            (f"local_field n={n}", lambda E=E, t=table, tl=tails: local_field(E, t, tl)),
            (f"kappa n={n}", lambda E=E, c=cell, ct=ctabs, tl=tails: frac_curvature(E, c, ctabs=ct, tails=tl)),
        ]

    print(f"{'kernel':<18}{'numba [s]':>12}{'numpy [s]':>12}{'speedup':>10}{'max diff':>12}")
    for name, fn in cases:
        res = {}
        for be in ("numba", "numpy"):
            accel.set_backend(be)
            fn()  # warm-up (jit compile, caches)
            res[be] = best_of(fn, args.repeat)
        (tn, vn), (tp, vp) = res["numba"], res["numpy"]
        diff = float(np.max(np.abs(np.asarray(vn) - np.asarray(vp))))
        print(f"{name:<18}{tn:>12.4f}{tp:>12.4f}{tp / tn:>10.1f}{diff:>12.2e}")


if __name__ == "__main__":
    main()
