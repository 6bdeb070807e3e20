"""Compiled vs pure-numpy kernels: Ref backward pass and the coupled Picard loop.

Run with ``python3 benchmarks/bench_kernels.py [--depth 8] [--repeat 5]``.
"""

import argparse
import timeit

import numpy as np

from irrdrbsde import _fallback
from irrdrbsde.generators import random_pair
from irrdrbsde.tree import TimeGrid, build_tree

try:
    from irrdrbsde import _kernels
except ImportError:  # extension not built
    _kernels = None


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--depth", type=int, default=8)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    tree = build_tree(TimeGrid.uniform(1.0, args.depth), lam=0.5)
    pair = random_pair(np.random.default_rng(0), tree, "irregular")
    prob = np.ascontiguousarray(tree.prob)
    ls = np.ascontiguousarray(tree.level_start, dtype=np.int64)
    xa, xr = pair.xi.at, pair.xi.right
    za, zr = pair.zeta.at, pair.zeta.right
    backends = {"python": _fallback}
    if _kernels is not None:
        backends["cython"] = _kernels
    print(f"tree: depth {tree.depth}, {tree.n_nodes} nodes")
    results = {}
    for name, mod in backends.items():
        t_ref = min(timeit.repeat(lambda: mod.ref_backward(xa, xr, prob, ls, tree.b), number=1, repeat=args.repeat))
        t_pic = min(timeit.repeat(lambda: mod.picard(xa, xr, za, zr, prob, ls, tree.b, 1e-12, 10_000),
                                  number=1, repeat=args.repeat))
        results[name] = (t_ref, t_pic)
        print(f"{name:>7}: ref_backward {t_ref * 1e3:9.3f} ms   picard {t_pic * 1e3:9.3f} ms")
    if len(results) == 2:
        a = _kernels.picard(xa, xr, za, zr, prob, ls, tree.b, 1e-12, 10_000)
        b = _fallback.picard(xa, xr, za, zr, prob, ls, tree.b, 1e-12, 10_000)
        diff = max(float(np.max(np.abs(np.asarray(a[0][0]) - np.asarray(b[0][0])))), 0.0)
        (cr, cp), (pr, pp) = results["cython"], results["python"]
        print(f"speedup: ref_backward x{pr / cr:.1f}, picard x{pp / cp:.1f}; max |dX| = {diff:.2e}")


if __name__ == "__main__":
    main()
