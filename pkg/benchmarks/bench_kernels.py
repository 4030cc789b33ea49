"""Compiled vs numpy pmf composition.

Times ``compose(p, h)`` for pmf lengths typical of the statistics fits
(tens of terms) up to long thermal tails, with the depth-3 cascade offspring
pmf as ``h``. Run with ``python benchmarks/bench_kernels.py``.
"""

from __future__ import annotations

import argparse
import json
import timeit

import numpy as np

from sipmcal import _pykernels
from sipmcal.distributions import cascade_offspring, pmf_multithermal

try:
    from sipmcal import _ckernels
except ImportError:
    _ckernels = None


def bench(sizes, repeat: int, depth: int) -> list[dict]:
    h = cascade_offspring(0.1, depth)
    rows = []
    for n in sizes:
        p = pmf_multithermal(n / 8.0, 1.0, cutoff=n - 1).probabilities.copy()
        number = max(1, int(2e5 // (n * n + 1)))
        t_py = min(timeit.repeat(lambda: _pykernels.compose(p, h), number=number, repeat=repeat)) / number
        row = {"n": n, "depth": depth, "python_us": t_py * 1e6}
        if _ckernels is not None:
            np.testing.assert_allclose(_ckernels.compose(p, h), _pykernels.compose(p, h), rtol=1e-12, atol=1e-300)
            t_c = min(timeit.repeat(lambda: _ckernels.compose(p, h), number=number, repeat=repeat)) / number
            row.update(cython_us=t_c * 1e6, speedup=t_py / t_c)
        rows.append(row)
    return rows


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[8, 16, 32, 64, 128, 256, 512])
    ap.add_argument("--depth", type=int, default=3)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", action="store_true", help="print rows as JSON")
    args = ap.parse_args()
    rows = bench(args.sizes, args.repeat, args.depth)
    if args.json:
        print(json.dumps(rows, indent=2))
        return
    if _ckernels is None:
        print("compiled extension not built; timing the numpy kernel only")
    print(f"{'n':>6} {'numpy (us)':>12} {'cython (us)':>12} {'speedup':>8}")
    for r in rows:
        c = f"{r['cython_us']:12.2f} {r['speedup']:8.1f}" if "cython_us" in r else ""
        print(f"{r['n']:>6} {r['python_us']:12.2f} {c}")


if __name__ == "__main__":
    main()
