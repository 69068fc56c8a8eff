"""Compiled vs pure-Python ABM round loop on identical worlds.

    python3 benchmarks/bench_abm.py --n 64 --rounds 300 --repeat 3
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from netforge.abm import HAVE_KERNEL, AbmConfig, run_simulation
from netforge.structgen import InitConfig, StructureSpec, gen_init_weights, generate_structure
from netforge.utility import Alky


def _time(fn, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=64)
    ap.add_argument("--rounds", type=int, default=300)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--depth", default="inf")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if not HAVE_KERNEL:
        raise SystemExit("compiled kernel not built; run `pip install -e . --no-build-isolation` first")

    c = generate_structure(StructureSpec(args.n, kind="circulant_symmetric", seed=args.seed))
    init = gen_init_weights(args.n, InitConfig(4.0, seed=args.seed))
    depth = None if args.depth == "inf" else int(args.depth)
    # no early stop, so both backends run exactly args.rounds rounds
    cfg = AbmConfig(scope_depth=depth, max_rounds=args.rounds, inactive_stop=10**9, seed=args.seed)
    u = Alky()
    results = {}
    for backend in ("cython", "python"):
        results[backend] = _time(lambda: run_simulation(c, u, init, cfg, backend=backend), args.repeat)
    tc, trc = results["cython"]
    tp, trp = results["python"]
    print(f"N={args.n} rounds={trc.n_rounds} depth={args.depth}")
    print(f"  cython  {tc:8.3f} s  ({1e3 * tc / trc.n_rounds:.3f} ms/round)")
    print(f"  python  {tp:8.3f} s  ({1e3 * tp / trp.n_rounds:.3f} ms/round)")
    print(f"  speedup {tp / tc:8.1f}x")
    print(f"  identical traces: {trc.same_as(trp)}")
    return 0 if trc.same_as(trp) else 1


if __name__ == "__main__":
    raise SystemExit(main())
