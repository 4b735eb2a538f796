"""Time the numba kernels against their pure-numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--families 300] [--repeat 5]

Prints one line per kernel with the best-of-``repeat`` time for each backend
and checks that both backends give the same numbers.
"""
import argparse
import json
import time

import numpy as np

from pedrisk import mendelian
from pedrisk.encoder import ReferenceStructure, build_neighborhoods
from pedrisk.genetics import build_default_penetrance
from pedrisk.network import scatter_neighbors
from pedrisk.peeling import compile_program, run_program
from pedrisk.simulate import simulate_cohort


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def bench_peeling(n_families, repeat):
    model = build_default_penetrance()
    fams = simulate_cohort(n_families, model=model, seed=0).pedigrees
    jobs = [(compile_program(p), mendelian.state_likelihoods(p, model)) for p in fams]

    def run(flag):
        return np.array([run_program(prog, lik, model.prior, use_numba=flag) for prog, lik in jobs])

    run(True)  # compile
    t_nb, a = best_of(lambda: run(True), repeat)
    t_np, b = best_of(lambda: run(False), repeat)
    return {"kernel": "peel", "units": f"{n_families} families", "numba_s": t_nb, "numpy_s": t_np,
            "speedup": t_np / t_nb, "max_abs_diff": float(np.abs(a - b).max())}


def bench_scatter(batch, repeat):
    nbr = build_neighborhoods(ReferenceStructure.default())
    dG = np.random.default_rng(0).normal(size=(batch, nbr.shape[0], nbr.shape[1], 10))
    S = nbr.shape[0] + 1
    scatter_neighbors(dG, nbr, S, use_numba=True)
    t_nb, a = best_of(lambda: scatter_neighbors(dG, nbr, S, use_numba=True), repeat)
    t_np, b = best_of(lambda: scatter_neighbors(dG, nbr, S, use_numba=False), repeat)
    return {"kernel": "scatter_neighbors", "units": f"batch {batch}", "numba_s": t_nb, "numpy_s": t_np,
            "speedup": t_np / t_nb, "max_abs_diff": float(np.abs(a - b).max())}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--families", type=int, default=300)
    ap.add_argument("--batch", type=int, default=256)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", action="store_true", help="print JSON instead of a table")
    args = ap.parse_args()
    rows = [bench_peeling(args.families, args.repeat), bench_scatter(args.batch, args.repeat)]
    if args.json:
        print(json.dumps(rows, indent=2))
        return
    for r in rows:
        print(f"{r['kernel']:<18} {r['units']:<14} numba {r['numba_s'] * 1e3:9.2f} ms   "
              f"numpy {r['numpy_s'] * 1e3:9.2f} ms   x{r['speedup']:6.1f}   max|diff| {r['max_abs_diff']:.1e}")


if __name__ == "__main__":
    main()
