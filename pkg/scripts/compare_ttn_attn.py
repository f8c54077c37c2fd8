"""Paired-seed energies of plain and augmented trees on a periodic lattice.

Both ansaetze get the same number of tree sweeps.  Writes a CSV table.
"""
import argparse
import csv
import sys
import time

from attn.disentangler import AttnConfig, attn_ground_state
from attn.lattice import Lattice2D, build_model
from attn.tree import build_tree
from attn.ttn import SweepConfig, randomize, sweep_optimize_full


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--model", default="heisenberg", choices=["ising", "heisenberg"])
    p.add_argument("--L", type=int, default=8)
    p.add_argument("--m", type=int, nargs="+", default=[8, 16])
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--warmup", type=int, default=6)
    p.add_argument("--cycles", type=int, default=2)
    p.add_argument("--cycle-sweeps", type=int, default=2)
    p.add_argument("-o", "--output", help="CSV path (default: stdout)")
    a = p.parse_args(argv)

    lat = Lattice2D(a.L)
    terms = build_model(a.model, lat)
    topo = build_tree(lat)
    rows = []
    for m in a.m:
        for seed in range(a.seeds):
            t0 = time.perf_counter()
            r = attn_ground_state(terms, topo, AttnConfig(sweep=SweepConfig(max_m=m, n_sweeps=a.warmup),
                                                          n_cycles=a.cycles, cycle_sweeps=a.cycle_sweeps,
                                                          seed=seed))
            t1 = time.perf_counter()
            total = a.warmup + a.cycles * a.cycle_sweeps
            _, res = sweep_optimize_full(randomize(topo, m, seed), terms, SweepConfig(max_m=m, n_sweeps=total))
            t2 = time.perf_counter()
            rows.append({"m": m, "seed": seed, "E_attn": r.energy, "E_ttn": res.sweep_energies[-1],
                         "N_D": r.plan.n_disentanglers, "t_attn": round(t1 - t0, 2),
                         "t_ttn": round(t2 - t1, 2)})
            print(rows[-1], file=sys.stderr)
    fh = open(a.output, "w", newline="") if a.output else sys.stdout
    w = csv.DictWriter(fh, fieldnames=list(rows[0]))
    w.writeheader()
    w.writerows(rows)
    if a.output:
        fh.close()


if __name__ == "__main__":
    main()
