"""Disentangler counts per tree layer for a range of lattice sizes."""
import argparse

from attn.disentangler import plan_placement
from attn.lattice import Lattice2D, RydbergParams, build_ising, build_rydberg, term_supports
from attn.tree import build_tree


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--sizes", type=int, nargs="+", default=[8, 16, 32])
    p.add_argument("--vnn", type=float, default=46.0, help="Rydberg nearest-neighbour interaction (MHz)")
    a = p.parse_args(argv)
    print(f"{'model':<10}{'L':>4}{'N_D':>6}  per layer")
    for L in a.sizes:
        for kind in ("periodic", "rydberg"):
            if kind == "rydberg":
                lat = Lattice2D(L, "open")
                terms = build_rydberg(lat, RydbergParams.from_vnn(a.vnn))
            else:
                lat = Lattice2D(L)
                terms = build_ising(lat)
            topo = build_tree(lat)
            plan = plan_placement(topo, term_supports(terms))
            plan.validate(topo, term_supports(terms))
            print(f"{kind:<10}{L:>4}{plan.n_disentanglers:>6}  {plan.per_layer}")


if __name__ == "__main__":
    main()
