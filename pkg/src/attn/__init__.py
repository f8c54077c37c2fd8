"""Augmented tree tensor networks for 2D lattice ground states."""

__version__ = "0.1.0"

from .lattice import Lattice2D, LocalTerm, RydbergParams, build_heisenberg, build_ising, build_model, build_rydberg
from .tree import TreeTopology, build_tree
from .ttn import (SweepConfig, TtnState, canonicalize, entanglement_entropy, expectation, from_dense,
                  move_center, randomize, reduced_density_matrix, sweep_optimize, term_expectations, to_dense)
from .disentangler import (AttnConfig, DisentanglerLayer, PlacementPlan, attn_ground_state, map_hamiltonian,
                           map_observable, optimize_disentanglers, plan_placement)
from .ed import DenseOperatorAssembly, exact_ground_state, reconstruct_dense
