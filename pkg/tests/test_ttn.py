import numpy as np
import pytest
from hypothesis import given, strategies as st

from attn.ed import DenseOperatorAssembly, exact_ground_state
from attn.lattice import (SX, SZ, Lattice2D, LocalTerm, RydbergParams, build_heisenberg,
                          build_ising, build_rydberg)
from attn.tree import build_tree
from attn.ttn import (SweepConfig, TtnOptimizer, entanglement_entropy, expectation, from_dense,
                      move_center, product_state, randomize, reduced_density_matrix, sweep_optimize,
                      term_expectations, to_dense)

LAT = Lattice2D(4, "open", Ly=2)
TOPO = build_tree(LAT)


def models(lat):
    return {
        "ising": build_ising(lat),
        "heisenberg": build_heisenberg(lat),
        "rydberg": build_rydberg(Lattice2D(lat.Lx, "open", lat.Ly),
                                 RydbergParams.from_vnn(46.0, omega=4.0, delta=12.0)),
    }


def dense_rdm(vec, sites, N):
    psi = vec.reshape((2,) * N)
    rest = [q for q in range(N) if q not in sites]
    psi = psi.transpose(list(sites) + rest).reshape(2 ** len(sites), -1)
    return psi @ psi.conj().T


def test_random_state_is_isometric_and_normalized():
    s = randomize(TOPO, 4, seed=3)
    assert s.norm() == pytest.approx(1.0, abs=1e-12)
    assert max(s.isometry_errors().values()) < 1e-12
    assert s.max_bond == 4


def test_dense_roundtrip():
    rng = np.random.default_rng(0)
    vec = rng.standard_normal(256) + 1j * rng.standard_normal(256)
    vec /= np.linalg.norm(vec)
    s = from_dense(TOPO, vec)
    assert np.allclose(to_dense(s), vec, atol=1e-12)


def test_product_state_energy():
    up = np.array([1, 0])
    s = product_state(TOPO, [up] * 8)
    terms = [LocalTerm((i,), SZ) for i in range(8)]
    assert expectation(s, terms) == pytest.approx(8.0)
    assert expectation(s, [LocalTerm((0, 1), np.kron(SX, SX))]) == pytest.approx(0.0, abs=1e-14)


@given(st.sampled_from(["ising", "heisenberg", "rydberg"]), st.integers(1, 16), st.integers(0, 1000))
def test_expectation_matches_dense(model, m, seed):
    terms = models(LAT)[model]
    s = randomize(TOPO, m, seed)
    vec = to_dense(s)
    ref = DenseOperatorAssembly(terms, 8).expectation(vec)
    assert expectation(s, terms) == pytest.approx(ref, abs=1e-10 * max(1, abs(ref)))
    per_term = term_expectations(s, terms)
    assert per_term.sum().real == pytest.approx(ref, abs=1e-10 * max(1, abs(ref)))


@given(st.integers(0, 1000), st.sampled_from(TOPO.nodes))
def test_gauge_invariance(seed, node):
    terms = build_heisenberg(LAT)
    s = randomize(TOPO, 6, seed)
    e0 = expectation(s, terms)
    moved = move_center(s, node)
    assert moved.center == node
    assert max(moved.isometry_errors().values()) < 1e-11
    assert expectation(moved, terms) == pytest.approx(e0, abs=1e-11)
    assert np.allclose(to_dense(moved), to_dense(s), atol=1e-11)


@given(st.lists(st.integers(0, 7), min_size=1, max_size=3, unique=True), st.integers(0, 1000))
def test_reduced_density_matrix(sites, seed):
    s = randomize(TOPO, 5, seed)
    ref = dense_rdm(to_dense(s), sites, 8)
    assert np.allclose(reduced_density_matrix(s, sites), ref, atol=1e-12)


def test_entanglement_entropy_matches_schmidt():
    s = randomize(TOPO, 8, seed=5)
    a, _ = TOPO.children[TOPO.root]
    part = sorted(TOPO.sites_below(a))
    rest = [q for q in range(8) if q not in part]
    psi = to_dense(s).reshape((2,) * 8).transpose(part + rest).reshape(2 ** len(part), -1)
    p = np.linalg.svd(psi, compute_uv=False) ** 2
    p = p[p > 1e-300]
    assert entanglement_entropy(s, a) == pytest.approx(-np.sum(p * np.log(p)), abs=1e-12)


@pytest.mark.parametrize("model", ["ising", "heisenberg", "rydberg"])
def test_sweeps_reach_exact_energy(model):
    terms = models(LAT)[model]
    e0, _ = exact_ground_state(terms, 8)
    state, energies = sweep_optimize(randomize(TOPO, 16, seed=1), terms,
                                     SweepConfig(max_m=16, n_sweeps=6))
    assert energies[-1] == pytest.approx(e0, rel=1e-10)
    assert expectation(state, terms) == pytest.approx(e0, rel=1e-10)


@given(st.integers(0, 50))
def test_energy_monotone_without_expansion(seed):
    lat = Lattice2D(4)
    terms = build_ising(lat)
    cfg = SweepConfig(max_m=6, n_sweeps=3, expansion_size=0, min_sweeps=3)
    _, energies = sweep_optimize(randomize(build_tree(lat), 6, seed), terms, cfg)
    assert np.all(np.diff(energies) <= 1e-9)


def test_expansion_grows_bonds_from_product_state():
    lat = Lattice2D(4)
    topo = build_tree(lat)
    terms = build_ising(lat)
    s = product_state(topo, [np.array([1, 1]) / np.sqrt(2)] * 16)
    opt = TtnOptimizer(s, terms, SweepConfig(max_m=8, n_sweeps=4, expansion_size=4))
    res = opt.run()
    assert opt.state.max_bond > 1
    assert res.sweep_energies[-1] < expectation(s, terms) - 1.0
