import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.stats import unitary_group

from attn.disentangler import (AttnConfig, Disentangler, DisentanglerLayer, PlacementPlan,
                               attn_ground_state, aux_energy, map_hamiltonian, map_observable,
                               optimize_disentanglers, pair_link, plan_placement, svd_update)
from attn.ed import DenseOperatorAssembly, exact_ground_state, reconstruct_dense, spectrum
from attn.lattice import (NUM, SX, SZ, Lattice2D, LocalTerm, RydbergParams, build_heisenberg,
                          build_ising, build_rydberg, term_supports)
from attn.tree import build_tree
from attn.ttn import SweepConfig, randomize, sweep_optimize


def plan_for(lat, terms, **kw):
    topo = build_tree(lat)
    return topo, plan_placement(topo, term_supports(terms), **kw)


@pytest.mark.parametrize("L,expected", [(8, (8,)), (16, (16, 8, 8)), (32, (32, 24, 24, 16, 32))])
def test_periodic_placement_counts(L, expected):
    lat = Lattice2D(L)
    topo, plan = plan_for(lat, build_ising(lat))
    assert plan.per_layer == expected
    plan.validate(topo, term_supports(build_ising(lat)))


@pytest.mark.parametrize("L,expected", [(8, (3, 2)), (16, (6, 4, 8, 4))])
def test_rydberg_placement_counts(L, expected):
    lat = Lattice2D(L, "open")
    terms = build_rydberg(lat, RydbergParams.from_vnn(46.0))
    topo, plan = plan_for(lat, terms)
    assert plan.per_layer == expected
    plan.validate(topo, term_supports(terms))


@given(st.sampled_from([4, 8, 16]), st.sampled_from(["ising", "heisenberg"]), st.integers(1, 4))
def test_placement_is_conflict_free(L, model, depth):
    lat = Lattice2D(L)
    terms = build_ising(lat) if model == "ising" else build_heisenberg(lat)
    topo, plan = plan_for(lat, terms, max_layer_depth=depth)
    plan.validate(topo, term_supports(terms))
    assert max(plan.layers, default=1) <= depth
    for (i, j), e in zip(plan.pairs, plan.links):
        assert pair_link(topo, i, j)[0] == e
        assert tuple(sorted((i, j))) in {tuple(sorted(b)) for b in lat.edges()}


def test_validate_detects_conflicts():
    lat = Lattice2D(4)
    topo = build_tree(lat)
    e, l = pair_link(topo, 1, 2)
    bad = PlacementPlan([(1, 2), (2, 3)], [e, e], [l, l])
    with pytest.raises(ValueError):
        bad.validate(topo)
    e2, l2 = pair_link(topo, 5, 6)
    near = PlacementPlan([(1, 2), (5, 6)], [e, e2], [l, l2])
    near.validate(topo)
    with pytest.raises(ValueError):
        near.validate(topo, [(1, 5)])
    with pytest.raises(ValueError):
        PlacementPlan([(0, 1)], [e], [l]).validate(topo)


def test_plan_text_roundtrip():
    lat = Lattice2D(16)
    topo, plan = plan_for(lat, build_ising(lat))
    back = PlacementPlan.from_text(plan.to_text())
    assert back == plan
    sites_only = "\n".join(f"{i} {j}" for i, j in plan.pairs)
    assert PlacementPlan.from_text(sites_only, topo) == plan
    with pytest.raises(ValueError):
        PlacementPlan.from_text(sites_only)


def test_svd_update_known_cases():
    assert np.allclose(svd_update(-np.eye(4)), np.eye(4))
    w = unitary_group.rvs(4, random_state=1)
    assert np.allclose(svd_update(w), -w.conj().T)


@given(st.integers(0, 10_000))
def test_svd_update_is_optimal(seed):
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
    u = svd_update(g)
    assert np.allclose(u @ u.conj().T, np.eye(4), atol=1e-12)
    best = np.trace(u @ g).real
    assert best == pytest.approx(-np.linalg.svd(g, compute_uv=False).sum(), abs=1e-12)
    probes = unitary_group.rvs(4, size=100, random_state=rng)
    assert all(np.trace(w @ g).real >= best - 1e-12 for w in probes)


def small_layer(seed=0):
    lat = Lattice2D(4, "periodic", 2)
    terms = build_heisenberg(lat)
    topo, plan = plan_for(lat, terms)
    return lat, terms, topo, DisentanglerLayer.random(plan, seed)


def test_identity_layer_passes_terms_through():
    lat, terms, topo, layer = small_layer()
    ident = DisentanglerLayer([Disentangler(d.k, d.sites, np.eye(4)) for d in layer])
    assert map_hamiltonian(ident, terms) == terms


def test_swap_moves_operator():
    swap = np.eye(4)[[0, 2, 1, 3]]
    layer = DisentanglerLayer([Disentangler(0, (1, 2), swap)])
    (out,) = map_observable(layer, [LocalTerm((1,), SX)])
    assert out.sites == (1, 2)
    assert np.allclose(out.matrix, np.kron(np.eye(2), SX))


def test_term_on_two_disentanglers_rejected():
    layer = DisentanglerLayer.random(PlacementPlan([(0, 1), (2, 3)], [0, 0], [1, 1]), seed=2)
    with pytest.raises(ValueError):
        map_hamiltonian(layer, [LocalTerm((1, 2), np.kron(SZ, SZ))])
    (out,) = map_observable(layer, [LocalTerm((1, 2), np.kron(NUM, NUM))])
    assert sorted(out.sites) == [0, 1, 2, 3]


@given(st.integers(0, 1000))
def test_mapping_is_a_unitary_equivalence(seed):
    lat, terms, topo, layer = small_layer(seed)
    N = lat.N
    mapped = map_hamiltonian(layer, terms)
    assert np.allclose(spectrum(mapped, N), spectrum(terms, N), atol=1e-10)
    psi = reconstruct_dense(randomize(topo, 4, seed))
    e_phys = DenseOperatorAssembly(terms, N).expectation(layer.apply_dagger(psi, N))
    assert DenseOperatorAssembly(mapped, N).expectation(psi) == pytest.approx(e_phys, abs=1e-10)
    assert np.allclose(layer.apply(layer.apply_dagger(psi, N), N), psi, atol=1e-12)


@given(st.integers(0, 1000))
def test_observable_mapping_matches_dense(seed):
    lat, terms, topo, layer = small_layer(seed)
    N = lat.N
    state = randomize(topo, 4, seed)
    phys = reconstruct_dense(state, layer)
    obs = [LocalTerm((i, j), np.kron(NUM, NUM)) for i in range(N) for j in range(i + 1, N)]
    from attn.ttn import term_expectations

    got = term_expectations(state, map_observable(layer, obs)).real
    ref = [DenseOperatorAssembly([o], N).expectation(phys) for o in obs]
    assert np.allclose(got, ref, atol=1e-12)


@given(st.integers(0, 200))
def test_disentangler_update_never_raises_energy(seed):
    lat = Lattice2D(4)
    terms = build_ising(lat)
    topo, plan = plan_for(lat, terms)
    state, _ = sweep_optimize(randomize(topo, 4, seed), terms, SweepConfig(max_m=4, n_sweeps=1))
    layer = DisentanglerLayer.random(plan, seed)
    before = aux_energy(state, layer, terms)
    new = optimize_disentanglers(layer, state, terms)
    assert aux_energy(state, new, terms) <= before + 1e-10
    assert max(d.unitarity_error() for d in new) < 1e-12


def test_empty_plan_reduces_to_ttn():
    lat = Lattice2D(4, "periodic", 2)
    terms = build_ising(lat)
    topo = build_tree(lat)
    cfg = AttnConfig(sweep=SweepConfig(max_m=4, n_sweeps=3), seed=4)
    res = attn_ground_state(terms, topo, cfg, plan=PlacementPlan([], [], []))
    _, ttn_trace = sweep_optimize(randomize(topo, 4, seed=4), terms, cfg.sweep)
    assert res.trace == ttn_trace
    assert len(res.layer) == 0


@pytest.mark.parametrize("model", ["ising", "heisenberg", "rydberg"])
def test_attn_exact_on_small_lattice(model):
    if model == "rydberg":
        lat = Lattice2D(4, "open", 2)
        terms = build_rydberg(lat, RydbergParams.from_vnn(46.0, delta=15.0))
    else:
        lat = Lattice2D(4, "periodic", 2)
        terms = build_ising(lat) if model == "ising" else build_heisenberg(lat)
    e0, _ = exact_ground_state(terms, lat.N)
    res = attn_ground_state(terms, build_tree(lat), AttnConfig(sweep=SweepConfig(max_m=16, n_sweeps=6),
                                                               n_cycles=2))
    assert res.energy == pytest.approx(e0, rel=1e-10)
    psi = reconstruct_dense(res.state, res.layer)
    assert DenseOperatorAssembly(terms, lat.N).expectation(psi) == pytest.approx(e0, rel=1e-10)
