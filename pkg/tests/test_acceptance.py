"""End-to-end acceptance checks; each test prints one PASS/FAIL line."""
import os
import shutil
import time
from pathlib import Path

import numpy as np
import pytest

from attn.config import load_config
from attn.disentangler import (AttnConfig, DisentanglerLayer, attn_ground_state, map_hamiltonian,
                               plan_placement)
from attn.ed import DenseOperatorAssembly, exact_ground_state, reconstruct_dense, spectrum
from attn.lattice import (Lattice2D, RydbergParams, build_heisenberg, build_ising, build_rydberg,
                          term_supports)
from attn.observables import (CorrelationTable, bulk_sites, extrapolate_energy,
                              find_derivative_peaks, fss_collapse, staggered_magnetization,
                              structure_factor_peaks)
from attn.runner import load_records, run
from attn.tree import build_tree
from attn.ttn import SweepConfig, expectation, move_center, randomize, sweep_optimize, sweep_optimize_full

pytestmark = pytest.mark.acceptance

ROOT = Path(__file__).resolve().parents[1]
REPORT = []

# frozen from the exact-diagonalisation oracle (see test_ed.py)
E0_ISING_4X4 = -34.010597550846306
E1_ISING_4X4 = -34.010596999467836


def report(capsys, n, ok, detail):
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    REPORT.append(line)
    with capsys.disabled():
        print("\n" + line)
    assert ok, line


def model_terms(name, lat, delta=12.0):
    if name == "rydberg":
        return build_rydberg(lat, RydbergParams.from_vnn(46.0, omega=4.0, delta=delta))
    return build_ising(lat) if name == "ising" else build_heisenberg(lat)


def small_lattice(name, Lx, Ly):
    return Lattice2D(Lx, "open" if name == "rydberg" else "periodic", Ly)


@pytest.fixture(scope="module")
def scan_dir(tmp_path_factory):
    """Real Rydberg scans, reused by the staircase and peak criteria.

    Set ATTN_ACCEPTANCE_DIR to keep (and later resume) the run directories.
    """
    keep = os.environ.get("ATTN_ACCEPTANCE_DIR")
    base = Path(keep) if keep else tmp_path_factory.mktemp("scans")
    return base


def run_scan(base, name):
    cfg = load_config(ROOT / "configs" / f"{name}.yaml")
    out = base / name
    t0 = time.perf_counter()
    recs = run(cfg, str(out))
    return cfg, sorted(recs, key=lambda r: r.point["delta"]), time.perf_counter() - t0


@pytest.fixture(scope="module")
def scan_L4(scan_dir):
    return run_scan(scan_dir, "rydberg_L4_scan")


@pytest.fixture(scope="module")
def scan_L8(scan_dir):
    return run_scan(scan_dir, "rydberg_L8_scan")


def test_c01_ed_equivalence(capsys):
    worst, t0 = 0.0, time.perf_counter()
    for name in ("ising", "heisenberg", "rydberg"):
        for Lx, Ly in ((2, 2), (4, 2)):
            lat = small_lattice(name, Lx, Ly)
            terms = model_terms(name, lat)
            e0, _ = exact_ground_state(terms, lat.N)
            res = attn_ground_state(terms, build_tree(lat),
                                    AttnConfig(sweep=SweepConfig(max_m=16, n_sweeps=6), n_cycles=2))
            worst = max(worst, abs(res.energy - e0) / abs(e0))
    report(capsys, 1, worst <= 1e-9, f"max rel. error {worst:.1e} over 6 cases "
                                     f"({time.perf_counter() - t0:.1f} s)")


def test_c02_ising_4x4_regression(capsys):
    lat = Lattice2D(4)
    t0 = time.perf_counter()
    res = attn_ground_state(build_ising(lat), build_tree(lat),
                            AttnConfig(sweep=SweepConfig(max_m=64, n_sweeps=10), n_cycles=4))
    rel = abs(res.energy - E0_ISING_4X4) / abs(E0_ISING_4X4)
    floor = (E1_ISING_4X4 - E0_ISING_4X4) / 2 / abs(E0_ISING_4X4)
    report(capsys, 2, rel <= 1e-8, f"m=64 rel. error {rel:.2e} (symmetry-broken floor {floor:.2e}, "
                                   f"{time.perf_counter() - t0:.1f} s)")


def test_c03_attn_beats_ttn(capsys):
    lat = Lattice2D(8)
    terms = build_heisenberg(lat)
    topo = build_tree(lat)
    warm, cycles, per_cycle = 6, 2, 2
    rows, t0 = [], time.perf_counter()
    for m in (8, 16):
        for seed in range(5):
            a = attn_ground_state(terms, topo, AttnConfig(sweep=SweepConfig(max_m=m, n_sweeps=warm),
                                                          n_cycles=cycles, cycle_sweeps=per_cycle, seed=seed))
            # the plain tree gets the same total number of sweeps
            _, t = sweep_optimize_full(randomize(topo, m, seed), terms,
                                       SweepConfig(max_m=m, n_sweeps=warm + cycles * per_cycle))
            rows.append((m, seed, a.energy, t.sweep_energies[-1]))
    ok = all(ea <= et for _, _, ea, et in rows)
    gain = min(et - ea for _, _, ea, et in rows)
    report(capsys, 3, ok, f"{len(rows)} seed pairs, smallest gain E_TTN - E_aTTN = {gain:.3f} "
                          f"({time.perf_counter() - t0:.0f} s)")


def test_c04_unitary_equivalence(capsys):
    spec_err, path_err, n = 0.0, 0.0, 0
    cases = [("heisenberg", 4, 2), ("ising", 4, 2), ("rydberg", 4, 2), ("heisenberg", 2, 2)]
    for i in range(20):
        name, Lx, Ly = cases[i % len(cases)]
        lat = small_lattice(name, Lx, Ly)
        terms = model_terms(name, lat, delta=3.0 * i)
        topo = build_tree(lat)
        layer = DisentanglerLayer.random(plan_placement(topo, term_supports(terms)), seed=i)
        assert len(layer) > 0
        mapped = map_hamiltonian(layer, terms)
        spec_err = max(spec_err, np.abs(spectrum(mapped, lat.N) - spectrum(terms, lat.N)).max())
        state = randomize(topo, 4, seed=100 + i)
        e_tree = expectation(state, mapped)
        e_phys = DenseOperatorAssembly(terms, lat.N).expectation(reconstruct_dense(state, layer))
        path_err = max(path_err, abs(e_tree - e_phys))
        n += 1
    ok = spec_err <= 1e-9 and path_err <= 1e-10
    report(capsys, 4, ok, f"{n} layers, spectra {spec_err:.1e}, energy paths {path_err:.1e}")


def test_c05_placement_counts(capsys):
    expected = {("periodic", 8): (8,), ("periodic", 16): (16, 8, 8),
                ("periodic", 32): (32, 24, 24, 16, 32),
                ("rydberg", 16): (6, 4, 8, 4), ("rydberg", 32): (11, 10, 20, 12, 24)}
    found, ok = {}, True
    for (kind, L), want in expected.items():
        lat = Lattice2D(L, "open" if kind == "rydberg" else "periodic")
        terms = build_rydberg(lat, RydbergParams.from_vnn(46.0)) if kind == "rydberg" else build_ising(lat)
        topo = build_tree(lat)
        plan = plan_placement(topo, term_supports(terms))
        plan.validate(topo, term_supports(terms))
        found[(kind, L)] = plan.per_layer
        ok &= plan.per_layer == want
    lat = Lattice2D(8, "open")
    terms = build_rydberg(lat, RydbergParams.from_vnn(46.0))
    topo = build_tree(lat)
    small = plan_placement(topo, term_supports(terms))
    small.validate(topo, term_supports(terms))
    detail = ", ".join(f"{k[0]} L={k[1]}: {sum(v)}" for k, v in found.items())
    report(capsys, 5, ok, f"{detail}; rydberg L=8 valid with {small.n_disentanglers}")


def test_c06_invariants(capsys):
    lat = Lattice2D(4)
    terms = build_ising(lat)
    topo = build_tree(lat)
    worst_rise = -np.inf
    for seed in range(3):
        _, tr = sweep_optimize(randomize(topo, 8, seed), terms,
                               SweepConfig(max_m=8, n_sweeps=4, expansion_size=0, min_sweeps=4))
        worst_rise = max(worst_rise, np.diff(tr).max())
    res = attn_ground_state(terms, topo, AttnConfig(sweep=SweepConfig(max_m=16, n_sweeps=4), n_cycles=2))
    iso = max(res.state.isometry_errors().values())
    uni = max(d.unitarity_error() for d in res.layer)
    heis = build_heisenberg(lat)
    s = randomize(topo, 8, seed=9)
    e = expectation(s, heis)
    gauge = max(abs(expectation(move_center(s, n), heis) - e) for n in topo.nodes)
    ok = worst_rise <= 1e-9 and iso < 1e-10 and uni < 1e-10 and gauge <= 1e-11
    report(capsys, 6, ok, f"max step rise {worst_rise:.1e}, isometry {iso:.1e}, unitarity {uni:.1e}, "
                          f"gauge {gauge:.1e}")


def plateaus(x, y, target, tol=0.08, min_len=3):
    runs, cur = [], []
    for xi, yi in zip(x, y):
        if abs(yi - target) <= tol:
            cur.append(xi)
        else:
            if len(cur) >= min_len:
                runs.append(cur)
            cur = []
    if len(cur) >= min_len:
        runs.append(cur)
    return runs


def test_c07_rydberg_staircase(capsys, scan_L4):
    cfg, recs, secs = scan_L4
    lat = cfg.model.lattice()
    bulk = bulk_sites(lat)
    x = [r.point["delta"] for r in recs]
    tables = [CorrelationTable.from_dict(r.observables["table"]) for r in recs]
    stag = [staggered_magnetization(t.restrict(bulk)) for t in tables]
    runs = {v: plateaus(x, stag, v) for v in (0.0, 0.25, 0.5)}
    ordered = all(runs.values()) and runs[0.0][0][-1] < runs[0.25][0][0] \
        and runs[0.25][-1][-1] < runs[0.5][-1][0]
    mid = max(runs[0.25], key=len) if runs[0.25] else []
    top = max(runs[0.5], key=len) if runs[0.5] else []
    peaks = {r.point["delta"]: structure_factor_peaks(t) for r, t in zip(recs, tables)}
    z4 = {(0.0, np.pi), (np.pi, 0.0)}

    def holds(run, cond):
        # plateau edges touch the crossovers: demand the midpoint and 80% of the run
        hits = [cond(set(peaks[d])) for d in run]
        return bool(run) and hits[len(run) // 2] and np.mean(hits) >= 0.8

    mid_ok = holds(mid, lambda p: bool(z4 & p))
    top_ok = holds(top, lambda p: (np.pi, np.pi) in p and not z4 & p)
    spans = "; ".join(f"{v}: {r[0][0]:g}-{r[0][-1]:g}" for v, r in runs.items() if r)
    report(capsys, 7, ordered and mid_ok and top_ok,
           f"plateaus [{spans}] MHz, S' (0,pi) peak in middle {mid_ok}, (pi,pi) only on top {top_ok} "
           f"({secs:.0f} s)")


def two_crossovers(x, c1, c2, w=1.0):
    sp = lambda z: w * np.logaddexp(0, z / w)
    return -0.5 * x - 1.5 * sp(x - c1) - 2.0 * sp(x - c2)


def test_c08_fss_selftest(capsys):
    dc, inv_nu, beta = 7.69, 0.62, 0.36
    x = np.linspace(5.0, 10.5, 23)
    data = {}
    for L in (8, 16, 32, 64):
        X = L ** inv_nu * (x - dc) / dc
        data[L] = (x, L ** (-2 * beta * inv_nu) * 0.5 * (1 + np.tanh(X)))
    r = fss_collapse(data)
    errs = [abs(r.delta_c / dc - 1), abs(r.inv_nu / inv_nu - 1), abs(r.beta / beta - 1)]
    report(capsys, 8, max(errs) <= 0.05,
           f"Dc {r.delta_c:.3f}, 1/nu {r.inv_nu:.3f}, beta {r.beta:.3f} (max rel. dev. {max(errs):.1%})")


def test_c09_derivative_peaks(capsys, scan_L4, scan_L8):
    x = np.arange(0.0, 30.01, 1.0)
    synth = find_derivative_peaks(x, two_crossovers(x, 6.3, 21.6))
    synth_ok = len(synth) == 2 and np.all(np.abs(synth - [6.3, 21.6]) <= 1.0)
    found = {}
    for cfg, recs, _ in (scan_L4, scan_L8):
        xs = [r.point["delta"] for r in recs]
        found[cfg.model.L] = find_derivative_peaks(xs, [r.energy for r in recs])
    real_ok = all(len(p) == 2 for p in found.values())
    detail = ", ".join(f"L={L}: {np.round(p, 2).tolist()}" for L, p in found.items())
    report(capsys, 9, synth_ok and real_ok, f"synthetic {np.round(synth, 2).tolist()}; {detail} MHz "
                                            f"(L=8 scan {scan_L8[2]:.0f} s)")


def test_c10_extrapolation(capsys):
    synth = extrapolate_energy([(m, -3.25 + 1.5 / m) for m in (8, 16, 24, 32)])
    synth_ok = abs(synth.e_inf + 3.25) <= 1e-10
    lat = Lattice2D(8)
    terms = build_ising(lat)
    topo = build_tree(lat)
    pairs = []
    for m in (4, 8, 12, 16):
        r = attn_ground_state(terms, topo, AttnConfig(sweep=SweepConfig(max_m=m, n_sweeps=6), n_cycles=2))
        pairs.append((m, r.energy))
    e = extrapolate_energy(pairs)
    emin = min(v for _, v in pairs)
    report(capsys, 10, synth_ok and e.e_inf <= emin,
           f"synthetic a error {abs(synth.e_inf + 3.25):.1e}; 8x8 Ising E_inf {e.e_inf:.6f} <= "
           f"min E(m) {emin:.6f}")
