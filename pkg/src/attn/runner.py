"""Batch jobs: single runs and parameter scans, plus record analysis."""
from __future__ import annotations

import csv
import io
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig
from .disentangler import PlacementPlan, attn_ground_state, plan_placement
from .io import load_checkpoint, read_json, save_checkpoint, write_json, write_text
from .lattice import Lattice2D
from .observables import (CorrelationTable, bulk_sites, extrapolate_energy, free_sites, fss_collapse,
                          order_parameter_sq, renormalized_structure_factor, sampled_pairs,
                          second_derivative_analysis, staggered_magnetization, structure_factor_grid)
from .tree import build_tree
from .ttn import TtnOptimizer, entanglement_entropy, expectation, randomize

log = logging.getLogger(__name__)

RECORD_FORMAT = "attn-record"
RECORD_VERSION = 1


@dataclass
class ResultRecord:
    config: dict
    point: dict
    m: int
    energy: float
    trace: list
    converged: bool
    observables: dict = field(default_factory=dict)
    placement: str = ""
    code_version: str = __version__

    def to_dict(self) -> dict:
        return {"format": RECORD_FORMAT, "version": RECORD_VERSION, "code_version": self.code_version,
                "config": self.config, "point": self.point, "m": self.m, "energy": self.energy,
                "trace": self.trace, "converged": self.converged, "observables": self.observables,
                "placement": self.placement}

    @classmethod
    def from_dict(cls, d: dict) -> "ResultRecord":
        if d.get("format") != RECORD_FORMAT:
            raise ValueError("not a result record")
        if d.get("version") != RECORD_VERSION:
            raise ValueError(f"unsupported record version {d.get('version')}")
        return cls(d["config"], d["point"], d["m"], d["energy"], d["trace"], d["converged"],
                   d.get("observables", {}), d.get("placement", ""), d.get("code_version", ""))

    def run_config(self) -> RunConfig:
        return RunConfig.from_dict(self.config)


@dataclass
class Solution:
    state: object
    layer: object
    plan: PlacementPlan | None
    energy: float
    trace: list
    converged: bool


def _solve_once(cfg: RunConfig, point: dict, m: int, seed: int, init: Solution | None) -> Solution:
    model = cfg.model_at(point)
    terms = model.terms()
    topo = build_tree(model.lattice())
    if init is None:
        state, layer, sweep = randomize(topo, m, seed=seed), None, cfg.sweep_config(m)
    else:
        state, layer = init.state.copy(), init.layer
        sweep = replace(cfg.sweep_config(m), **cfg.warm_sweep)
    if cfg.ansatz == "ttn":
        opt = TtnOptimizer(state, terms, sweep)
        res = opt.run()
        st = opt.state
        return Solution(st, None, None, expectation(st, terms), list(res.energies), res.converged)
    acfg = replace(cfg.attn_config(m, seed), sweep=sweep)
    r = attn_ground_state(terms, topo, acfg, state=state, layer=layer)
    return Solution(r.state, r.layer, r.plan, r.energy, list(r.trace), r.converged)


def solve(cfg: RunConfig, point: dict, m: int, seed: int, init: Solution | None = None) -> Solution:
    """Ground state at one point: warm-started from ``init`` or the best of
    ``cfg.restarts`` random starts."""
    if init is not None:
        return _solve_once(cfg, point, m, seed, init)
    best = None
    for r in range(max(1, cfg.restarts)):
        sol = _solve_once(cfg, point, m, seed + 7919 * r, None)
        if best is None or sol.energy < best.energy:
            best = sol
    return best


def measure(cfg: RunConfig, lat: Lattice2D, state, layer) -> dict:
    out = {}
    wanted = set(cfg.observables)
    if "densities" in wanted or "correlators" in wanted:
        sites = free_sites(lat) if cfg.model.name == "rydberg" and cfg.model.delta_br is not None \
            else list(range(lat.N))
        pairs = None if lat.L <= 8 else sampled_pairs(lat, sites)
        if "correlators" not in wanted:
            pairs = []
        t = CorrelationTable.from_state(state, lat, sites, layer, pairs)
        out["table"] = t.to_dict()
    if "entropies" in wanted:
        topo = state.topology
        out["entropies"] = {str(e): entanglement_entropy(state, e) for e in topo.links if not topo.is_site(e)}
    return out


def _save_solution(path: Path, sol: Solution):
    meta = {"energy": sol.energy, "trace": sol.trace, "converged": sol.converged,
            "plan": sol.plan.to_text() if sol.plan is not None else None}
    save_checkpoint(path, sol.state, sol.layer, meta)


def _load_solution(path: Path, topo) -> Solution:
    state, layer, meta = load_checkpoint(path, topo)
    plan = PlacementPlan.from_text(meta["plan"], topo) if meta.get("plan") is not None else None
    return Solution(state, layer, plan, meta["energy"], meta["trace"], meta["converged"])


def _chain(cfg: RunConfig, order: list[int], points, m: int, out: Path, warm: bool) -> dict:
    """Solve points in ``order``; with ``warm`` each starts from the previous
    solution.  Every solution is checkpointed and reused on restart."""
    topo = build_tree(cfg.model.lattice())
    sols, prev = {}, None
    for i in order:
        ck = out / f"point{i:03d}_m{m}.npz"
        if ck.exists():
            sol = _load_solution(ck, topo)
        else:
            sol = solve(cfg, points[i], m, cfg.seed + i, prev if warm else None)
            if cfg.checkpoint_every and (i % cfg.checkpoint_every == 0 or warm):
                _save_solution(ck, sol)
        sols[i] = sol
        prev = sol
    return sols


def _record(cfg: RunConfig, point: dict, m: int, sol: Solution) -> ResultRecord:
    obs = measure(cfg, cfg.model.lattice(), sol.state, sol.layer)
    return ResultRecord(cfg.to_dict(), point, m, float(sol.energy), [float(x) for x in sol.trace],
                        bool(sol.converged), obs, sol.plan.to_text() if sol.plan is not None else "")


def run_point(cfg: RunConfig, index: int, point: dict, out: Path) -> list[ResultRecord]:
    """All bond dimensions at one independent point."""
    records = []
    for m in sorted(cfg.m):
        rec_path = out / f"point{index:03d}_m{m}.json"
        if rec_path.exists():
            records.append(ResultRecord.from_dict(read_json(rec_path)))
            continue
        t0 = time.perf_counter()
        sol = _chain(cfg, [index], {index: point}, m, out / "states", warm=False)[index]
        rec = _record(cfg, point, m, sol)
        write_json(rec_path, rec.to_dict())
        write_json(out / f"point{index:03d}_m{m}.timing.json", {"wall_seconds": time.perf_counter() - t0})
        records.append(rec)
        log.info("point %d %s m=%d E=%.10f", index, point, m, sol.energy)
    return records


def _run_point_job(args):
    cfg_dict, index, point, out = args
    return [r.to_dict() for r in run_point(RunConfig.from_dict(cfg_dict), index, point, Path(out))]


def run(cfg: RunConfig, output_dir: str | None = None, workers: int | None = None) -> list[ResultRecord]:
    """Execute a single job or a scan; finished work is reused on restart.

    ``scan_mode`` is ``independent`` (cold start per point), ``forward``
    (each point warm-starts from the previous one) or ``bidirectional``
    (forward and backward warm-started passes, lower energy kept).
    """
    out = Path(output_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "config.json", cfg.to_dict())
    points = cfg.points()
    workers = cfg.workers if workers is None else workers
    if cfg.scan_mode == "independent" or len(points) == 1:
        if workers > 1 and len(points) > 1:
            jobs = [(cfg.to_dict(), i, p, str(out)) for i, p in enumerate(points)]
            with ProcessPoolExecutor(max_workers=workers) as ex:
                return [ResultRecord.from_dict(d) for batch in ex.map(_run_point_job, jobs) for d in batch]
        return [r for i, p in enumerate(points) for r in run_point(cfg, i, p, out)]

    records = []
    n = len(points)
    for m in sorted(cfg.m):
        t0 = time.perf_counter()
        passes = [_chain(cfg, list(range(n)), points, m, out / "pass_fwd", warm=True)]
        if cfg.scan_mode == "bidirectional":
            passes.append(_chain(cfg, list(range(n))[::-1], points, m, out / "pass_bwd", warm=True))
        elapsed = time.perf_counter() - t0
        for i, p in enumerate(points):
            rec_path = out / f"point{i:03d}_m{m}.json"
            if rec_path.exists():
                records.append(ResultRecord.from_dict(read_json(rec_path)))
                continue
            sol = min((ps[i] for ps in passes), key=lambda s: s.energy)
            rec = _record(cfg, p, m, sol)
            write_json(rec_path, rec.to_dict())
            write_json(out / f"point{i:03d}_m{m}.timing.json", {"scan_wall_seconds": elapsed})
            records.append(rec)
    return records


def load_records(paths) -> list[ResultRecord]:
    recs = []
    for p in paths:
        p = Path(p)
        files = sorted(f for f in p.glob("point*.json") if not f.name.endswith(".timing.json")) if p.is_dir() else [p]
        recs.extend(ResultRecord.from_dict(read_json(f)) for f in files)
    return recs


def _table(rec: ResultRecord) -> CorrelationTable | None:
    d = rec.observables.get("table")
    return CorrelationTable.from_dict(d) if d else None


def analyze(records: list[ResultRecord], out_dir: str | None = None, nu: float | None = None) -> dict:
    """Order parameters, structure factors, derivative peaks and (with enough
    sizes) the scaling collapse.  Writes CSV tables and ``summary.json``."""
    if not records:
        raise ValueError("no records")
    names = {r.config["model"]["name"] for r in records}
    if len(names) != 1:
        raise ValueError(f"records mix model families {sorted(names)}")
    rows, sk_rows = [], []
    by_size: dict[tuple[int, int], list] = {}
    for r in records:
        cfg = r.run_config()
        model = cfg.model_at(r.point)
        lat = model.lattice()
        row = {"L": lat.L, "m": r.m, **{f"{k}_MHz" if k in ("delta", "omega", "v_nn") else k: v
                                       for k, v in r.point.items()},
               "energy_MHz" if model.name == "rydberg" else "energy": r.energy}
        t = _table(r)
        if t is not None:
            bulk = t.restrict([s for s in bulk_sites(lat) if s in t.sites])
            row["stag_mag"] = staggered_magnetization(bulk) if bulk.n_sites else float("nan")
            if t.complete:
                row["S_pi_pi"] = order_parameter_sq(t, "Z2")
                row["S_0_pi"] = order_parameter_sq(t, "Z4")
                row["Sr_pi_pi"] = renormalized_structure_factor(t, (np.pi, np.pi))
                row["Sr_0_pi"] = renormalized_structure_factor(t, (0.0, np.pi))
                ks, S = structure_factor_grid(t)
                S0 = S[0, 0] if S[0, 0] > 0 else 1.0
                for iy, ky in enumerate(ks):
                    for ix, kx in enumerate(ks):
                        sk_rows.append({"L": lat.L, "m": r.m, **r.point, "kx": kx, "ky": ky,
                                        "S": S[iy, ix], "S_renorm": S[iy, ix] / S0})
        rows.append(row)
        by_size.setdefault((lat.L, r.m), []).append((r.point, r.energy, row))
    summary: dict = {"n_records": len(records), "model": names.pop()}

    series, op_series = {}, {}
    for (L, m), pts in by_size.items():
        if len(pts) < 3 or not pts[0][0]:
            continue
        key = next(iter(pts[0][0]))
        pts = sorted(pts, key=lambda p: p[0][key])
        x = [p[0][key] for p in pts]
        series.setdefault(L, {})[m] = (x, [p[1] for p in pts])
        if all("S_0_pi" in p[2] for p in pts):
            op_series.setdefault(L, {})[m] = (x, [p[2]["S_0_pi"] for p in pts])
    peak_rows = []
    if series:
        best = {L: s[max(s)] for L, s in series.items()}
        try:
            d = second_derivative_analysis(best, nu=nu)
            summary["peaks"] = {str(L): p.tolist() for L, p in d.peaks.items()}
            summary["delta_c_star"] = d.delta_c
            summary["delta_c_star_err"] = d.delta_c_err
            for L, p in d.peaks.items():
                peak_rows += [{"L": L, "index": j, "position": v} for j, v in enumerate(p)]
        except ValueError as exc:
            summary["peaks_error"] = str(exc)
    if len(op_series) >= 3:
        c = fss_collapse({L: s[max(s)] for L, s in op_series.items()})
        summary["collapse"] = {"delta_c": c.delta_c, "inv_nu": c.inv_nu, "beta": c.beta,
                               "cost": c.cost, "success": c.success, "errors": c.errors}
    m_groups: dict = {}
    for r in records:
        m_groups.setdefault(tuple(sorted(r.point.items())), {})[r.m] = r.energy
    extr = []
    for pt, em in m_groups.items():
        if len(em) >= 3:
            e = extrapolate_energy(list(em.items()))
            extr.append({**dict(pt), "e_inf": e.e_inf, "residual": e.residual})
    if extr:
        summary["extrapolation"] = extr
    if out_dir is not None:
        out = Path(out_dir)
        _write_csv(out / "order_parameters.csv", rows)
        _write_csv(out / "structure_factor.csv", sk_rows)
        _write_csv(out / "peaks.csv", peak_rows)
        write_json(out / "summary.json", summary)
    summary["rows"] = rows
    return summary


def _write_csv(path: Path, rows: list[dict]):
    if not rows:
        return
    cols = []
    for r in rows:
        cols += [k for k in r if k not in cols]
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=cols)
    w.writeheader()
    w.writerows(rows)
    write_text(path, buf.getvalue())


def placement_for(cfg: RunConfig) -> PlacementPlan:
    lat = cfg.model.lattice()
    return plan_placement(build_tree(lat), [t.sites for t in cfg.model.terms()],
                          cfg.attn.get("max_layer_depth"))
