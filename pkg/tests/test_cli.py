import json
import shutil

import numpy as np
import pytest
import yaml

from attn.cli import main
from attn.disentangler import PlacementPlan
from attn.ed import exact_ground_state
from attn.lattice import Lattice2D, RydbergParams, build_rydberg
from attn.runner import analyze, load_records


def write_cfg(path, **over):
    cfg = {"model": {"name": "rydberg", "L": 4, "Ly": 2, "boundary": "open"},
           "ansatz": "attn", "m": [8], "seed": 3,
           "sweep": {"n_sweeps": 4}, "attn": {"n_cycles": 1},
           "scan": {"param": "delta", "start": 0.0, "stop": 24.0, "step": 6.0}}
    cfg.update(over)
    path.write_text(yaml.safe_dump(cfg))
    return path


def record_bytes(d):
    return {f.name: f.read_bytes() for f in sorted(d.glob("point*_m*.json"))
            if not f.name.endswith(".timing.json")}


def test_run_matches_exact_diagonalisation(tmp_path, capsys):
    cfg = write_cfg(tmp_path / "c.yaml")
    assert main(["run", "-c", str(cfg), "-o", str(tmp_path / "out")]) == 0
    lines = [json.loads(l) for l in capsys.readouterr().out.splitlines()]
    assert len(lines) == 5
    lat = Lattice2D(4, "open", 2)
    for line in lines:
        e0, _ = exact_ground_state(build_rydberg(lat, RydbergParams.from_vnn(46.0, **line["point"])), 8)
        assert line["energy"] == pytest.approx(e0, rel=1e-9)
    assert (tmp_path / "out" / "effective_config.yaml").exists()
    assert (tmp_path / "out" / "point000_m8.timing.json").exists()


@pytest.mark.parametrize("mode", ["independent", "forward", "bidirectional"])
def test_restart_reproduces_records(tmp_path, mode):
    cfg = write_cfg(tmp_path / "c.yaml", scan_mode=mode)
    full, part = tmp_path / "full", tmp_path / "part"
    assert main(["run", "-c", str(cfg), "-o", str(full)]) == 0
    reference = record_bytes(full)
    shutil.copytree(full, part)
    # simulate an interruption after point 2
    for f in list(part.rglob("point00[34]_m8*")):
        f.unlink()
    if mode == "bidirectional":
        shutil.rmtree(part / "pass_bwd")
    assert main(["run", "-c", str(cfg), "-o", str(part)]) == 0
    assert record_bytes(part) == reference


def test_seed_override_changes_start(tmp_path):
    cfg = write_cfg(tmp_path / "c.yaml", scan=None, ansatz="ttn", m=[2], sweep={"n_sweeps": 1})
    main(["run", "-c", str(cfg), "-o", str(tmp_path / "a"), "--seed", "1"])
    main(["run", "-c", str(cfg), "-o", str(tmp_path / "b"), "--seed", "2"])
    ea = load_records([tmp_path / "a"])[0].energy
    eb = load_records([tmp_path / "b"])[0].energy
    assert ea != eb
    assert yaml.safe_load((tmp_path / "b" / "effective_config.yaml").read_text())["seed"] == 2


def test_analyze_writes_tables(tmp_path, capsys):
    cfg = write_cfg(tmp_path / "c.yaml", scan={"param": "delta", "start": 0.0, "stop": 30.0, "step": 3.0},
                    ansatz="ttn", m=[16])
    main(["run", "-c", str(cfg), "-o", str(tmp_path / "out")])
    capsys.readouterr()
    assert main(["analyze", str(tmp_path / "out"), "-o", str(tmp_path / "an")]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["n_records"] == 11
    for name in ("order_parameters.csv", "structure_factor.csv", "summary.json"):
        assert (tmp_path / "an" / name).exists()
    rows = analyze(load_records([tmp_path / "out"]))["rows"]
    # a 4x2 strip has no bulk away from the edges
    assert all(np.isnan(r["stag_mag"]) for r in rows)
    assert all(r["S_pi_pi"] >= -1e-12 for r in rows)
    assert rows[-1]["Sr_pi_pi"] > rows[0]["Sr_pi_pi"]


def test_placement_verb(tmp_path, capsys):
    assert main(["placement", "--model", "ising", "--L", "16"]) == 0
    plan = PlacementPlan.from_text(capsys.readouterr().out)
    assert plan.per_layer == (16, 8, 8)
    out = tmp_path / "p.txt"
    assert main(["placement", "--model", "rydberg", "--L", "16", "--boundary", "open", "-o", str(out)]) == 0
    assert PlacementPlan.from_text(out.read_text()).n_disentanglers == 22


def test_ed_verb(tmp_path, capsys):
    cfg = write_cfg(tmp_path / "c.yaml", scan=None)
    assert main(["ed", "-c", str(cfg), "-o", str(tmp_path)]) == 0
    res = json.loads((tmp_path / "ed.json").read_text())["results"][0]
    lat = Lattice2D(4, "open", 2)
    e0, _ = exact_ground_state(build_rydberg(lat, RydbergParams.from_vnn(46.0)), 8)
    assert np.isclose(res["energy"], e0)


def test_errors_return_nonzero(tmp_path, capsys):
    assert main(["run", "-c", str(tmp_path / "missing.yaml")]) == 2
    bad = tmp_path / "bad.yaml"
    bad.write_text("model: {L: 6}\n")
    assert main(["run", "-c", str(bad)]) == 2
    assert "error" in capsys.readouterr().err
    assert main(["analyze", str(tmp_path / "nothing")]) == 2
