"""Command line front end: ``run``, ``analyze``, ``placement``, ``ed``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ModelConfig, RunConfig, dump_config, load_config


def _load(args) -> RunConfig:
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "workers", None) is not None:
        cfg.workers = args.workers
    return cfg


def cmd_run(args) -> int:
    from .runner import run

    cfg = _load(args)
    out = args.output or cfg.output_dir
    Path(out).mkdir(parents=True, exist_ok=True)
    (Path(out) / "effective_config.yaml").write_text(dump_config(cfg))
    records = run(cfg, out, cfg.workers)
    for r in records:
        print(json.dumps({"point": r.point, "m": r.m, "energy": r.energy, "converged": r.converged}))
    return 0


def cmd_analyze(args) -> int:
    from .runner import analyze, load_records

    summary = analyze(load_records(args.records), args.output, nu=args.nu)
    summary.pop("rows", None)
    print(json.dumps(summary, indent=1))
    return 0


def cmd_placement(args) -> int:
    from .runner import placement_for

    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = RunConfig(model=ModelConfig(name=args.model, L=args.L, boundary=args.boundary))
    plan = placement_for(cfg)
    text = plan.to_text()
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_ed(args) -> int:
    from .ed import exact_ground_state

    cfg = _load(args)
    lat = cfg.model.lattice()
    if lat.N > 20:
        print(f"exact diagonalisation is limited to 20 sites, got {lat.N}", file=sys.stderr)
        return 2
    results = []
    for point in cfg.points():
        e0, _ = exact_ground_state(cfg.model_at(point).terms(), lat.N)
        results.append({"point": point, "energy": e0})
        print(json.dumps(results[-1]))
    if args.output:
        from .io import write_json

        write_json(Path(args.output) / "ed.json", {"config": cfg.to_dict(), "results": results})
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="attn", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="ground-state job or scan")
    r.add_argument("-c", "--config", required=True)
    r.add_argument("-o", "--output")
    r.add_argument("--seed", type=int)
    r.add_argument("--workers", type=int)
    r.set_defaults(func=cmd_run)

    a = sub.add_parser("analyze", help="tables from result records")
    a.add_argument("records", nargs="+", help="record files or run directories")
    a.add_argument("-o", "--output")
    a.add_argument("--nu", type=float, help="exponent for the peak extrapolation")
    a.set_defaults(func=cmd_analyze)

    pl = sub.add_parser("placement", help="print a disentangler placement plan")
    pl.add_argument("-c", "--config")
    pl.add_argument("--model", default="ising", choices=["ising", "heisenberg", "rydberg"])
    pl.add_argument("--L", type=int, default=8)
    pl.add_argument("--boundary", default="periodic", choices=["periodic", "open"])
    pl.add_argument("-o", "--output")
    pl.set_defaults(func=cmd_placement)

    e = sub.add_parser("ed", help="exact diagonalisation reference")
    e.add_argument("-c", "--config", required=True)
    e.add_argument("-o", "--output")
    e.set_defaults(func=cmd_ed)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
