"""Command line entry point: simulate, montecarlo, pcrlb and graph subcommands.

Failures print one JSON error record on stderr and exit nonzero
(2 for invalid input, 1 for runtime failures).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import consensus as cons
from . import harness as hs
from . import pcrlb as pc


def _load(path):
    try:
        return hs.ScenarioConfig.load(path)
    except FileNotFoundError:
        raise hs.ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise hs.ConfigError(f"config is not valid JSON: {exc}") from None


def cmd_simulate(args):
    cfg = _load(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scn = hs.build_scenario(cfg, cfg.seed)
    run = hs.run_scenario(cfg, cfg.seed, scn)
    hs.export(run, out / "run.json", "json")
    hs.export(run, out / "run.csv", "csv")
    cons.save_graph(scn.graph, out / "graph.json", scn.U)
    return {"out": str(out), "measurement_hash": run.measurement_hash, "diverged": run.diverged}


def cmd_montecarlo(args):
    cfg = _load(args.config)
    out = Path(args.out)
    report = hs.monte_carlo(cfg, args.runs, workers=args.workers)
    hs.export(report, out, "csv")
    hs.export(report, out / "report.json", "json")
    return {"out": str(out), "runs": report.n_runs, "excluded": report.excluded, "summary": report.summary}


def cmd_pcrlb(args):
    cfg = _load(args.config)
    variants = tuple(v.strip() for v in args.variants.split(",") if v.strip())
    bad = [v for v in variants if v not in pc.VARIANTS]
    if bad:
        raise hs.ConfigError(f"unknown PCRLB variant(s): {', '.join(bad)}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scn = hs.build_scenario(cfg, cfg.seed)
    res = hs.compute_scenario_bounds(cfg, scn, cfg.seed, variants)
    keep = [k for k in res.J if k.split("[")[0] in variants]
    res.J = {k: res.J[k] for k in keep}
    res.position = {k: res.position[k] for k in keep}
    pc.write_bounds_csv(res, out / "bounds.csv")
    return {"out": str(out), "variants": keep}


def cmd_graph(args):
    rng = np.random.default_rng(args.seed)
    radius = args.radius if args.radius is not None else cons.default_radius(args.n, args.side)
    g = cons.random_geometric_graph(args.n, radius, args.side, rng)
    U = cons.metropolis_weights(g)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    cons.save_graph(g, out, U)
    return {"out": str(out), "edges": len(g.edges()), "convergence_time": U.convergence_time}


def build_parser():
    p = argparse.ArgumentParser(prog="cfdpf", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress and warnings")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="one run: truth, measurements and all filters")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("montecarlo", help="Monte-Carlo RMS curves and CDF samples")
    s.add_argument("--config", required=True)
    s.add_argument("--runs", type=int, default=None)
    s.add_argument("--workers", type=int, default=1, help="parallel processes (results are unchanged)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_montecarlo)

    s = sub.add_parser("pcrlb", help="centralised, exact distributed and approximate bounds")
    s.add_argument("--config", required=True)
    s.add_argument("--variants", default=",".join(pc.VARIANTS))
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_pcrlb)

    s = sub.add_parser("graph", help="connected random geometric graph with Metropolis weights")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--radius", type=float, default=None)
    s.add_argument("--side", type=float, default=16.0)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_graph)
    return p


def _fail(command, exc, code):
    record = {"status": "error", "command": command, "error": type(exc).__name__, "message": str(exc)}
    print(json.dumps(record), file=sys.stderr)
    return code


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(name)s: %(message)s")
    try:
        result = args.func(args)
    except (hs.ConfigError, cons.GraphError, ValueError) as exc:
        return _fail(args.command, exc, 2)
    except Exception as exc:  # noqa: BLE001 - every failure becomes an error record
        return _fail(args.command, exc, 1)
    print(json.dumps({"status": "ok", "command": args.command, **result}, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
