"""Command line interface: ``ecfp run|cne|graph|validate``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from .. import congestion as cg
from ..consensus import (
    geometric_graph_with_degree,
    geometric_random_graph,
    metropolis_hastings_weights,
    read_edge_list,
    spectral_contraction,
    write_edge_list,
    write_weights_csv,
)
from ..errors import ECFPError
from .cne import solve_cne
from .config import ConfigError, ExperimentConfig, build_game
from .experiment import Experiment, emit_csv
from .validate import run_checks

log = logging.getLogger("ecfp")


def _setup_logging():
    level = os.environ.get("ECFP_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _json_default(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    raise TypeError(type(x).__name__)


def cmd_run(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    if args.workers is not None:
        cfg.workers = args.workers
    records, summary = Experiment(cfg).run()
    emit_csv(records, args.out)
    summary["csv"] = args.out
    print(json.dumps(summary, indent=2, default=_json_default))
    return 0


def cmd_cne(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    game, _ = build_game(cfg, cfg.rngs()["costs"])
    if not isinstance(game, cg.CongestionGame):
        raise ConfigError("cne needs a congestion game config")
    p, residual = solve_cne(game, **cfg.cne)
    print(json.dumps({"cne": [float(x) for x in p], "residual": residual}, indent=2))
    return 0


def _describe(g, radius=None) -> dict:
    info = {"n": g.n, "edges": int(len(g.edges)), "avg_degree": g.average_degree,
            "connected": g.is_connected()}
    if radius is not None:
        info["radius"] = radius
    if info["connected"]:
        info["lambda"] = spectral_contraction(metropolis_hastings_weights(g)) if g.n > 1 else 0.0
    return info


def cmd_graph_gen(args) -> int:
    if (args.radius is None) == (args.target_degree is None):
        print("error: give exactly one of --radius or --target-degree", file=sys.stderr)
        return 2
    if args.target_degree is not None:
        g, radius = geometric_graph_with_degree(args.n, args.target_degree, args.seed, args.max_retries)
    else:
        radius = args.radius
        g = geometric_random_graph(args.n, radius, args.seed, args.max_retries)
    if args.out:
        write_edge_list(g, args.out)
    if args.weights_csv:
        write_weights_csv(metropolis_hastings_weights(g), args.weights_csv)
    print(json.dumps(_describe(g, radius), indent=2))
    return 0


def cmd_graph_info(args) -> int:
    g = read_edge_list(args.path)
    if args.weights_csv:
        write_weights_csv(metropolis_hastings_weights(g), args.weights_csv)
    print(json.dumps(_describe(g), indent=2))
    return 0


def cmd_validate(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    results = run_checks(cfg, short_steps=args.steps)
    failed = 0
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        failed += not ok
    if failed:
        print(f"{failed} invariant(s) violated", file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ecfp", description="Empirical centroid fictitious play simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an experiment and write its trajectory CSV")
    p.add_argument("config")
    p.add_argument("--out", required=True, help="CSV output path")
    p.add_argument("--workers", type=int, default=None, help="threads for per-player best responses")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("cne", help="solve and print the consensus equilibrium of a congestion config")
    p.add_argument("config")
    p.set_defaults(func=cmd_cne)

    g = sub.add_parser("graph", help="geometric communication graphs")
    gsub = g.add_subparsers(dest="graph_command", required=True)
    p = gsub.add_parser("gen", help="generate a connected geometric random graph")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--radius", type=float)
    p.add_argument("--target-degree", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-retries", type=int, default=100)
    p.add_argument("--out", help="edge-list output path")
    p.add_argument("--weights-csv", help="also write the Metropolis-Hastings weights")
    p.set_defaults(func=cmd_graph_gen)
    p = gsub.add_parser("info", help="describe an edge-list graph")
    p.add_argument("path")
    p.add_argument("--weights-csv")
    p.set_defaults(func=cmd_graph_info)

    p = sub.add_parser("validate", help="run the invariant suite for a config")
    p.add_argument("config")
    p.add_argument("--steps", type=int, default=200, help="length of the short tracking run")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"ecfp: config error: {exc}", file=sys.stderr)
        return 2
    except (ECFPError, OSError, ValueError) as exc:
        print(f"ecfp: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
