"""
Bellman commands
Second-differential and tau Carleson checks
"""

import argparse

from backend.api.common import add_out, add_seed, add_workers, print_json, run_single
from backend.core.models import BellmanParams
from backend.services.bellman import bellman_hessian_check
from backend.services.experiments import TauExperimentConfig


def check(args: argparse.Namespace) -> int:
    report = bellman_hessian_check(BellmanParams(alpha=args.alpha, Q=args.Q), samples=args.samples, seed=args.seed)
    print_json(report.model_dump())
    return 0 if report.passed else 1


def tau(args: argparse.Namespace) -> int:
    spec = TauExperimentConfig(
        kind="tau",
        tree=args.tree,
        alpha=args.alpha,
        weights=args.weights,
        targets=None if args.weights else args.targets,
    )
    return run_single(spec, args, "carleson")


def register(subparsers: argparse._SubParsersAction) -> None:
    group = subparsers.add_parser("bellman", help="the Bellman function B_Q")
    commands = group.add_subparsers(dest="action", required=True)

    p = commands.add_parser("check", help="sampled second-differential lower bound")
    p.add_argument("--alpha", type=float, default=0.25)
    p.add_argument("--Q", type=float, default=10.0)
    p.add_argument("--samples", type=int, default=100_000)
    add_seed(p)
    p.set_defaults(handler=check)

    p = commands.add_parser("tau", help="Carleson constant of tau against [w]_2")
    p.add_argument("--tree", default="dyadic:levels=10")
    p.add_argument("--alpha", type=float, default=0.25)
    p.add_argument("--targets", type=float, nargs="+", default=[2.0, 10.0, 100.0, 1000.0])
    p.add_argument("--weights", default=None, help="power:beta=a..b[:count=k] or a weight JSON file; overrides --targets")
    add_seed(p)
    add_workers(p)
    add_out(p, "a2 vs Carleson table")
    p.set_defaults(handler=tau)
