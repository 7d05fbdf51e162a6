"""
Goodness commands
Bad-cube and boundary-layer probability sweeps
"""

import argparse

from backend.api.common import add_out, add_seed, add_workers, int_range, run_single
from backend.services.experiments import BoundaryExperiment, PbadExperiment


def pbad(args: argparse.Namespace) -> int:
    spec = PbadExperiment(
        kind="pbad",
        space=args.space,
        delta=args.delta,
        levels=args.levels,
        gamma=args.gamma,
        a=args.a,
        r_values=args.r_sweep,
        trials=args.trials,
        point=args.point,
        generation=args.generation,
        exact=args.exact,
    )
    return run_single(spec, args, "pbad")


def boundary(args: argparse.Namespace) -> int:
    spec = BoundaryExperiment(
        kind="boundary",
        space=args.space,
        delta=args.delta,
        levels=args.levels,
        a=args.a,
        eps_values=args.eps,
        trials=args.trials,
        point=args.point,
        generation=args.generation,
    )
    return run_single(spec, args, "boundary")


def register(subparsers: argparse._SubParsersAction) -> None:
    group = subparsers.add_parser("goodness", help="good and bad cubes")
    commands = group.add_subparsers(dest="action", required=True)

    p = commands.add_parser("pbad", help="bad-cube frequency against r")
    p.add_argument("--space", required=True)
    p.add_argument("--delta", type=float, default=0.125)
    p.add_argument("--levels", type=int, default=3)
    p.add_argument("--gamma", type=float, default=0.25)
    p.add_argument("--a", type=float, default=None, help="really-good probability (default: derived)")
    p.add_argument("--r-sweep", type=int_range, default=[1, 2, 3, 4, 5, 6])
    p.add_argument("--trials", type=int, default=10_000)
    p.add_argument("--point", type=int, default=None)
    p.add_argument("--generation", type=int, default=None)
    p.add_argument("--exact", action="store_true", help="also enumerate the exact probability")
    add_seed(p)
    add_workers(p)
    add_out(p, "per-r frequencies")
    p.set_defaults(handler=pbad)

    p = commands.add_parser("boundary", help="boundary-layer hit frequency against eps")
    p.add_argument("--space", required=True)
    p.add_argument("--delta", type=float, default=0.25)
    p.add_argument("--levels", type=int, default=3)
    p.add_argument("--a", type=float, default=None)
    p.add_argument("--eps", type=float, nargs="+", default=[0.01, 0.02, 0.05, 0.1, 0.2])
    p.add_argument("--trials", type=int, default=2000)
    p.add_argument("--point", type=int, default=None)
    p.add_argument("--generation", type=int, default=1)
    add_seed(p)
    add_workers(p)
    add_out(p, "per-eps frequencies")
    p.set_defaults(handler=boundary)
