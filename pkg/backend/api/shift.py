"""
Shift commands
Weighted norms of random dyadic shifts
"""

import argparse

from backend.api.common import add_out, add_seed, add_workers, complexity, run_single
from backend.services.experiments import ShiftBenchExperiment


def bench(args: argparse.Namespace) -> int:
    spec = ShiftBenchExperiment(
        kind="shift-bench",
        tree=args.tree,
        complexities=args.complexities,
        weights=args.weights,
        targets=args.targets,
        draws=args.draws,
        source=args.source,
        alpha=args.alpha,
        stopping=not args.no_stopping,
    )
    return run_single(spec, args, "shift")


def register(subparsers: argparse._SubParsersAction) -> None:
    group = subparsers.add_parser("shift", help="dyadic shifts")
    commands = group.add_subparsers(dest="action", required=True)

    p = commands.add_parser("bench", help="worst weighted norm per complexity and weight")
    p.add_argument("--tree", default="dyadic:levels=9", help="tree spec or saved lattice sample")
    p.add_argument("--complexities", type=complexity, nargs="+", default=[(0, 0), (1, 0), (1, 1), (2, 2)])
    weights = p.add_mutually_exclusive_group()
    weights.add_argument("--weights", default=None, help="power:beta=a..b[:count=k] or a weight JSON file")
    weights.add_argument("--targets", type=float, nargs="+", default=None, help="[w]_2 targets for power weights")
    p.add_argument("--draws", type=int, default=20)
    p.add_argument("--source", choices=["random", "sign_pattern"], default="random")
    p.add_argument("--alpha", type=float, default=0.25)
    p.add_argument("--no-stopping", action="store_true", help="skip the stopping-family checks")
    add_seed(p)
    add_workers(p)
    add_out(p, "complexity,m,n,a2,norm,slope table")
    p.set_defaults(handler=bench)
