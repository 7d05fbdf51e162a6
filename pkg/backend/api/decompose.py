"""
Decomposition commands
Decay tables, the averaging identity and the containment probability
"""

import argparse

from backend.api.common import add_out, add_seed, add_workers, int_range, run_single
from backend.services.experiments import AvgIdentityExperiment, ContainmentExperiment, DecayExperiment


def check(args: argparse.Namespace) -> int:
    spec = DecayExperiment(
        kind="decay",
        spaces=args.space,
        kernel=args.kernel,
        profile=args.profile,
        holder_eps=args.holder_eps,
        delta=args.delta,
        levels=args.levels,
        r=args.r0,
        gamma=args.gamma,
        s0=args.s0,
        ancestor_offset=args.ancestor_offset,
    )
    return run_single(spec, args, "decay_in", {"decay_out": args.out_disjoint, "families": args.out_families})


def avg_identity(args: argparse.Namespace) -> int:
    spec = AvgIdentityExperiment(
        kind="avg-identity",
        spaces=args.space,
        delta=args.delta,
        levels=args.levels,
        r=args.r0,
        gamma=args.gamma,
        a=args.a,
        operators=args.trials,
        pairs=args.pairs,
    )
    return run_single(spec, args, "identity")


def containment(args: argparse.Namespace) -> int:
    spec = ContainmentExperiment(
        kind="containment",
        space=args.space,
        delta=args.delta,
        levels=args.levels,
        s0_values=args.s0_sweep,
        trials=args.trials,
        ancestor_offset=args.ancestor_offset,
        exact=args.exact,
        good_only=args.good_only,
        r=args.r0,
        gamma=args.gamma,
    )
    return run_single(spec, args, "containment")


def _common(parser: argparse.ArgumentParser, delta: float, levels: int | None, r0: int) -> None:
    parser.add_argument("--delta", type=float, default=delta)
    parser.add_argument("--levels", type=int, default=levels)
    parser.add_argument("--gamma", type=float, default=0.25)
    parser.add_argument("--r0", type=int, default=r0, help="goodness depth r")
    add_seed(parser)
    add_workers(parser)


def register(subparsers: argparse._SubParsersAction) -> None:
    group = subparsers.add_parser("decompose", help="decomposition of the bilinear form")
    commands = group.add_subparsers(dest="action", required=True)

    p = commands.add_parser("check", help="decay tables, paraproduct subtraction and shift extraction")
    p.add_argument("--space", nargs="+", required=True, help="one or more spaces; ratios are compared across them")
    p.add_argument("--kernel", choices=["inv-dist", "hilbert", "zero"], default="inv-dist")
    p.add_argument("--profile", choices=["distance", "measure"], default="distance")
    p.add_argument("--holder-eps", type=float, default=1.0)
    p.add_argument("--s0", type=int, default=0)
    p.add_argument("--ancestor-offset", type=int, default=10)
    _common(p, 0.25, None, 2)
    add_out(p, "nested-near decay table")
    p.add_argument("--out-disjoint", default=None, help="CSV file for the disjoint decay table")
    p.add_argument("--out-families", default=None, help="CSV file for the extracted shift families")
    p.set_defaults(handler=check)

    p = commands.add_parser("avg-identity", help="exact averaging identity by enumeration")
    p.add_argument("--space", nargs="+", required=True)
    p.add_argument("--trials", type=int, default=5, help="random operators per space")
    p.add_argument("--pairs", type=int, default=5, help="(f, g) pairs per operator")
    p.add_argument("--a", type=float, default=None)
    _common(p, 0.25, 2, 1)
    add_out(p, "per-operator residuals")
    p.set_defaults(handler=avg_identity)

    p = commands.add_parser("containment", help="probability that R sits inside its far ancestor")
    p.add_argument("--space", required=True)
    p.add_argument("--s0-sweep", type=int_range, default=[0, 1, 2, 3, 4])
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--ancestor-offset", type=int, default=0)
    p.add_argument("--exact", action="store_true")
    p.add_argument("--good-only", action="store_true", help="count only pairs with R good")
    _common(p, 0.25, 3, 1)
    add_out(p, "per-s0 frequencies")
    p.set_defaults(handler=containment)
