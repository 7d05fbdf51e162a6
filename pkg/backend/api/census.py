"""
Census commands
Exhaustive 1-lattice census on small spaces
"""

import argparse

from backend.api.common import add_out, print_json
from backend.core.errors import config_error
from backend.services.lattice_combinatorics import verify_injectivity
from backend.services.report_service import row, write_table
from backend.validation.validation import load_space


def run(args: argparse.Namespace) -> int:
    space = load_space(args.space)
    if space.n > args.max_points:
        raise config_error(f"space has {space.n} points, above --max-points {args.max_points}", "space")
    points = range(space.n) if args.v is None else [args.v]
    reports = [verify_injectivity(space, v, radius=args.radius, closed=args.closed) for v in points]

    rows = [
        row(v=r.v, S=" ".join(map(str, s.S)), card_ws=s.card_ws, card_images=s.card_images)
        for r in reports
        for s in r.rows
    ]
    if args.out:
        write_table(rows, args.out)
    print_json(
        [
            {k: v for k, v in r.model_dump().items() if k != "rows"}
            for r in reports
        ]
    )
    return 0 if all(r.bound_holds for r in reports) else 1


def register(subparsers: argparse._SubParsersAction) -> None:
    group = subparsers.add_parser("census", help="1-lattice membership census")
    commands = group.add_subparsers(dest="action", required=True)

    p = commands.add_parser("run", help="membership fraction and recoloring injectivity")
    p.add_argument("--space", required=True)
    p.add_argument("--v", type=int, default=None, help="point to examine (default: every point)")
    p.add_argument("--max-points", type=int, default=12)
    p.add_argument("--radius", type=float, default=1.0, help="conflict radius")
    p.add_argument("--closed", action="store_true", help="conflict when dist <= radius")
    add_out(p, "per-S cardinalities")
    p.set_defaults(handler=run)
