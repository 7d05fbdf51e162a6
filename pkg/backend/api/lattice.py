"""
Lattice commands
Build, enumerate and verify random dyadic lattices
"""

import argparse
import logging

from backend.api.common import add_seed, print_json
from backend.core.config import settings
from backend.core.models import HierarchyParams
from backend.services.random_lattice import (
    build_hierarchy,
    check_grid_laws,
    sample_from_payload,
    sample_to_payload,
    verify_cover,
)
from backend.services.report_service import row, write_json, write_table
from backend.validation.validation import load_space, read_json

logger = logging.getLogger(__name__)


def _hierarchy_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--space", required=True, help="space spec or JSON file")
    parser.add_argument("--delta", type=float, default=0.25)
    parser.add_argument("--levels", type=int, default=3)
    add_seed(parser)


def build(args: argparse.Namespace) -> int:
    space = load_space(args.space)
    params = HierarchyParams(delta=args.delta, levels=args.levels, seed=args.seed)
    sample = build_hierarchy(space, params, trial=args.trial)
    report = verify_cover(space, sample)
    payload = {"space": args.space, **sample_to_payload(sample)}
    if args.out:
        write_json(payload, args.out)
    print_json({"points": space.n, "cubes": [len(set(g)) for g in sample.labels.tolist()], **report.model_dump()})
    return 0


def enumerate_lattices(args: argparse.Namespace) -> int:
    space = load_space(args.space)
    params = HierarchyParams(delta=args.delta, levels=args.levels, seed=args.seed)
    samples = build_hierarchy(space, params, mode="enumerate", cap=args.cap)
    rows = [
        row(index=i, weight=s.weight, choices=" ".join(f"{g}/{p}" for g, p in s.choices))
        for i, s in enumerate(samples)
    ]
    if args.out:
        write_table(rows, args.out)
    print_json({"lattices": len(samples), "total_weight": sum(s.weight for s in samples)})
    return 0


def verify(args: argparse.Namespace) -> int:
    payload = read_json(args.sample)
    space = load_space(args.space or payload.get("space", ""))
    sample = sample_from_payload(payload)
    cover = verify_cover(space, sample)
    laws = check_grid_laws(space, sample)
    print_json({"cover": cover.model_dump(), "laws": laws.model_dump(), "passed": laws.passed})
    return 0 if laws.passed else 1


def register(subparsers: argparse._SubParsersAction) -> None:
    group = subparsers.add_parser("lattice", help="random dyadic lattices")
    commands = group.add_subparsers(dest="action", required=True)

    p = commands.add_parser("build", help="draw one lattice and save it")
    _hierarchy_args(p)
    p.add_argument("--trial", type=int, default=0)
    p.add_argument("--out", default=None, help="sample JSON file")
    p.set_defaults(handler=build)

    p = commands.add_parser("enumerate", help="list every elementary lattice with its probability")
    _hierarchy_args(p)
    p.add_argument("--cap", type=int, default=settings.A2LAB_ENUMERATION_CAP)
    p.add_argument("--out", default=None, help="CSV of (index, weight, choices)")
    p.set_defaults(handler=enumerate_lattices)

    p = commands.add_parser("verify", help="cover and grid-law checks of a saved sample")
    p.add_argument("--sample", required=True)
    p.add_argument("--space", default=None, help="defaults to the space recorded in the sample")
    p.set_defaults(handler=verify)
