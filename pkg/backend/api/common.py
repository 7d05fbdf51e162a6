"""
Common command helpers
Shared arguments and the single-experiment path used by every command group
"""

import argparse
import json
import logging

from backend.core.config import settings
from backend.services.experiments import RUNNERS, ExperimentBase
from backend.services.report_service import write_table

logger = logging.getLogger(__name__)


# ============================================================
# ARGUMENT TYPES
# ============================================================


def int_range(text: str) -> list[int]:
    """'1:6' -> [1, ..., 6]; '3' -> [3]"""
    try:
        lo, _, hi = text.partition(":")
        values = list(range(int(lo), int(hi or lo) + 1))
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected 'a:b', got '{text}'") from e
    if not values:
        raise argparse.ArgumentTypeError(f"empty range '{text}'")
    return values


def complexity(text: str) -> tuple[int, int]:
    """'m,n' -> (m, n)"""
    try:
        m, n = (int(part) for part in text.split(","))
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected 'm,n', got '{text}'") from e
    return m, n


# ============================================================
# SHARED ARGUMENTS
# ============================================================


def add_seed(parser: argparse.ArgumentParser, default: int = 0) -> None:
    parser.add_argument("--seed", type=int, default=default, help="master seed (default %(default)s)")


def add_workers(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--threads",
        type=int,
        default=None,
        help="worker processes; results do not depend on it (default A2LAB_THREADS)",
    )


def add_out(parser: argparse.ArgumentParser, what: str = "table") -> None:
    parser.add_argument("--out", default=None, help=f"CSV file for the {what}")


def workers_of(args: argparse.Namespace) -> int:
    return args.threads or settings.A2LAB_THREADS


def print_json(payload) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True, default=str))


# ============================================================
# SINGLE EXPERIMENT
# ============================================================


def run_single(
    spec: ExperimentBase,
    args: argparse.Namespace,
    table: str,
    extra_tables: dict[str, str | None] | None = None,
) -> int:
    """Run one experiment model, write its main table to --out and print the headline numbers"""
    result = RUNNERS[spec.kind](spec, args.seed, workers_of(args))
    rows = result.tables.get(table, [])
    if args.out:
        write_table(rows, args.out)
    for name, path in (extra_tables or {}).items():
        if path:
            write_table(result.tables.get(name, []), path)
    print_json({"kind": spec.kind, "passed": result.passed, **result.measured})
    logger.debug(f"{spec.kind}: {len(rows)} rows in '{table}'")
    return 0 if result.passed else 1
