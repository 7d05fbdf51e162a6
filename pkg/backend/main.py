"""
a2lab Command Line
Parser assembly and logging setup
"""

import argparse
import logging

# Import command groups
from backend.api import bellman, census, decompose, goodness, lattice, run, shift
from backend.core.config import VERSION, settings

logger = logging.getLogger(__name__)

COMMAND_GROUPS = (lattice, census, goodness, shift, bellman, decompose, run)


def configure_logging(level: str | None = None) -> None:
    logging.basicConfig(
        level=(level or settings.A2LAB_LOG_LEVEL).upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=settings.PROJECT_NAME,
        description="Verification lab for random dyadic lattices and weighted A2 estimates",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {VERSION}")
    parser.add_argument("--log-level", default=None, help="overrides A2LAB_LOG_LEVEL")
    subparsers = parser.add_subparsers(dest="command", required=True)

    # Include command groups
    for group in COMMAND_GROUPS:
        group.register(subparsers)
    return parser
