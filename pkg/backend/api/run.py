"""
Run command
Executes a JSON experiment config and writes the report
"""

import argparse
import logging
from pathlib import Path

from pydantic import ValidationError

from backend.api.common import print_json
from backend.core.config import RESULTS_DIR
from backend.core.errors import config_error
from backend.services.experiments import ExperimentConfig, run_experiment
from backend.services.report_service import Report, emit_report, summary_rows
from backend.validation.validation import format_validation_error, read_json

logger = logging.getLogger(__name__)


def load_config(path: str | Path) -> ExperimentConfig:
    payload = read_json(path)
    try:
        return ExperimentConfig.model_validate(payload)
    except ValidationError as e:
        message, field = format_validation_error(e)
        raise config_error(f"{path}: {message}", field) from e


def execute(config: ExperimentConfig, out_dir: str | Path | None, threads: int | None = None) -> Report:
    report = run_experiment(config, workers=threads)
    target = out_dir or config.out_dir or RESULTS_DIR
    emit_report(report, target, config.formats)
    return report


def run(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    if args.formats:
        config = config.model_copy(update={"formats": args.formats})
    report = execute(config, args.out_dir, args.threads)
    print_json(summary_rows(report))
    logger.info(f"{len(report.experiments)} experiments, passed={report.passed}")
    return report.exit_code


def register(subparsers: argparse._SubParsersAction) -> None:
    p = subparsers.add_parser("run", help="run a JSON experiment config")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", default=None, help="report directory (default: config out_dir, then results/)")
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--formats", nargs="+", choices=["json", "csv", "xlsx"], default=None)
    p.set_defaults(handler=run)
