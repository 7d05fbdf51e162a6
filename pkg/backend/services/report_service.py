"""
Report Service
Report models and their JSON / CSV / XLSX renderings.
JSON keeps the shortest round-trip float repr; CSV and XLSX tables carry 17 significant digits.
"""

import hashlib
import json
import logging
import math
import platform
from pathlib import Path
from typing import Any, Literal

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict

from backend.core.config import VERSION, settings
from backend.core.errors import io_failure

try:
    import psutil
except ImportError:
    psutil = None

logger = logging.getLogger(__name__)

Scalar = bool | int | float | str | None
ReportFormat = Literal["json", "csv", "xlsx"]
FLOAT_FORMAT = "%.17g"
SHEET_NAME_MAX = 31


# ============================================================
# REPORT MODELS
# ============================================================


class ReportModel(BaseModel):
    model_config = ConfigDict(extra="ignore", ser_json_inf_nan="constants")


class ExperimentOutcome(ReportModel):
    """What a runner hands back: verdict, headline numbers and row tables"""

    passed: bool
    measured: dict[str, Scalar] = {}
    tables: dict[str, list[dict[str, Scalar]]] = {}


class ExperimentResult(ReportModel):
    index: int
    kind: str
    label: str = ""
    passed: bool
    seed: int
    runtime_seconds: float
    measured: dict[str, Scalar] = {}
    tables: dict[str, list[dict[str, Scalar]]] = {}
    error: dict[str, Any] | None = None


class ReportMetadata(ReportModel):
    project: str
    version: str
    config_sha256: str
    seed: int
    threads: int
    fingerprint: dict[str, Scalar] = {}


class Report(ReportModel):
    metadata: ReportMetadata
    experiments: list[ExperimentResult] = []

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.experiments)

    @property
    def exit_code(self) -> int:
        return 0 if self.passed else 1


# ============================================================
# VALUE CLEANING
# ============================================================


def scalar(value: Any) -> Scalar:
    """numpy scalars to python; NaN becomes None so reports compare equal after a round trip"""
    if value is None or isinstance(value, str):
        return value
    if isinstance(value, bool | np.bool_):
        return bool(value)
    if isinstance(value, int | np.integer):
        return int(value)
    if isinstance(value, float | np.floating):
        value = float(value)
        return None if math.isnan(value) else value
    return str(value)


def row(**values: Any) -> dict[str, Scalar]:
    return {key: scalar(value) for key, value in values.items()}


def outcome(passed: bool, measured: dict[str, Any], tables: dict[str, list[dict]] | None = None) -> ExperimentOutcome:
    return ExperimentOutcome(
        passed=bool(passed),
        measured={key: scalar(value) for key, value in measured.items()},
        tables={name: [{k: scalar(v) for k, v in r.items()} for r in rows] for name, rows in (tables or {}).items()},
    )


# ============================================================
# METADATA
# ============================================================


def config_hash(payload: dict) -> str:
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=True)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def runtime_fingerprint() -> dict[str, Scalar]:
    info: dict[str, Scalar] = {
        "python": platform.python_version(),
        "numpy": np.__version__,
        "pandas": pd.__version__,
        "platform": platform.platform(),
    }
    if psutil:
        info["cpu_count"] = psutil.cpu_count()
        info["memory_gb"] = round(psutil.virtual_memory().total / 2**30, 2)
    return info


def build_metadata(config_payload: dict, seed: int, threads: int) -> ReportMetadata:
    return ReportMetadata(
        project=settings.PROJECT_NAME,
        version=VERSION,
        config_sha256=config_hash(config_payload),
        seed=seed,
        threads=threads,
        fingerprint=runtime_fingerprint(),
    )


# ============================================================
# TABLES
# ============================================================


def summary_rows(report: Report) -> list[dict[str, Scalar]]:
    """One line per experiment; runtimes stay in the JSON so tables are reproducible"""
    return [
        row(
            index=e.index,
            kind=e.kind,
            label=e.label,
            passed=e.passed,
            error=None if e.error is None else e.error.get("error_code"),
        )
        for e in report.experiments
    ]


def report_tables(report: Report) -> dict[str, pd.DataFrame]:
    """Every non-empty table keyed by '<index>_<kind>_<table>' in experiment order"""
    frames = {"summary": pd.DataFrame(summary_rows(report), columns=["index", "kind", "label", "passed", "error"])}
    for e in report.experiments:
        for name, rows in e.tables.items():
            if rows:
                frames[f"{e.index:02d}_{e.kind}_{name}"] = pd.DataFrame(rows)
    return frames


def _write_csv(frames: dict[str, pd.DataFrame], out_dir: Path) -> list[Path]:
    paths = []
    for name, frame in frames.items():
        path = out_dir / f"{name}.csv"
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
        paths.append(path)
    return paths


def _write_xlsx(frames: dict[str, pd.DataFrame], path: Path) -> Path:
    with pd.ExcelWriter(path, engine="xlsxwriter") as writer:
        header_fmt = writer.book.add_format({"bold": True, "border": 1})
        for name, frame in frames.items():
            sheet = name[-SHEET_NAME_MAX:]
            frame.to_excel(writer, sheet_name=sheet, index=False, float_format=FLOAT_FORMAT)
            worksheet = writer.sheets[sheet]
            for col, header in enumerate(frame.columns):
                worksheet.write(0, col, header, header_fmt)
                width = max([len(str(header))] + [len(str(v)) for v in frame[header].tolist()])
                worksheet.set_column(col, col, min(width + 2, 50))
    return path


# ============================================================
# EMISSION
# ============================================================


def emit_report(
    report: Report,
    out_dir: str | Path,
    formats: list[ReportFormat] | tuple[ReportFormat, ...] = ("json", "csv"),
) -> list[Path]:
    """Write report.json, one CSV per table (plus summary.csv) and optionally report.xlsx"""
    out_dir = Path(out_dir)
    written: list[Path] = []
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        if "json" in formats:
            path = out_dir / "report.json"
            path.write_text(report.model_dump_json(indent=2) + "\n", encoding="utf-8")
            written.append(path)
        if "csv" in formats or "xlsx" in formats:
            frames = report_tables(report)
            if "csv" in formats:
                written.extend(_write_csv(frames, out_dir))
            if "xlsx" in formats:
                written.append(_write_xlsx(frames, out_dir / "report.xlsx"))
    except OSError as e:
        raise io_failure(f"Cannot write report: {e}", str(out_dir), e) from e

    logger.info(f"Report written to {out_dir} ({len(written)} files, passed={report.passed})")
    return written


def write_table(rows: list[dict[str, Scalar]], path: str | Path) -> Path:
    """One table as CSV in the report float format"""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        pd.DataFrame(rows).to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    except OSError as e:
        raise io_failure(f"Cannot write table: {e}", str(path), e) from e
    logger.info(f"Wrote {len(rows)} rows to {path}")
    return path


def write_json(payload: Any, path: str | Path) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as e:
        raise io_failure(f"Cannot write {path}: {e}", str(path), e) from e
    return path


def load_report(path: str | Path) -> Report:
    path = Path(path)
    try:
        return Report.model_validate_json(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise io_failure(f"Cannot read report: {e}", str(path), e) from e
