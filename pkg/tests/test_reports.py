import json
import math
import pickle

import pytest
from pydantic import ValidationError

from backend.core.exceptions import ConfigError, CoverGap, ErrorCode, IoError, LabException
from backend.core.result import ServiceResult
from backend.services.experiments import ExperimentConfig, run_experiment
from backend.services.report_service import emit_report, load_report, outcome, scalar, write_table

COVER = {"kind": "cover", "label": "tiny", "spaces": ["net1d:n=16"], "levels": 2, "samples": 4}


def test_scalar_cleaning():
    assert scalar(float("nan")) is None
    assert scalar(math.inf) == math.inf
    assert scalar(True) is True
    assert isinstance(scalar(3), int)


def test_outcome_cleans_tables():
    result = outcome(True, {"slope": float("nan")}, {"rows": [{"x": 1.5, "y": float("nan")}]})
    assert result.measured == {"slope": None}
    assert result.tables["rows"] == [{"x": 1.5, "y": None}]


def test_empty_config_passes():
    report = run_experiment(ExperimentConfig(seed=1))
    assert report.passed
    assert report.exit_code == 0
    assert report.metadata.seed == 1


def test_unknown_kind_is_rejected():
    with pytest.raises(ValidationError):
        ExperimentConfig.model_validate({"seed": 1, "experiments": [{"kind": "teleport"}]})
    with pytest.raises(ValidationError):
        ExperimentConfig.model_validate({"seed": 1, "experiments": [{**COVER, "bogus": 1}]})


def test_cover_experiment_report_round_trip(tmp_path):
    config = ExperimentConfig.model_validate({"seed": 3, "experiments": [COVER]})
    report = run_experiment(config, workers=1)
    assert report.passed
    (result,) = report.experiments
    assert result.label == "tiny"
    assert result.tables["lattices"][0]["cover_failures"] == 0

    written = emit_report(report, tmp_path, ["json", "csv", "xlsx"])
    names = {p.name for p in written}
    assert {"report.json", "summary.csv", "00_cover_lattices.csv", "report.xlsx"} <= names
    assert load_report(tmp_path / "report.json") == report


def test_tables_do_not_depend_on_workers(tmp_path):
    config = ExperimentConfig.model_validate({"seed": 3, "experiments": [COVER]})
    emit_report(run_experiment(config, workers=1), tmp_path / "one", ["csv"])
    emit_report(run_experiment(config, workers=2), tmp_path / "two", ["csv"])
    for name in ("summary.csv", "00_cover_lattices.csv"):
        assert (tmp_path / "one" / name).read_bytes() == (tmp_path / "two" / name).read_bytes()


def test_config_hash_ignores_threads():
    first = run_experiment(ExperimentConfig(seed=5, threads=1))
    second = run_experiment(ExperimentConfig(seed=5, threads=4))
    assert first.metadata.config_sha256 == second.metadata.config_sha256
    assert first.metadata.config_sha256 != run_experiment(ExperimentConfig(seed=6)).metadata.config_sha256


def test_module_error_fails_only_its_experiment():
    shallow = {"kind": "shift-bench", "tree": "dyadic:levels=2", "complexities": [[3, 3]], "targets": [2.0], "draws": 1}
    config = ExperimentConfig.model_validate({"seed": 1, "experiments": [shallow, COVER]})
    report = run_experiment(config, workers=1)
    failed, covered = report.experiments
    assert not failed.passed
    assert failed.error["error_code"] == ErrorCode.TREE_TOO_SHALLOW.value
    assert covered.passed
    assert report.exit_code == 1


def test_table_writer_uses_full_precision(tmp_path):
    path = write_table([{"a": 0.1, "b": 2}], tmp_path / "t.csv")
    assert path.read_text().splitlines() == ["a,b", "0.10000000000000001,2"]


def test_missing_report_is_an_io_error(tmp_path):
    with pytest.raises(IoError) as info:
        load_report(tmp_path / "absent.json")
    assert info.value.exit_code == 3


def test_lab_exceptions_survive_pickling():
    error = pickle.loads(pickle.dumps(CoverGap(4, 2)))
    assert isinstance(error, CoverGap)
    assert error.details == {"point": 4, "generation": 2}
    assert error.exit_code == 1
    assert json.loads(json.dumps(error.to_dict()))["error_code"] == "COVER_GAP"


def test_service_result_from_exception():
    result = ServiceResult.from_exception(ConfigError("bad value", "levels"))
    assert not result.success
    assert result.error_code == "CONFIG_ERROR"
    assert result.error_record()["message"] == "levels: bad value"
    assert ServiceResult.ok(3).error_record() is None
    assert ConfigError("x").exit_code == 2
    assert LabException("boom").exit_code == 1
