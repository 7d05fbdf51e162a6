import json

import pytest

from backend.api.common import complexity, int_range
from backend.entry_point import main


def _write(path, payload):
    path.write_text(json.dumps(payload), encoding="utf-8")
    return str(path)


def test_argument_types():
    assert int_range("1:4") == [1, 2, 3, 4]
    assert int_range("3") == [3]
    assert complexity("2,1") == (2, 1)


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as info:
        main(["--version"])
    assert info.value.code == 0
    assert "a2lab" in capsys.readouterr().out


def test_lattice_build_writes_a_sample(tmp_path, capsys):
    out = tmp_path / "sample.json"
    assert main(["lattice", "build", "--space", "net1d:n=16", "--levels", "2", "--seed", "4", "--out", str(out)]) == 0
    payload = json.loads(out.read_text())
    assert payload["space"] == "net1d:n=16"
    assert len(payload["grids"]) == 3
    printed = json.loads(capsys.readouterr().out)
    assert printed["points"] == 16
    assert printed["cubes"][0] == 1


def test_lattice_enumerate_weights(capsys):
    assert main(["lattice", "enumerate", "--space", "net1d:n=4", "--levels", "2"]) == 0
    printed = json.loads(capsys.readouterr().out)
    assert printed["total_weight"] == pytest.approx(1.0)


def test_triangle_violation_exits_with_two(tmp_path, capsys):
    space = _write(tmp_path / "bad.json", {"distance_matrix": [[0, 10, 1], [10, 0, 1], [1, 1, 0]]})
    assert main(["lattice", "build", "--space", space]) == 2
    assert "TRIANGLE_VIOLATION" in capsys.readouterr().err


def test_coordinate_file_space(tmp_path):
    space = _write(tmp_path / "pts.json", {"coords": [[0.0], [0.4], [1.0]], "metric": "euclidean"})
    assert main(["lattice", "build", "--space", f"file:{space}", "--levels", "2"]) == 0


def test_missing_file_exits_with_three(tmp_path):
    assert main(["lattice", "build", "--space", str(tmp_path / "nowhere.json")]) == 3


def test_invalid_parameters_exit_with_two(capsys):
    assert main(["lattice", "build", "--space", "net1d:n=8", "--delta", "0.5"]) == 2
    assert main(["lattice", "build", "--space", "moon:n=8"]) == 2


def test_bellman_check_passes(capsys):
    assert main(["bellman", "check", "--alpha", "0.25", "--Q", "10", "--samples", "2000"]) == 0
    assert json.loads(capsys.readouterr().out)["passed"] is True


def test_census_three_points(tmp_path, capsys):
    space = _write(tmp_path / "three.json", {"coords": [[0.0], [0.9], [1.8]], "rescale": False})
    assert main(["census", "run", "--space", space, "--v", "1"]) == 0
    (printed,) = json.loads(capsys.readouterr().out)
    assert printed["bound_holds"] is True
    assert printed["fraction"] == 0.5


def test_run_writes_a_report(tmp_path, capsys):
    config = _write(
        tmp_path / "config.json",
        {"seed": 2, "experiments": [{"kind": "cover", "spaces": ["net1d:n=16"], "levels": 2, "samples": 3}]},
    )
    out_dir = tmp_path / "out"
    assert main(["run", "--config", config, "--out-dir", str(out_dir)]) == 0
    report = json.loads((out_dir / "report.json").read_text())
    assert report["metadata"]["seed"] == 2
    assert (out_dir / "00_cover_lattices.csv").exists()
    summary = json.loads(capsys.readouterr().out)
    assert summary == [{"error": None, "index": 0, "kind": "cover", "label": "", "passed": True}]


def test_run_rejects_bad_config(tmp_path):
    config = _write(tmp_path / "config.json", {"experiments": []})
    assert main(["run", "--config", config]) == 2
