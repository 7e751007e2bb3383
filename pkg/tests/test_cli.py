import json
import math

import pytest

from conftest import SMALL_CONFIG
from obspart.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, main
from obspart.runner import RECORD_FIELDS, RECORDS_SCHEMA, fmt, read_csv, write_csv


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "small.yaml"
    path.write_text(SMALL_CONFIG)
    return path


def test_validate(config_file, capsys):
    assert main(["validate", str(config_file)]) == EXIT_OK
    assert "ok" in capsys.readouterr().out


def test_validate_reports_config_errors(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("seed: 1\nplanning:\n  goal: [1, 1]\n  colour: red\n")
    assert main(["validate", str(bad)]) == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "planning.colour" in err and "line 4" in err


def test_bad_cli_overrides_are_config_errors(config_file):
    assert main(["run", str(config_file), "--seed", "-3"]) == EXIT_CONFIG
    assert main(["run", str(config_file), "--threads", "0"]) == EXIT_CONFIG
    assert main(["run", str(config_file), "--repeats", "0"]) == EXIT_CONFIG


def test_runtime_failure_exit_code(tmp_path, capsys):
    cfg = tmp_path / "blocked.yaml"
    cfg.write_text(SMALL_CONFIG.replace("  goal: [34, 34]", "  goal: [34, 34]\n  radius: 0.01"))
    assert main(["run", str(cfg), "--output-dir", str(tmp_path / "out")]) == EXIT_RUNTIME
    assert "GoalUnreachable" in capsys.readouterr().err


def test_run_writes_outputs(config_file, tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["run", str(config_file), "--output-dir", str(out), "--repeats", "2"]) == EXIT_OK
    summary = json.loads(capsys.readouterr().out)
    for name in ("records.csv", "timings.csv", "plot_bounds.csv", "report.json"):
        assert (out / name).exists()
    assert (out / "records.csv").read_text().splitlines()[0] == f"# schema: {RECORDS_SCHEMA}"
    rows = read_csv(out / "records.csv")
    assert len(rows) == 12 and tuple(rows[0]) == RECORD_FIELDS
    assert sum(r["chosen"] for r in rows) == 1
    chosen = next(r for r in rows if r["chosen"])
    assert chosen["path_id"] == summary["chosen_id"]
    report = json.loads((out / "report.json").read_text())
    assert report["timing"]["repeats"]["session_wall"]["n"] == 2
    assert report["seeds"]["world"] == 3
    for r in rows:
        assert r["lb"] - 1e-9 <= r["exact"] <= r["ub"] + 1e-9


def test_seed_override_changes_world(config_file, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", str(config_file), "--output-dir", str(a)]) == EXIT_OK
    assert main(["run", str(config_file), "--output-dir", str(b), "--seed", "4"]) == EXIT_OK
    assert (a / "records.csv").read_bytes() != (b / "records.csv").read_bytes()
    assert json.loads((b / "report.json").read_text())["config"]["seed"] == 4


def test_csv_round_trip_is_exact(tmp_path):
    values = [math.pi, -1e-300, 1.0 / 3.0, 123456789.123456789, 0.0]
    rows = [{"a": i, "b": v, "c": None, "d": i % 2 == 0} for i, v in enumerate(values)]
    write_csv(tmp_path / "t.csv", ("a", "b", "c", "d"), rows, "schema: test")
    back = read_csv(tmp_path / "t.csv")
    assert [r["b"] for r in back] == values
    assert [r["a"] for r in back] == list(range(5))
    assert all(r["c"] is None for r in back)
    assert [r["d"] for r in back] == [1, 0, 1, 0, 1]
    assert fmt(float("inf")) == "inf" and read_csv_inf(tmp_path) == math.inf


def read_csv_inf(tmp_path):
    write_csv(tmp_path / "inf.csv", ("x",), [{"x": math.inf}])
    return read_csv(tmp_path / "inf.csv")[0]["x"]


@pytest.mark.parametrize("kind", ["convergence", "depth"])
def test_sweeps_write_csv(kind, config_file, tmp_path, capsys):
    assert main(["sweep", kind, str(config_file), "--output-dir", str(tmp_path)]) == EXIT_OK
    rows = read_csv(tmp_path / f"sweep_{kind}.csv")
    assert len(rows) >= 2
    assert f"sweep_{kind}.csv" in capsys.readouterr().out
