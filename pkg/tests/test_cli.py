import json
import shutil

import pytest

from trucklane.cli import EXIT_DATA, EXIT_FATAL, EXIT_OK, EXIT_USAGE, main, suite_cells
from trucklane.calibration import load_default_styles


def test_run_writes_three_files(tmp_path, capsys):
    assert main(["run", "--design-cond", "3", "--style", "medium", "--out", str(tmp_path)]) == EXIT_OK
    names = sorted(p.name for p in tmp_path.iterdir())
    assert names == ["design-cond3-medium.log.csv", "design-cond3-medium.report.json", "design-cond3-medium.series.csv"]
    report = json.loads((tmp_path / "design-cond3-medium.report.json").read_text())
    assert report["identified"]["lane_changed"] and report["flags"]["terminal_state_ok"]


def test_missing_style_file_writes_nothing(tmp_path, capsys):
    out = tmp_path / "out"
    code = main(["run", "--design-cond", "1", "--style", str(tmp_path / "nope.json"), "--out", str(out)])
    assert code == EXIT_USAGE
    assert not out.exists()
    assert "nope.json" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [
    ["run", "--design-cond", "9"],
    ["run", "--eval", "A", "--trial", "2"],
    ["run"],
    ["suite", "--jobs", "0"],
    ["frobnicate"],
])
def test_usage_errors_exit_1(argv, tmp_path, capsys):
    assert main(argv + ["--out", str(tmp_path)] if argv[0] in ("run", "suite") else argv) == EXIT_USAGE


def test_collision_exits_3(tmp_path, capsys):
    cfg = tmp_path / "crash.toml"
    cfg.write_text('design_condition = 1\nbody_width = 4.0\nc2_to_c1_offset = 20.0\nlabel = "crash"\n')
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_FATAL
    report = json.loads((tmp_path / "crash.report.json").read_text())
    assert report["fatal"] and not report["flags"]["collision_free"]


@pytest.fixture(scope="module")
def logs(tmp_path_factory):
    out = tmp_path_factory.mktemp("logs")
    for n in range(1, 7):
        assert main(["run", "--design-cond", str(n), "--style", "medium", "--out", str(out)]) == EXIT_OK
    return sorted(out.glob("*.log.csv"))


def test_identify_then_classify_equals_classify_on_directory(logs, tmp_path, capsys):
    records = tmp_path / "records.csv"
    assert main(["identify", *map(str, logs), "--out", str(records)]) == EXIT_OK
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert main(["classify", str(records), "--out", str(a)]) == EXIT_OK
    assert main(["classify", str(logs[0].parent), "--out", str(b)]) == EXIT_OK
    assert a.read_bytes() == b.read_bytes()
    doc = json.loads(a.read_text())
    assert doc["format_version"] == 1 and doc["provenance"]["usable_trials"] == 6


def test_classify_is_order_independent(logs, tmp_path, capsys):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert main(["classify", *map(str, logs), "--out", str(a)]) == EXIT_OK
    assert main(["classify", *map(str, reversed(logs)), "--out", str(b)]) == EXIT_OK
    assert a.read_bytes() == b.read_bytes()


def test_classify_by_gap(logs, capsys):
    assert main(["classify", *map(str, logs), "--by-gap", "--source", "six runs"]) == EXIT_OK
    doc = json.loads(capsys.readouterr().out)
    assert doc["provenance"]["source"] == "six runs"
    assert "by_gap" in doc


def test_classify_needs_four_trials(logs, capsys):
    assert main(["classify", *map(str, logs[:3])]) == EXIT_DATA
    assert "at least 4" in capsys.readouterr().err


def test_identify_reports_bad_files_and_keeps_going(logs, tmp_path, capsys):
    bad = tmp_path / "bad.log.csv"
    bad.write_text("# trucklane-log format_version=1\ngarbage\n")
    records = tmp_path / "records.csv"
    assert main(["identify", str(logs[0]), str(bad), "--out", str(records)]) == EXIT_DATA
    assert len(records.read_text().splitlines()) == 2
    assert "bad.log.csv" in capsys.readouterr().err


def test_empty_styles_file_aborts_suite(tmp_path, capsys):
    empty = tmp_path / "styles.json"
    empty.write_text("")
    out = tmp_path / "suite"
    assert main(["suite", "--styles", str(empty), "--out", str(out)]) == EXIT_USAGE
    assert not out.exists()
    assert "empty" in capsys.readouterr().err


def test_suite_matrix_shape():
    cells = suite_cells(load_default_styles())
    groups = [c.group for c in cells]
    assert (groups.count("design"), groups.count("A"), groups.count("B")) == (18, 3, 9)
    assert len({c.config.label for c in cells}) == len(cells)


def test_suite_outputs(suite_runs):
    first, _, codes = suite_runs
    assert codes == (EXIT_OK, EXIT_OK)
    summary = json.loads((first / "summary.json").read_text())
    assert len(summary["cells"]) == 30
    assert len(list((first / "cells").glob("*.report.json"))) == 30
    assert not list((first / "cells").glob("*.log.csv"))
    assert all(row["c0_matches_scenario_a"] for row in summary["cells"] if row["group"] == "B")
