import json
import subprocess
import sys
import xml.etree.ElementTree as ET

import jsonschema
import pytest

import nichecal.cli as cli
from nichecal.analytics import REPORT_JSON_SCHEMA
from nichecal.cli import EXIT_INPUT, EXIT_OK, EXIT_RUNTIME, main
from nichecal.orchestrator import load_solution_set
from nichecal.problems import builtin_problem, save_problem

SMALL = ["--max-fun-evals", "800", "--num-results", "20", "--seed", "3"]


def exit_code(argv):
    """``main``'s return value, or the code of an argparse exit."""
    try:
        return main(argv)
    except SystemExit as exc:
        return exc.code


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("runs")
    assert main(["calibrate", "--problem", "builtin:toy_growth", "--out", str(out), "--run-id", "base", *SMALL]) == EXIT_OK
    return out / "base"


def test_calibrate_writes_run_directory(run_dir):
    assert {p.name for p in run_dir.iterdir()} == {"solutions.json", "manifest.json", "trace.ndjson"}
    manifest = json.loads((run_dir / "manifest.json").read_text())
    assert manifest["schema"] == "nichecal.manifest/1" and manifest["seed"] == 3
    assert manifest["options"]["num_results"] == 20
    s = load_solution_set(run_dir / "solutions.json")
    assert s.set_size == 20 and s.results["evaluations"] <= 800
    first = json.loads((run_dir / "trace.ndjson").read_text().splitlines()[0])
    assert "best" in first


def test_same_seed_same_file_and_default_run_ids(tmp_path):
    args = ["calibrate", "--problem", "builtin:himmelblau", "--out", str(tmp_path), "--no-trace", *SMALL]
    assert main(args) == EXIT_OK and main(args) == EXIT_OK
    a, b = tmp_path / "himmelblau-shade-s3", tmp_path / "himmelblau-shade-s3-2"
    assert (a / "solutions.json").read_bytes() == (b / "solutions.json").read_bytes()
    assert not (a / "trace.ndjson").exists()


def test_options_file_and_flag_precedence(tmp_path):
    opts = tmp_path / "opts.json"
    opts.write_text(json.dumps({"method": "nm", "max_fun_evals": 500, "seed": 1}))
    assert main(["calibrate", "--problem", "builtin:toy_growth", "--out", str(tmp_path), "--run-id", "r", "--options", str(opts), "--seed", "9"]) == EXIT_OK
    s = load_solution_set(tmp_path / "r" / "solutions.json")
    assert s.set_size == 1 and s.results["seed"] == 9 and s.results["evaluations"] <= 500


def test_problem_file_input(tmp_path):
    path = tmp_path / "p.json"
    save_problem(builtin_problem("himmelblau"), path)
    assert main(["calibrate", "--problem", str(path), "--out", str(tmp_path), "--run-id", "f", *SMALL]) == EXIT_OK


def test_continue_with_selection(run_dir, tmp_path):
    src = str(run_dir / "solutions.json")
    args = ["continue", "--from", src, "--select", "0,5,10", "--out", str(tmp_path), "--run-id", "c", "--max-fun-evals", "400"]
    assert main(args) == EXIT_OK
    s = load_solution_set(tmp_path / "c" / "solutions.json")
    assert s.results["continued_from"]["selection"] == [0, 5, 10]
    assert s.fun_values[0] <= load_solution_set(src).fun_values[0]
    fixed = ["continue", "--from", src, "--fix", "W_max=80", "--out", str(tmp_path), "--run-id", "d", "--max-fun-evals", "400"]
    assert main(fixed) == EXIT_OK
    assert load_solution_set(tmp_path / "d" / "solutions.json").par_names == ("r", "t0", "b")


@pytest.mark.parametrize(
    "extra, message",
    [
        (["--select", "99"], "out of range"),
        (["--fix", "nope=1"], "nope"),
        (["--select", "a,b"], "--select"),
    ],
)
def test_continue_input_errors(run_dir, tmp_path, capsys, extra, message):
    args = ["continue", "--from", str(run_dir / "solutions.json"), "--out", str(tmp_path), "--max-fun-evals", "400", *extra]
    assert main(args) == EXIT_INPUT
    assert message in capsys.readouterr().err


def test_continue_excluded_by_new_bounds(run_dir, tmp_path, capsys):
    s = load_solution_set(run_dir / "solutions.json")
    r0 = float(s.solutions_set[0][1])
    args = ["continue", "--from", str(run_dir / "solutions.json"), "--bounds", f"r={r0 * 1.5}:0.1", "--out", str(tmp_path), "--run-id", "x"]
    assert main(args) == EXIT_INPUT
    assert "error" in capsys.readouterr().err
    assert not (tmp_path / "x").exists()


def test_stats_text_and_json(run_dir, tmp_path, capsys):
    src = str(run_dir / "solutions.json")
    assert main(["stats", "--solutions", src]) == EXIT_OK
    text = capsys.readouterr().out
    assert "Parameter W_max" in text and "bimodality_coefficient" in text
    assert main(["stats", "--solutions", src, "--json"]) == EXIT_OK
    jsonschema.validate(json.loads(capsys.readouterr().out), REPORT_JSON_SCHEMA)
    assert main(["stats", "--solutions", src, "--json", str(tmp_path / "r.json")]) == EXIT_OK
    jsonschema.validate(json.loads((tmp_path / "r.json").read_text()), REPORT_JSON_SCHEMA)


def test_chart_outputs(run_dir, tmp_path):
    src = str(run_dir / "solutions.json")
    assert main(["chart", "--solutions", src, "--chart", "density_hm", "--pair", "W_max,r", "--format", "both", "--out", str(tmp_path)]) == EXIT_OK
    for ext in ("svg", "csv"):
        assert (tmp_path / f"base_density_hm_W_max-r.{ext}").is_file()
    ET.parse(tmp_path / "base_density_hm_W_max-r.svg")
    assert main(["chart", "--solutions", src, "--chart", "results", "--plot", "set", "--out", str(tmp_path)]) == EXIT_OK
    assert (tmp_path / "base_results_set.svg").is_file()
    single = tmp_path / "one.csv"
    assert main(["chart", "--solutions", src, "--chart", "density_scatter", "--pair", "r,b", "--format", "csv", "--out", str(single)]) == EXIT_OK
    assert single.read_text().splitlines()[0] == "index,r,b,density"


@pytest.mark.parametrize(
    "argv",
    [
        ["chart", "--chart", "scatter", "--pair", "W_max,zz"],
        ["chart", "--chart", "scatter"],
        ["chart", "--chart", "pie", "--pair", "W_max,r"],
    ],
)
def test_chart_input_errors(run_dir, tmp_path, argv):
    full = [argv[0], "--solutions", str(run_dir / "solutions.json"), "--out", str(tmp_path), *argv[1:]]
    assert exit_code(full) == EXIT_INPUT


def test_input_errors_exit_one(tmp_path, capsys):
    assert main(["stats", "--solutions", str(tmp_path / "missing.json")]) == EXIT_INPUT
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["stats", "--solutions", str(bad)]) == EXIT_INPUT
    assert main(["calibrate", "--problem", "builtin:nope", "--out", str(tmp_path)]) == EXIT_INPUT
    assert main(["calibrate", "--problem", "builtin:toy_growth", "--out", str(tmp_path), "--refine-prob", "2"]) == EXIT_INPUT
    assert exit_code(["frobnicate"]) == EXIT_INPUT
    assert "error" in capsys.readouterr().err


def test_runtime_failure_exits_two(tmp_path, monkeypatch):
    def boom(*a, **k):
        raise ArithmeticError("model blew up")

    monkeypatch.setattr(cli, "calibrate", boom)
    assert main(["calibrate", "--problem", "builtin:toy_growth", "--out", str(tmp_path), *SMALL]) == EXIT_RUNTIME


def test_compare_small(tmp_path, capsys):
    argv = ["compare", "--problem", "builtin:toy_growth", "--budget", "1000", "--seeds", "2", "--out", str(tmp_path), "--num-results", "20"]
    assert main(argv) == EXIT_OK
    out = capsys.readouterr().out
    assert "SHADE <= NM in" in out
    doc = json.loads((tmp_path / "compare.json").read_text())
    assert doc["seeds"] == 2 and len(doc["rows"]) == 2
    assert main(["compare", "--problem", "builtin:toy_growth", "--budget", "10", "--out", str(tmp_path)]) == EXIT_INPUT


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "nichecal.cli", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and "nichecal" in proc.stdout
