"""Command-line interface: calibrate, continue, stats, chart and compare.

Exit codes: 0 success, 1 usage or input error, 2 runtime failure. Messages
go to standard error.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import sys
from pathlib import Path

from . import __version__
from .analytics import report
from .bench import compare
from .charts import (
    CHART_NAMES,
    HEATMAP_VALUES,
    PLOT_SELECTIONS,
    ChartError,
    HeatmapScatter,
    chart_filename,
    density_heatmap,
    prediction_plot_data,
    render,
    scatter,
)
from .objective import ProblemError
from .orchestrator import (
    METHODS,
    CalibrationOptions,
    InfeasibleSelection,
    OptionsError,
    SolutionSetError,
    calibrate,
    continue_calibration,
    load_solution_set,
    save_solution_set,
)
from .problems import load_problem

EXIT_OK, EXIT_INPUT, EXIT_RUNTIME = 0, 1, 2
MANIFEST_SCHEMA_VERSION = "nichecal.manifest/1"
INPUT_ERRORS = (
    FileNotFoundError,
    IsADirectoryError,
    ProblemError,
    OptionsError,
    SolutionSetError,
    ChartError,
    InfeasibleSelection,
    IndexError,
    KeyError,
    json.JSONDecodeError,
)


class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


# -- helpers ----------------------------------------------------------------


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _read_json(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"file not found: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc})") from None


def _build_options(args, base: dict | None = None) -> CalibrationOptions:
    """Defaults, then the options file, then explicit flags."""
    d = dict(base or {})
    if getattr(args, "options", None):
        d.update(_read_json(args.options))
    flags = {
        "method": args.method,
        "max_fun_evals": args.max_fun_evals,
        "max_calibration_time": args.max_calibration_time,
        "stop_on": args.stop_on,
        "num_results": args.num_results,
        "refine_best": args.refine_best,
        "refine_prob": args.refine_prob,
        "seed": args.seed,
        "workers": args.workers,
    }
    d.update({k: v for k, v in flags.items() if v is not None})
    return CalibrationOptions.from_dict(d)


def _run_dir(out: Path, run_id: str | None, default_id: str) -> tuple[Path, str]:
    out.mkdir(parents=True, exist_ok=True)
    if run_id is not None:
        if (out / run_id).exists():
            raise InputError(f"run id {run_id!r} already exists in {out}")
        (out / run_id).mkdir()
        return out / run_id, run_id
    k = 1
    rid = default_id
    while (out / rid).exists():
        k += 1
        rid = f"{default_id}-{k}"
    (out / rid).mkdir()
    return out / rid, rid


def _write_run(run_dir: Path, run_id: str, result, manifest: dict, trace_lines: list[str] | None) -> None:
    sol = run_dir / "solutions.json"
    save_solution_set(result, sol)
    outputs = {"solutions": sol.name}
    if trace_lines is not None:
        (run_dir / "trace.ndjson").write_text("".join(trace_lines))
        outputs["trace"] = "trace.ndjson"
    manifest = {
        "schema": MANIFEST_SCHEMA_VERSION,
        "run_id": run_id,
        **manifest,
        "outputs": outputs,
        "best_loss": float(result.fun_values[0]),
        "set_size": result.set_size,
        "evaluations": result.results["evaluations"],
        "stop_reason": result.results["stop_reason"],
        "finished": _now(),
        "version": __version__,
    }
    (run_dir / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")


def _tracer(enabled: bool):
    if not enabled:
        return None, None
    lines: list[str] = []
    return lines, lambda rec: lines.append(json.dumps(rec, allow_nan=False) + "\n")


def _parse_selection(text: str):
    if text == "best":
        return "best"
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise InputError(f"--select must be 'best' or comma-separated indices, got {text!r}") from None


def _parse_assignments(items, what: str) -> dict:
    out = {}
    for item in items or []:
        name, sep, value = item.partition("=")
        if not sep:
            raise InputError(f"{what} expects name=value, got {item!r}")
        try:
            if what == "--bounds":
                lo, _, hi = value.partition(":")
                out[name] = (float(lo), float(hi))
            else:
                out[name] = float(value)
        except ValueError:
            raise InputError(f"{what}: cannot parse {item!r}") from None
    return out


# -- commands ---------------------------------------------------------------


def cmd_calibrate(args) -> int:
    problem = load_problem(args.problem)
    options = _build_options(args)
    run_dir, run_id = _run_dir(Path(args.out), args.run_id, f"{problem.name}-{options.method}-s{options.seed}")
    lines, trace = _tracer(not args.no_trace)
    started = _now()
    try:
        result = calibrate(problem, options, trace=trace)
    except Exception as exc:
        raise RuntimeError(f"calibration failed: {exc}") from exc
    manifest = {"command": "calibrate", "problem": str(args.problem), "options": options.to_dict(), "seed": options.seed, "started": started}
    _write_run(run_dir, run_id, result, manifest, lines)
    print(f"{run_id}: best loss {result.fun_values[0]:.6g}, {result.set_size} solutions -> {run_dir}")
    return EXIT_OK


def cmd_continue(args) -> int:
    prior = load_solution_set(args.source)
    selection = _parse_selection(args.select)
    fix = _parse_assignments(args.fix, "--fix")
    bounds = _parse_assignments(args.bounds, "--bounds")
    options = _build_options(args, base=prior.results["options"])
    problem = load_problem(args.problem) if args.problem else None
    run_dir, run_id = _run_dir(Path(args.out), args.run_id, f"continue-{options.method}-s{options.seed}")
    lines, trace = _tracer(not args.no_trace)
    started = _now()
    try:
        result = continue_calibration(prior, selection, options, problem=problem, fix=fix, bounds=bounds, trace=trace)
    except INPUT_ERRORS:
        run_dir.rmdir()
        raise
    except Exception as exc:
        raise RuntimeError(f"continued calibration failed: {exc}") from exc
    manifest = {
        "command": "continue",
        "continued_from": str(args.source),
        "selection": selection,
        "problem": str(args.problem) if args.problem else None,
        "options": options.to_dict(),
        "seed": options.seed,
        "started": started,
    }
    _write_run(run_dir, run_id, result, manifest, lines)
    print(f"{run_id}: best loss {result.fun_values[0]:.6g} (prior {prior.fun_values[0]:.6g}) -> {run_dir}")
    return EXIT_OK


def cmd_stats(args) -> int:
    s = load_solution_set(args.solutions)
    text, js = report(s)
    if args.json is None:
        sys.stdout.write(text)
    elif args.json == "-":
        sys.stdout.write(js)
    else:
        Path(args.json).write_text(js)
        sys.stdout.write(text)
    return EXIT_OK


def cmd_chart(args) -> int:
    s = load_solution_set(args.solutions)
    chart = args.chart
    if chart == "results":
        data = prediction_plot_data(s, args.plot)
        tag = args.plot
        for k, msg in sorted(data.failures.items()):
            print(f"warning: solution {k} could not be predicted: {msg}", file=sys.stderr)
    else:
        if not args.pair:
            raise InputError(f"--chart {chart} needs --pair A,B; valid names: {', '.join(s.par_names)}")
        pair = tuple(p.strip() for p in args.pair.split(","))
        if len(pair) != 2:
            raise InputError(f"--pair takes exactly two names, got {args.pair!r}")
        bins = (args.bins, args.bins)
        if chart == "density_hm":
            data = density_heatmap(s, pair, bins, args.value)
        elif chart == "density_hm_scatter":
            data = HeatmapScatter(density_heatmap(s, pair, bins, args.value), scatter(s, pair))
        else:
            data = scatter(s, pair, {"scatter": "plain", "weighted_scatter": "weighted", "density_scatter": "density"}[chart])
        tag = pair
    out = Path(args.out)
    formats = ["svg", "csv"] if args.format == "both" else [args.format]
    if out.suffix.lower() in (".svg", ".csv") and len(formats) == 1:
        paths = [out]
    else:
        out.mkdir(parents=True, exist_ok=True)
        run_id = args.run_id or Path(args.solutions).resolve().parent.name
        paths = [out / chart_filename(run_id, chart, tag, ext) for ext in formats]
    for p in paths:
        render(data, p)
        print(p)
    return EXIT_OK


def cmd_compare(args) -> int:
    problem = load_problem(args.problem)
    if args.budget < 1000:
        raise InputError(f"--budget must be at least 1000, got {args.budget}")
    if args.seeds < 1:
        raise InputError("--seeds must be positive")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    base = _build_options(args)
    try:
        res = compare(problem, args.budget, range(args.seed0, args.seed0 + args.seeds), options=base, workers=args.workers or 1)
    except Exception as exc:
        raise RuntimeError(f"comparison failed: {exc}") from exc
    table = res.table()
    (out / "compare.txt").write_text(table)
    (out / "compare.json").write_text(res.to_json())
    sys.stdout.write(table)
    return EXIT_OK


# -- parser -----------------------------------------------------------------


def _add_option_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("calibration options (override --options)")
    g.add_argument("--options", help="JSON file with CalibrationOptions keys")
    g.add_argument("--method", choices=METHODS)
    g.add_argument("--max-fun-evals", type=int)
    g.add_argument("--max-calibration-time", type=float, help="seconds")
    g.add_argument("--stop-on", choices=("evals", "time"))
    g.add_argument("--num-results", type=int)
    g.add_argument("--refine-best", action=argparse.BooleanOptionalAction, default=None)
    g.add_argument("--refine-prob", type=float)
    g.add_argument("--seed", type=int)
    g.add_argument("--workers", type=int)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="nichecal", description="Multimodal parameter calibration with SHADE / L-SHADE and Nelder-Mead.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("calibrate", help="run a calibration")
    p.add_argument("--problem", required=True, help="problem JSON file or builtin:<name>")
    p.add_argument("--out", required=True, help="output directory (one run directory per call)")
    p.add_argument("--run-id")
    p.add_argument("--no-trace", action="store_true", help="skip the per-generation trace")
    _add_option_flags(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("continue", help="start a new run from solutions of a previous one")
    p.add_argument("--from", dest="source", required=True, help="solutions.json of the prior run")
    p.add_argument("--select", default="best", help="'best' or comma-separated indices")
    p.add_argument("--problem", help="replacement problem (default: the prior run's)")
    p.add_argument("--fix", action="append", metavar="NAME=VALUE")
    p.add_argument("--bounds", action="append", metavar="NAME=LO:HI")
    p.add_argument("--out", required=True)
    p.add_argument("--run-id")
    p.add_argument("--no-trace", action="store_true")
    _add_option_flags(p)
    p.set_defaults(func=cmd_continue)

    p = sub.add_parser("stats", help="statistical report of a solution set")
    p.add_argument("--solutions", required=True)
    p.add_argument("--json", nargs="?", const="-", metavar="PATH", help="JSON report to PATH (stdout without PATH)")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("chart", help="heatmaps, scatter plots and prediction plots")
    p.add_argument("--solutions", required=True)
    p.add_argument("--chart", required=True, choices=CHART_NAMES)
    p.add_argument("--pair", help="two parameter names, 'A,B'")
    p.add_argument("--plot", choices=PLOT_SELECTIONS, default="complete", help="for --chart results")
    p.add_argument("--bins", type=int, default=25)
    p.add_argument("--value", choices=HEATMAP_VALUES, default="count", help="heatmap cell value")
    p.add_argument("--format", choices=("svg", "csv", "both"), default="svg")
    p.add_argument("--out", required=True, help="output file (.svg/.csv) or directory")
    p.add_argument("--run-id", help="file-name prefix when --out is a directory")
    p.set_defaults(func=cmd_chart)

    p = sub.add_parser("compare", help="Nelder-Mead versus SHADE over several seeds")
    p.add_argument("--problem", required=True)
    p.add_argument("--budget", type=int, default=20000)
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--seed0", type=int, default=0, help="first seed")
    p.add_argument("--out", required=True)
    _add_option_flags(p)
    p.set_defaults(func=cmd_compare)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (InputError, *INPUT_ERRORS) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
