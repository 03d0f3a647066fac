"""End-to-end calibration runs and the solution-set file format."""

from __future__ import annotations

import json
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import nullcontext
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Callable, Sequence

import jsonschema
import numpy as np

from .evolution import EngineConfig, run_engine, total_order
from .loss import EvalCounter, LossDomainError, Objective, mre, smse
from .objective import Problem, ProblemError
from .problems import problem_from_dict, problem_to_dict
from .refine import Candidate, RefinePolicy, apply_refinement, nm_with_continuation

SOLUTION_SCHEMA_VERSION = "nichecal.solution_set/1"
METHODS = ("shade", "lshade", "nm")
INIT_MODES = ("seed-centered", "uniform")


class OptionsError(ValueError):
    pass


class InfeasibleSelection(ValueError):
    def __init__(self, offenders: dict[int, str]):
        self.offenders = offenders
        detail = "; ".join(f"#{i}: {why}" for i, why in offenders.items())
        super().__init__(f"selected solutions are infeasible under the new problem: {detail}")


class SolutionSetError(ValueError):
    """Malformed solution-set file; ``path`` points at the offending field."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


@dataclass
class CalibrationOptions:
    method: str = "shade"
    max_fun_evals: int | None = None
    max_calibration_time: float | None = None
    stop_on: str = "evals"
    num_results: int = 200
    refine_best: bool = True
    refine_prob: float = 0.0
    engine_fraction: float = 0.75
    init_mode: str = "seed-centered"
    seed: int = 0
    max_steps: int = 500
    neighborhood: int | None = 10
    niche_fraction: float = 0.4
    workers: int = 1

    def __post_init__(self):
        if self.method not in METHODS:
            raise OptionsError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.stop_on not in ("evals", "time"):
            raise OptionsError(f"stop_on must be 'evals' or 'time', got {self.stop_on!r}")
        if self.max_fun_evals is not None and (int(self.max_fun_evals) != self.max_fun_evals or self.max_fun_evals < 1):
            raise OptionsError(f"max_fun_evals must be a positive integer, got {self.max_fun_evals!r}")
        if self.max_calibration_time is not None and not self.max_calibration_time > 0:
            raise OptionsError("max_calibration_time must be positive (seconds)")
        if self.stop_on == "time" and self.max_calibration_time is None:
            raise OptionsError("stop_on='time' needs max_calibration_time")
        if self.method != "nm" and self.num_results < 6:
            raise OptionsError(f"num_results must be at least 6 for population methods, got {self.num_results}")
        if not 0.0 <= self.refine_prob <= 1.0:
            raise OptionsError(f"refine_prob must be in [0, 1], got {self.refine_prob}")
        if not 0.0 < self.engine_fraction <= 1.0:
            raise OptionsError(f"engine_fraction must be in (0, 1], got {self.engine_fraction}")
        if self.init_mode not in INIT_MODES:
            raise OptionsError(f"init_mode must be one of {INIT_MODES}, got {self.init_mode!r}")
        if self.max_steps < 0:
            raise OptionsError("max_steps must be >= 0")
        if self.neighborhood is not None and self.neighborhood < 4:
            raise OptionsError(f"neighborhood must be at least 4, got {self.neighborhood}")
        if not 0.0 <= self.niche_fraction <= 1.0:
            raise OptionsError(f"niche_fraction must be in [0, 1], got {self.niche_fraction}")
        if self.workers < 1:
            raise OptionsError("workers must be >= 1")

    def budget(self, dim: int) -> int | None:
        """Evaluation cap, or None when only the clock governs."""
        if self.max_fun_evals is not None:
            return int(self.max_fun_evals)
        if self.stop_on == "time":
            return None
        return 1000 * dim

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "CalibrationOptions":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(obj) - known)
        if unknown:
            raise OptionsError(f"unknown option(s) {unknown}; valid: {sorted(known)}")
        try:
            return cls(**obj)
        except TypeError as exc:
            raise OptionsError(str(exc)) from None

    def replace(self, **changes) -> "CalibrationOptions":
        d = self.to_dict()
        d.update(changes)
        return CalibrationOptions(**d)


# -- stopping ---------------------------------------------------------------


def check_stopping(counter: EvalCounter, elapsed: float, options: CalibrationOptions) -> str | None:
    """``None`` to continue, otherwise the reason to stop ("evals" or "time").

    Both caps apply when set; an evaluation cap that is reached at the same
    instant as the time cap reports "evals".
    """
    if counter.exhausted():
        return "evals"
    if options.max_calibration_time is not None and elapsed >= options.max_calibration_time:
        return "time"
    return None


class RunClock:
    def __init__(self, clock: Callable[[], float] = time.monotonic):
        self._clock = clock
        self._t0 = clock()

    def elapsed(self) -> float:
        return self._clock() - self._t0


# -- solution set -----------------------------------------------------------


@dataclass(eq=False)
class SolutionSet:
    """Calibration output: solutions sorted by loss plus run metadata.

    ``solutions_set`` holds the calibrated (free) parameters, one row per
    solution. ``results`` carries the full parameter records, fit metrics
    per solution, the problem, the options and the evaluation count.
    """

    solutions_set: np.ndarray
    fun_values: np.ndarray
    par_names: tuple[str, ...]
    results: dict

    @property
    def set_size(self) -> int:
        return len(self.fun_values)

    @property
    def best(self) -> np.ndarray:
        return self.solutions_set[0]

    def problem(self) -> Problem:
        return problem_from_dict(self.results["problem"])

    def to_dict(self) -> dict:
        return {
            "schema": SOLUTION_SCHEMA_VERSION,
            "set_size": self.set_size,
            "par_names": list(self.par_names),
            "solutions_set": self.solutions_set.tolist(),
            "fun_values": self.fun_values.tolist(),
            "results": self.results,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, allow_nan=False) + "\n"

    def __eq__(self, other):
        if not isinstance(other, SolutionSet):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    __hash__ = None


SOLUTION_JSON_SCHEMA = {
    "type": "object",
    "required": ["schema", "set_size", "par_names", "solutions_set", "fun_values", "results"],
    "properties": {
        "schema": {"type": "string"},
        "set_size": {"type": "integer", "minimum": 1},
        "par_names": {"type": "array", "items": {"type": "string"}, "minItems": 1},
        "solutions_set": {"type": "array", "items": {"type": "array", "items": {"type": "number"}}},
        "fun_values": {"type": "array", "items": {"type": "number"}},
        "results": {
            "type": "object",
            "required": ["problem", "options", "solutions", "best", "set_average", "evaluations", "stop_reason"],
            "properties": {
                "problem": {"type": "object"},
                "options": {"type": "object"},
                "solutions": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "required": ["par", "mre", "smse"],
                        "properties": {
                            "par": {"type": "object", "additionalProperties": {"type": "number"}},
                            "mre": {"type": ["number", "null"]},
                            "smse": {"type": ["number", "null"]},
                        },
                    },
                },
                "best": {"type": "object"},
                "set_average": {"type": "object"},
                "evaluations": {"type": "integer", "minimum": 0},
                "stop_reason": {"type": "string"},
            },
        },
    },
}


def _error_path(exc: jsonschema.ValidationError) -> str:
    """Slash path of the offending field; a missing key is named itself."""
    parts = [str(p) for p in exc.absolute_path]
    if exc.validator == "required" and isinstance(exc.instance, dict):
        parts += [k for k in exc.validator_value if k not in exc.instance][:1]
    return "/".join(parts) or "<root>"


def solution_set_from_dict(obj) -> SolutionSet:
    """Validate a decoded solution-set document and rebuild the object."""
    if not isinstance(obj, dict):
        raise SolutionSetError("<root>", "expected a JSON object")
    if "schema" in obj and obj["schema"] != SOLUTION_SCHEMA_VERSION:
        raise SolutionSetError("schema", f"unsupported version {obj['schema']!r} (expected {SOLUTION_SCHEMA_VERSION!r})")
    try:
        jsonschema.validate(obj, SOLUTION_JSON_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise SolutionSetError(_error_path(exc), exc.message) from None

    n = obj["set_size"]
    names = obj["par_names"]
    sols = obj["solutions_set"]
    vals = obj["fun_values"]
    if len(set(names)) != len(names):
        raise SolutionSetError("par_names", "duplicate parameter names")
    if len(sols) != n:
        raise SolutionSetError("solutions_set", f"{len(sols)} solutions but set_size is {n}")
    if len(vals) != n:
        raise SolutionSetError("fun_values", f"{len(vals)} values but set_size is {n}")
    for k, row in enumerate(sols):
        if len(row) != len(names):
            raise SolutionSetError(f"solutions_set/{k}", f"{len(row)} values for {len(names)} parameters")
    if any(b < a for a, b in zip(vals, vals[1:])):
        raise SolutionSetError("fun_values", "values are not sorted ascending")
    if len(obj["results"]["solutions"]) != n:
        raise SolutionSetError("results/solutions", f"{len(obj['results']['solutions'])} records but set_size is {n}")

    try:
        problem = problem_from_dict(obj["results"]["problem"])
    except ProblemError as exc:
        raise SolutionSetError("results/problem", str(exc)) from None
    space = problem.space
    if tuple(names) != space.free_names:
        raise SolutionSetError("par_names", f"{names} do not match the problem's free parameters {list(space.free_names)}")
    X = np.array(sols, dtype=float).reshape(n, len(names))
    for k, row in enumerate(X):
        if not space.contains(row):
            raise SolutionSetError(f"solutions_set/{k}", "outside the parameter bounds")
        if not problem.model.feasible(_full(space, row)):
            raise SolutionSetError(f"solutions_set/{k}", "rejected by the model filter")
    try:
        CalibrationOptions.from_dict(obj["results"]["options"])
    except OptionsError as exc:
        raise SolutionSetError("results/options", str(exc)) from None
    return SolutionSet(X, np.array(vals, dtype=float), tuple(names), obj["results"])


def _full(space, v):
    full = space.initial.copy()
    full[space.free_mask] = v
    return full


def save_solution_set(s: SolutionSet, path) -> None:
    Path(path).write_text(s.to_json())


def load_solution_set(path) -> SolutionSet:
    path = Path(path)
    try:
        obj = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SolutionSetError("<root>", f"invalid JSON ({exc})") from None
    return solution_set_from_dict(obj)


def _metric(fn, data, preds):
    if preds is None:
        return None
    try:
        return float(fn(data, preds))
    except LossDomainError:
        return None


def assemble_solution_set(
    problem: Problem,
    options: CalibrationOptions,
    X: np.ndarray,
    f: np.ndarray,
    evaluations: int,
    stop_reason: str,
    extra: dict | None = None,
) -> SolutionSet:
    """Sort, drop infeasible rows and attach per-solution fit metrics."""
    keep = np.isfinite(f)
    X, f = np.asarray(X)[keep], np.asarray(f)[keep]
    order = total_order(X, f)
    X, f = X[order], f[order]
    space = problem.space
    records = []
    for v in X:
        full = _full(space, v)
        try:
            preds = problem.model.predict(full, problem.data)
            preds = [np.atleast_1d(np.asarray(p, dtype=float)) for p in preds]
        except (ArithmeticError, ValueError):
            preds = None
        records.append(
            {
                "par": {name: float(val) for name, val in zip(space.names, full)},
                "mre": _metric(mre, problem.data, preds),
                "smse": _metric(smse, problem.data, preds),
            }
        )

    def avg(key):
        vals = [r[key] for r in records if r[key] is not None]
        return float(np.mean(vals)) if vals else None

    results = {
        "method": options.method,
        "seed": options.seed,
        "evaluations": int(evaluations),
        "stop_reason": stop_reason,
        "best": {
            "loss": float(f[0]) if len(f) else None,
            "mre": records[0]["mre"] if records else None,
            "smse": records[0]["smse"] if records else None,
        },
        "set_average": {
            "loss": float(f.mean()) if len(f) else None,
            "mre": avg("mre"),
            "smse": avg("smse"),
        },
        "solutions": records,
        # worker count does not affect results, so it is left out to keep
        # serial and parallel files byte-identical
        "options": {k: v for k, v in options.to_dict().items() if k != "workers"},
        "problem": problem_to_dict(problem),
    }
    if extra:
        results.update(extra)
    return SolutionSet(X, f, space.free_names, results)


# -- calibration ------------------------------------------------------------


def _feasible_uniform(objective: Objective, rng, count: int, max_tries: int = 1000) -> np.ndarray:
    lo, hi = objective.space.free_lower, objective.space.free_upper
    out = np.empty((count, len(lo)))
    for k in range(count):
        for _ in range(max_tries):
            v = rng.uniform(lo, hi)
            if objective.feasible(v):
                break
        out[k] = v
    return out


def initial_population(objective: Objective, options: CalibrationOptions, rng, seeds: Sequence | None = None) -> np.ndarray:
    """Seed vectors first (the problem's initial guess in seed-centered mode),
    then uniform samples in bounds that pass the filter."""
    n = options.num_results
    if seeds is None:
        seeds = [objective.space.initial_free] if options.init_mode == "seed-centered" else []
    seeds = [np.asarray(s, dtype=float) for s in seeds]
    if len(seeds) > n:
        raise OptionsError(f"{len(seeds)} seed solutions exceed the population size {n}")
    rest = _feasible_uniform(objective, rng, n - len(seeds))
    if seeds:
        return np.vstack([np.array(seeds), rest])
    return rest


def calibrate(
    problem: Problem,
    options: CalibrationOptions | None = None,
    *,
    seeds: Sequence | None = None,
    trace: Callable[[dict], None] | None = None,
    clock: Callable[[], float] = time.monotonic,
) -> SolutionSet:
    """Run one calibration and return its solution set.

    ``seeds`` replaces the default seeding of the population (or the start
    point for ``method='nm'``).
    """
    options = options or CalibrationOptions()
    problem.data.check_well_posed()
    space = problem.space
    budget = options.budget(space.dim)
    counter = EvalCounter(budget if budget is not None else sys.maxsize)
    objective = Objective(problem.model, space, problem.data, counter)
    rng = np.random.default_rng(options.seed)
    run_clock = RunClock(clock)
    T = options.max_calibration_time

    def stop_now() -> bool:
        return check_stopping(counter, run_clock.elapsed(), options) is not None

    executor = ThreadPoolExecutor(options.workers) if options.workers > 1 else None
    with executor or nullcontext():
        if options.method == "nm":
            start = np.asarray(seeds[0], dtype=float) if seeds is not None and len(seeds) else space.initial_free
            best = nm_with_continuation(
                objective, Candidate(start, math.inf), options.max_steps, should_stop=stop_now
            )
            X, f = best.x[None, :], np.array([best.f])
        else:
            config = EngineConfig(
                pop_size=options.num_results,
                neighborhood=options.neighborhood,
                niche_fraction=options.niche_fraction,
            )
            X0 = initial_population(objective, options, rng, seeds)
            if budget is not None:
                engine_budget = max(1, int(options.engine_fraction * budget))
            else:
                engine_budget = sys.maxsize

            def engine_progress(used: int) -> float:
                p = used / engine_budget if budget is not None else 0.0
                if T is not None:
                    p = max(p, run_clock.elapsed() / (options.engine_fraction * T))
                return p

            def engine_stop() -> bool:
                if stop_now():
                    return True
                return T is not None and run_clock.elapsed() >= options.engine_fraction * T

            result = run_engine(
                objective,
                X0,
                config,
                rng,
                engine_budget,
                lshade=options.method == "lshade",
                archive_capacity=options.num_results,
                executor=executor,
                should_stop=engine_stop,
                trace=trace,
                progress=engine_progress,
            )
            archive = result.archive
            policy = RefinePolicy(options.refine_best, options.refine_prob)
            if (policy.refine_best or policy.refine_prob > 0) and not stop_now():
                archive, _ = apply_refinement(archive, policy, rng, objective, max_steps=options.max_steps, should_stop=stop_now)
            X, f = archive.X, archive.f

    reason = check_stopping(counter, run_clock.elapsed(), options) or "converged"
    return assemble_solution_set(problem, options, X, f, counter.count, reason)


def _select(prior: SolutionSet, selection) -> list[int]:
    if isinstance(selection, str):
        if selection != "best":
            raise OptionsError(f"selection must be 'best' or a list of indices, got {selection!r}")
        return [0]
    idx = [int(i) for i in selection]
    if not idx:
        raise OptionsError("empty selection")
    bad = [i for i in idx if not 0 <= i < prior.set_size]
    if bad:
        raise IndexError(f"selection indices {bad} out of range 0..{prior.set_size - 1}")
    return idx


def continue_calibration(
    prior: SolutionSet,
    selection="best",
    options: CalibrationOptions | None = None,
    *,
    problem: Problem | None = None,
    fix: dict | None = None,
    bounds: dict | None = None,
    trace=None,
) -> SolutionSet:
    """Launch a new run seeded with selected solutions of ``prior``.

    ``problem`` defaults to the one stored in ``prior``. ``fix`` maps names to
    values that become fixed; ``bounds`` maps names to new ``(lower, upper)``.
    """
    problem = problem or prior.problem()
    options = options or CalibrationOptions.from_dict(prior.results["options"])
    space = problem.space
    names = list(space.names)
    lower, upper = space.lower.copy(), space.upper.copy()
    free, initial = space.free_mask.copy(), space.initial.copy()
    for name, (lo, hi) in (bounds or {}).items():
        if name not in names:
            raise ProblemError(f"unknown parameter {name!r}; valid: {names}")
        k = names.index(name)
        lower[k], upper[k] = lo, hi
    for name, value in (fix or {}).items():
        if name not in names:
            raise ProblemError(f"unknown parameter {name!r}; valid: {names}")
        k = names.index(name)
        free[k] = False
        initial[k] = value
    space = space.replace(lower=lower, upper=upper, free_mask=free, initial=initial)
    problem = problem.with_space(space)

    idx = _select(prior, selection)
    seeds, offenders = [], {}
    for i in idx:
        par = prior.results["solutions"][i]["par"]
        full = np.array([par[n] if n in par else space.initial[k] for k, n in enumerate(names)])
        full[~space.free_mask] = space.initial[~space.free_mask]
        v = full[space.free_mask]
        if not space.contains(v):
            out = [n for n, x, lo, hi in zip(space.free_names, v, space.free_lower, space.free_upper) if not lo <= x <= hi]
            offenders[i] = f"outside bounds for {out}"
        elif not problem.model.feasible(full):
            offenders[i] = "rejected by the model filter"
        seeds.append(v)
    if offenders:
        raise InfeasibleSelection(offenders)
    out = calibrate(problem, options, seeds=seeds, trace=trace)
    out.results["continued_from"] = {"selection": idx, "prior_best_loss": float(prior.fun_values[0])}
    return out
