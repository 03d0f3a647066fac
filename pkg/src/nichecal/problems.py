"""Built-in prediction models, synthetic problems and the problem file format.

Problem files are JSON::

    {
      "schema": "nichecal.problem/1",
      "name": "toy_growth",
      "model": {"id": "toy_growth", "constants": {"age": 200.0}},
      "parameters": [
        {"name": "W_max", "lower": 10.0, "upper": 1000.0, "free": true, "initial": 200.0},
        ...
      ],
      "datasets": [
        {"id": "tW", "x": [...], "d": [...], "w": [...]},
        {"id": "Ww_a", "d": [171.3], "w": [1.0]}
      ]
    }

A dataset without ``x`` is zero-variate. ``w`` may be omitted, in which case
every point of the dataset gets weight ``1/n``. Floats are written with
``repr`` precision so a load/save cycle is lossless.
"""

from __future__ import annotations

import json
from pathlib import Path

import jsonschema
import numpy as np

from .objective import Dataset, DatasetCollection, ParameterSpace, Problem, ProblemError

PROBLEM_SCHEMA_VERSION = "nichecal.problem/1"


class ToyGrowth:
    """Saturating growth curve ``W(t) = W_max * (1 - exp(-r (t - t0)))**b``.

    Parameters (in order): ``W_max`` (g), ``r`` (1/d), ``t0`` (d), ``b``.
    Uni-variate datasets are weight-vs-time series; zero-variate datasets
    are the weight at ``constants["age"]``. The filter rejects curves whose
    weight at t=0 already exceeds half the asymptote.
    """

    id = "toy_growth"

    def __init__(self, age: float = 200.0):
        self.age = float(age)

    def constants(self) -> dict:
        return {"age": self.age}

    @staticmethod
    def curve(params, t):
        w_max, r, t0, b = params[0], params[1], params[2], params[3]
        base = np.maximum(1.0 - np.exp(-r * (np.asarray(t) - t0)), 0.0)
        return w_max * base**b

    def feasible(self, params) -> bool:
        return bool(self.curve(params, 0.0) < 0.5 * params[0])

    def predict(self, params, data):
        out = []
        for ds in data.datasets:
            if ds.x is None:
                out.append(np.atleast_1d(self.curve(params, self.age)))
            else:
                out.append(self.curve(params, ds.x))
        return out


class Himmelblau:
    """Himmelblau's surface as a one-point zero-variate fit.

    The prediction is ``offset + h(x, y)`` and the matching observation is
    ``offset``, so the loss is zero exactly at the four global minima of
    ``h``. The offset keeps the symmetric loss away from the 0/0 point.
    """

    id = "himmelblau"

    MINIMA = np.array(
        [
            [3.0, 2.0],
            [-2.805118086952745, 3.131312518250573],
            [-3.779310253377747, -3.283185991286170],
            [3.584428340330492, -1.848126526964404],
        ]
    )

    def __init__(self, offset: float = 1.0):
        self.offset = float(offset)

    def constants(self) -> dict:
        return {"offset": self.offset}

    @staticmethod
    def surface(x, y):
        return (x * x + y - 11.0) ** 2 + (x + y * y - 7.0) ** 2

    def feasible(self, params) -> bool:
        return True

    def predict(self, params, data):
        value = self.offset + self.surface(params[0], params[1])
        return [np.full(ds.n, value) for ds in data.datasets]


class MultiBasinGrowth:
    """Growth curve with a sign symmetry, plus one symmetry-breaking datum.

    Parameters (in order): ``z`` (cm, asymptotic weight ``z**3`` g),
    ``f_tW`` (signed scaled response; growth rate ``r_ref * f_tW**2``),
    ``t0`` (d) and ``b``. The weight curve is identical for ``f_tW`` and
    ``-f_tW``. A zero-variate dataset whose id equals
    ``constants["repro_id"]`` is predicted as
    ``R_ref * z**2 * exp(kappa * f_tW)``, which favours the positive branch;
    every other zero-variate dataset is the weight at ``constants["age"]``.
    """

    id = "multi_basin_growth"

    def __init__(self, age=200.0, r_ref=0.05, R_ref=0.02, kappa=0.5, repro_id="R_i"):
        self.age = float(age)
        self.r_ref = float(r_ref)
        self.R_ref = float(R_ref)
        self.kappa = float(kappa)
        self.repro_id = str(repro_id)

    def constants(self) -> dict:
        return {
            "age": self.age,
            "r_ref": self.r_ref,
            "R_ref": self.R_ref,
            "kappa": self.kappa,
            "repro_id": self.repro_id,
        }

    def curve(self, params, t):
        z, f, t0, b = params[0], params[1], params[2], params[3]
        base = np.maximum(1.0 - np.exp(-self.r_ref * f * f * (np.asarray(t) - t0)), 0.0)
        return z**3 * base**b

    def reproduction(self, params):
        return self.R_ref * params[0] ** 2 * np.exp(self.kappa * params[1])

    def feasible(self, params) -> bool:
        return bool(self.curve(params, 0.0) < 0.5 * params[0] ** 3)

    def predict(self, params, data):
        out = []
        for ds in data.datasets:
            if ds.x is not None:
                out.append(self.curve(params, ds.x))
            elif ds.id == self.repro_id:
                out.append(np.atleast_1d(self.reproduction(params)))
            else:
                out.append(np.atleast_1d(self.curve(params, self.age)))
        return out


MODELS = {cls.id: cls for cls in (ToyGrowth, Himmelblau, MultiBasinGrowth)}


def make_model(model_id: str, constants: dict | None = None):
    try:
        cls = MODELS[model_id]
    except KeyError:
        raise ProblemError(f"unknown model id {model_id!r}; known: {sorted(MODELS)}") from None
    try:
        return cls(**(constants or {}))
    except TypeError as exc:
        raise ProblemError(f"bad constants for model {model_id!r}: {exc}") from None


# -- synthetic problems -----------------------------------------------------

TOY_GROWTH_TRUTH = np.array([250.0, 0.02, -5.0, 3.0])
MULTI_BASIN_TRUTH = np.array([6.3, 0.63, -5.0, 3.0])


def toy_growth_problem(seed: int = 2021, noise: float = 0.03, n_points: int = 25) -> Problem:
    """Weight-vs-time series plus weight at a fixed age, with seeded noise."""
    model = ToyGrowth(age=200.0)
    rng = np.random.default_rng(seed)
    t = np.linspace(0.0, 360.0, n_points)
    w_true = model.curve(TOY_GROWTH_TRUTH, t)
    wa_true = float(model.curve(TOY_GROWTH_TRUTH, model.age))
    data = DatasetCollection(
        [
            Dataset("tW", w_true * (1.0 + noise * rng.standard_normal(n_points)), x=t),
            Dataset("Ww_a", [wa_true * (1.0 + noise * rng.standard_normal())]),
        ]
    )
    space = ParameterSpace(
        names=["W_max", "r", "t0", "b"],
        lower=[10.0, 0.001, -50.0, 0.5],
        upper=[1000.0, 0.1, 0.0, 6.0],
        initial=[200.0, 0.01, -10.0, 2.0],
    )
    return Problem(space, data, model, name="toy_growth")


def toy_growth_noise_free(n_points: int = 25) -> Problem:
    """toy_growth with exact observations generated at the true parameters."""
    return toy_growth_problem(noise=0.0, n_points=n_points)


def himmelblau_problem(offset: float = 1.0) -> Problem:
    model = Himmelblau(offset)
    data = DatasetCollection([Dataset("h", [offset])])
    space = ParameterSpace(names=["x", "y"], lower=[-5.0, -5.0], upper=[5.0, 5.0], initial=[0.0, 0.0])
    return Problem(space, data, model, name="himmelblau")


def multi_basin_growth_problem(seed: int = 2021, noise: float = 0.03, n_points: int = 25) -> Problem:
    """Two mirror basins in ``f_tW``; the starting guess sits in the worse one."""
    model = MultiBasinGrowth()
    rng = np.random.default_rng(seed)
    t = np.linspace(0.0, 360.0, n_points)
    w_true = model.curve(MULTI_BASIN_TRUTH, t)
    wa_true = float(model.curve(MULTI_BASIN_TRUTH, model.age))
    r_true = float(model.reproduction(MULTI_BASIN_TRUTH))
    data = DatasetCollection(
        [
            Dataset("tW", w_true * (1.0 + noise * rng.standard_normal(n_points)), x=t),
            Dataset("Ww_a", [wa_true * (1.0 + noise * rng.standard_normal())]),
            Dataset("R_i", [r_true * (1.0 + noise * rng.standard_normal())], w=[0.2]),
        ]
    )
    space = ParameterSpace(
        names=["z", "f_tW", "t0", "b"],
        lower=[2.0, -1.0, -50.0, 0.5],
        upper=[10.0, 1.0, 0.0, 6.0],
        initial=[5.5, -0.5, -10.0, 2.0],
    )
    return Problem(space, data, model, name="multi_basin_growth")


BUILTIN_PROBLEMS = {
    "toy_growth": toy_growth_problem,
    "himmelblau": himmelblau_problem,
    "multi_basin_growth": multi_basin_growth_problem,
}


def builtin_problem(name: str) -> Problem:
    try:
        return BUILTIN_PROBLEMS[name]()
    except KeyError:
        raise ProblemError(f"unknown built-in problem {name!r}; known: {sorted(BUILTIN_PROBLEMS)}") from None


# -- JSON -------------------------------------------------------------------

PROBLEM_JSON_SCHEMA = {
    "type": "object",
    "required": ["schema", "model", "parameters", "datasets"],
    "properties": {
        "schema": {"type": "string"},
        "name": {"type": "string"},
        "model": {
            "type": "object",
            "required": ["id"],
            "properties": {"id": {"type": "string"}, "constants": {"type": "object"}},
        },
        "parameters": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["name", "lower", "upper"],
                "properties": {
                    "name": {"type": "string"},
                    "lower": {"type": "number"},
                    "upper": {"type": "number"},
                    "free": {"type": "boolean"},
                    "initial": {"type": "number"},
                },
            },
        },
        "datasets": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["id", "d"],
                "properties": {
                    "id": {"type": "string"},
                    "x": {"type": "array", "items": {"type": "number"}},
                    "d": {"type": "array", "items": {"type": "number"}, "minItems": 1},
                    "w": {"type": "array", "items": {"type": "number"}},
                },
            },
        },
    },
}


def problem_to_dict(problem: Problem) -> dict:
    space = problem.space
    params = [
        {
            "name": name,
            "lower": float(space.lower[k]),
            "upper": float(space.upper[k]),
            "free": bool(space.free_mask[k]),
            "initial": float(space.initial[k]),
        }
        for k, name in enumerate(space.names)
    ]
    datasets = []
    for ds in problem.data:
        entry = {"id": ds.id}
        if ds.x is not None:
            entry["x"] = ds.x.tolist()
        entry["d"] = ds.d.tolist()
        entry["w"] = ds.w.tolist()
        datasets.append(entry)
    return {
        "schema": PROBLEM_SCHEMA_VERSION,
        "name": problem.name,
        "model": {"id": problem.model.id, "constants": problem.model.constants()},
        "parameters": params,
        "datasets": datasets,
    }


def problem_from_dict(obj: dict) -> Problem:
    try:
        jsonschema.validate(obj, PROBLEM_JSON_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ProblemError(f"problem file: {where}: {exc.message}") from None
    if obj["schema"] != PROBLEM_SCHEMA_VERSION:
        raise ProblemError(f"unsupported problem schema {obj['schema']!r} (expected {PROBLEM_SCHEMA_VERSION!r})")
    params = obj["parameters"]
    lower = [p["lower"] for p in params]
    upper = [p["upper"] for p in params]
    space = ParameterSpace(
        names=[p["name"] for p in params],
        lower=lower,
        upper=upper,
        free_mask=[p.get("free", True) for p in params],
        initial=[p.get("initial", (lo + hi) / 2.0) for p, lo, hi in zip(params, lower, upper)],
    )
    data = DatasetCollection([Dataset(ds["id"], ds["d"], ds.get("w"), ds.get("x")) for ds in obj["datasets"]])
    model_spec = obj["model"]
    model = make_model(model_spec["id"], model_spec.get("constants"))
    return Problem(space, data, model, name=obj.get("name", model.id))


def save_problem(problem: Problem, path) -> None:
    Path(path).write_text(json.dumps(problem_to_dict(problem), indent=2) + "\n")


def load_problem(ref) -> Problem:
    """Load a problem from a JSON file or a ``builtin:<name>`` reference."""
    ref = str(ref)
    if ref.startswith("builtin:"):
        return builtin_problem(ref.split(":", 1)[1])
    path = Path(ref)
    if not path.is_file():
        raise FileNotFoundError(f"problem file not found: {path}")
    try:
        obj = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ProblemError(f"problem file {path}: invalid JSON ({exc})") from None
    return problem_from_dict(obj)
