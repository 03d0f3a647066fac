"""Statistical reports over a solution set.

Every statistic is computed from sorted values with exactly rounded sums, so
results do not depend on the order of the solutions. Statistics that are
undefined for the data at hand (too few solutions, zero variance) are
``None`` rather than NaN.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats as sps

from .objective import ParameterSpace
from .orchestrator import SolutionSet

REPORT_SCHEMA_VERSION = "nichecal.report/1"
MOMENT_MIN_N = 4

REPORT_JSON_SCHEMA = {
    "type": "object",
    "required": ["schema", "set_size", "loss", "parameters", "best"],
    "properties": {
        "schema": {"const": REPORT_SCHEMA_VERSION},
        "set_size": {"type": "integer", "minimum": 1},
        "loss": {
            "type": "object",
            "required": ["cardinality", "mean", "min", "max", "std_dev", "mean_pairwise_distance"],
            "additionalProperties": {"type": "number"},
        },
        "parameters": {
            "type": "array",
            "items": {
                "type": "object",
                "required": [
                    "name",
                    "mean",
                    "std_dev",
                    "spread",
                    "min",
                    "max",
                    "kurtosis",
                    "skewness",
                    "bimodality_coefficient",
                    "mean_distance_to_lower",
                    "mean_distance_to_upper",
                ],
                "properties": {
                    "name": {"type": "string"},
                    "kurtosis": {"type": ["number", "null"]},
                    "skewness": {"type": ["number", "null"]},
                    "bimodality_coefficient": {"type": ["number", "null"]},
                },
            },
        },
        "best": {
            "type": "object",
            "required": ["loss", "mre", "smse"],
            "properties": {
                "loss": {"type": "number"},
                "mre": {"type": ["number", "null"]},
                "smse": {"type": ["number", "null"]},
            },
        },
    },
}


@dataclass(frozen=True)
class LossStats:
    cardinality: int
    mean: float
    min: float
    max: float
    std_dev: float
    mean_pairwise_distance: float


@dataclass(frozen=True)
class ParamStats:
    """Summary of one free parameter across the set.

    ``kurtosis`` is the bias-corrected excess kurtosis and ``skewness`` the
    bias-corrected sample skewness; both are ``None`` for fewer than four
    solutions or zero variance, as is the bimodality coefficient.
    """

    name: str
    mean: float
    std_dev: float
    spread: float
    min: float
    max: float
    kurtosis: float | None
    skewness: float | None
    bimodality_coefficient: float | None
    mean_distance_to_lower: float
    mean_distance_to_upper: float


def _mean(v: np.ndarray) -> float:
    return math.fsum(v) / len(v)


def _std(v: np.ndarray) -> float:
    """Sample standard deviation (ddof=1); 0 for a single value."""
    if len(v) < 2:
        return 0.0
    mu = _mean(v)
    return math.sqrt(math.fsum((v - mu) ** 2) / (len(v) - 1))


def _finite_or_none(x: float) -> float | None:
    x = float(x)
    return x if math.isfinite(x) else None


def bimodality_coefficient(g1: float, g2: float, n: int) -> float:
    """Sarle's sample bimodality coefficient from skewness ``g1`` and excess kurtosis ``g2``."""
    if n < MOMENT_MIN_N:
        raise ValueError(f"bimodality coefficient needs n >= {MOMENT_MIN_N}, got {n}")
    return (g1 * g1 + 1.0) / (g2 + 3.0 * (n - 1) ** 2 / ((n - 2) * (n - 3)))


def moment_stats(values) -> tuple[float | None, float | None, float | None]:
    """(excess kurtosis, skewness, bimodality coefficient) or ``None`` markers."""
    v = np.sort(np.asarray(values, dtype=float))
    n = len(v)
    if n < MOMENT_MIN_N or v[0] == v[-1]:
        return None, None, None
    with np.errstate(all="ignore"):
        g1 = _finite_or_none(sps.skew(v, bias=False))
        g2 = _finite_or_none(sps.kurtosis(v, fisher=True, bias=False))
    if g1 is None or g2 is None:
        return None, None, None
    return g2, g1, _finite_or_none(bimodality_coefficient(g1, g2, n))


def loss_stats(s: SolutionSet) -> LossStats:
    f = np.sort(np.asarray(s.fun_values, dtype=float))
    n = len(f)
    if n == 0:
        raise ValueError("loss statistics of an empty solution set are undefined")
    if n == 1:
        pairwise = 0.0
    else:
        # sum_{a<b} |f_a - f_b| over sorted values is sum_k (2k - n + 1) f_k
        k = np.arange(n)
        pairwise = 2.0 * math.fsum((2 * k - n + 1) * f) / (n * (n - 1))
    return LossStats(
        cardinality=n,
        mean=_mean(f),
        min=float(f[0]),
        max=float(f[-1]),
        std_dev=_std(f),
        mean_pairwise_distance=pairwise,
    )


def param_stats(s: SolutionSet, space: ParameterSpace | None = None) -> list[ParamStats]:
    """Per free parameter statistics; bound distances use normalised coordinates."""
    if space is None:
        space = s.problem().space
    X = np.asarray(s.solutions_set, dtype=float)
    if X.shape[1] != space.dim:
        raise ValueError(f"solutions have {X.shape[1]} columns, space has {space.dim} free parameters")
    if len(X) == 0:
        raise ValueError("parameter statistics of an empty solution set are undefined")
    out = []
    for j, name in enumerate(space.free_names):
        v = np.sort(X[:, j])
        lo, hi = space.free_lower[j], space.free_upper[j]
        z = (v - lo) / (hi - lo)
        kurt, skew, bc = moment_stats(v)
        out.append(
            ParamStats(
                name=name,
                mean=_mean(v),
                std_dev=_std(v),
                spread=float(v[-1] - v[0]),
                min=float(v[0]),
                max=float(v[-1]),
                kurtosis=kurt,
                skewness=skew,
                bimodality_coefficient=bc,
                mean_distance_to_lower=_mean(z),
                mean_distance_to_upper=_mean(1.0 - z),
            )
        )
    return out


def report_dict(s: SolutionSet, space: ParameterSpace | None = None) -> dict:
    if space is None:
        space = s.problem().space
    best = s.results.get("best", {})
    return {
        "schema": REPORT_SCHEMA_VERSION,
        "set_size": s.set_size,
        "loss": asdict(loss_stats(s)),
        "parameters": [asdict(p) for p in param_stats(s, space)],
        "best": {
            "loss": float(s.fun_values[0]),
            "mre": best.get("mre"),
            "smse": best.get("smse"),
        },
    }


def _fmt(x) -> str:
    if x is None:
        return "undefined"
    if isinstance(x, int):
        return str(x)
    return f"{x:.6g}"


def format_report(rep: dict) -> str:
    """Fixed-layout text rendering of :func:`report_dict` output."""
    lines = [f"Solution set: {rep['set_size']} solutions", "", "Loss function values"]
    loss = rep["loss"]
    for key in ("cardinality", "mean", "min", "max", "std_dev", "mean_pairwise_distance"):
        lines.append(f"  {key:<24}{_fmt(loss[key])}")
    lines += ["", "Best solution"]
    for key in ("loss", "mre", "smse"):
        lines.append(f"  {key:<24}{_fmt(rep['best'][key])}")
    keys = (
        "mean",
        "std_dev",
        "spread",
        "min",
        "max",
        "kurtosis",
        "skewness",
        "bimodality_coefficient",
        "mean_distance_to_lower",
        "mean_distance_to_upper",
    )
    for p in rep["parameters"]:
        lines += ["", f"Parameter {p['name']}"]
        for key in keys:
            lines.append(f"  {key:<24}{_fmt(p[key])}")
    return "\n".join(lines) + "\n"


def report(s: SolutionSet, space: ParameterSpace | None = None) -> tuple[str, str]:
    """Text report and its JSON counterpart."""
    rep = report_dict(s, space)
    return format_report(rep), json.dumps(rep, indent=1, allow_nan=False) + "\n"
