from pathlib import Path
from types import SimpleNamespace

import numpy as np
import pytest

from nichecal.objective import Dataset, DatasetCollection, ParameterSpace
from nichecal.orchestrator import CalibrationOptions, assemble_solution_set, calibrate
from nichecal.problems import builtin_problem, himmelblau_problem


DATA = Path(__file__).parent / "data"


def bare(X, f=None):
    """Minimal stand-in for a solution set: just rows and losses."""
    X = np.asarray(X, dtype=float)
    f = np.arange(len(X), dtype=float) if f is None else np.asarray(f, dtype=float)
    return SimpleNamespace(solutions_set=X, fun_values=f)


def unit_space(dim=1):
    return ParameterSpace([f"p{k}" for k in range(dim)], [0.0] * dim, [1.0] * dim)


def make_set(X, problem=None, f=None):
    """SolutionSet over ``problem`` (himmelblau by default) holding rows ``X``."""
    problem = problem or himmelblau_problem()
    X = np.asarray(X, dtype=float)
    if f is None:
        f = np.array([problem.model.surface(x, y) for x, y in X]) if problem.name == "himmelblau" else np.arange(len(X), dtype=float)
    return assemble_solution_set(problem, CalibrationOptions(), X, np.asarray(f, dtype=float), len(X), "evals")


def random_collection(rng, max_sets=3, max_points=5, zero_weight_prob=0.0):
    """Random datasets with positive means plus matching random predictions."""
    sets, preds = [], []
    for k in range(int(rng.integers(1, max_sets + 1))):
        n = int(rng.integers(1, max_points + 1))
        d = rng.uniform(0.1, 10.0, n) * rng.choice([-1.0, 1.0])
        w = rng.uniform(0.0, 2.0, n)
        if rng.random() < zero_weight_prob:
            w = np.zeros(n)
        x = np.sort(rng.uniform(0, 10, n)) + np.arange(n) if n > 1 else None
        sets.append(Dataset(f"d{k}", d, w, x))
        preds.append(d + rng.normal(0, 3.0, n))
    if all(ds.weight == 0 for ds in sets):
        sets[0] = sets[0].with_weights(np.ones(sets[0].n))
    return DatasetCollection(sets), preds


@pytest.fixture(scope="session")
def toy_set():
    """A small SHADE run on toy_growth, shared by read-only tests."""
    return calibrate(builtin_problem("toy_growth"), CalibrationOptions(max_fun_evals=3000, num_results=40, seed=7))


@pytest.fixture(scope="session")
def basin_set():
    return calibrate(builtin_problem("multi_basin_growth"), CalibrationOptions(max_fun_evals=3000, num_results=30, seed=3))
