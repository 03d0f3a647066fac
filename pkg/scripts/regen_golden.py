"""Regenerate the golden solution set and report used by the analytics tests.

Only run this after an intentional change to the report layout.
"""

import sys
from pathlib import Path

import numpy as np

from nichecal.analytics import report
from nichecal.orchestrator import CalibrationOptions, assemble_solution_set, save_solution_set
from nichecal.problems import Himmelblau, himmelblau_problem

DATA = Path(__file__).resolve().parent.parent / "tests" / "data"


def main() -> int:
    problem = himmelblau_problem()
    rng = np.random.default_rng(2024)
    X = np.repeat(Himmelblau.MINIMA, 4, axis=0) + rng.normal(0.0, 0.05, (16, 2))
    f = np.array([problem.model.surface(x, y) for x, y in X])
    s = assemble_solution_set(problem, CalibrationOptions(seed=2024), X, f, 16, "evals")
    DATA.mkdir(parents=True, exist_ok=True)
    save_solution_set(s, DATA / "golden_set.json")
    text, js = report(s)
    (DATA / "golden_report.txt").write_text(text)
    (DATA / "golden_report.json").write_text(js)
    return 0


if __name__ == "__main__":
    sys.exit(main())
