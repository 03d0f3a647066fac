"""Seeded Nelder-Mead versus SHADE comparison harness."""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

from .objective import Problem
from .orchestrator import CalibrationOptions, calibrate

# Best losses this close (relative) count as the same optimum.
TIE_RTOL = 1e-9


@dataclass(frozen=True)
class CompareRow:
    seed: int
    nm_best: float
    shade_best: float
    shade_set_average: float
    nm_smse: float | None
    shade_smse: float | None
    nm_mre: float | None
    shade_mre: float | None
    shade_set_size: int
    nm_set_size: int
    nm_evaluations: int
    shade_evaluations: int

    @property
    def improvement(self) -> float:
        """``(NM_best - SHADE_best) / NM_best``; positive when SHADE is better."""
        if math.isclose(self.nm_best, self.shade_best, rel_tol=TIE_RTOL, abs_tol=0.0):
            return 0.0
        if self.nm_best == 0.0:
            return -math.inf
        return (self.nm_best - self.shade_best) / self.nm_best


@dataclass
class CompareResult:
    problem: str
    budget: int
    rows: list[CompareRow]

    @property
    def shade_not_worse(self) -> int:
        return sum(r.improvement >= 0.0 for r in self.rows)

    @property
    def shade_strictly_better(self) -> int:
        return sum(r.improvement > 0.0 for r in self.rows)

    @property
    def worst_improvement(self) -> float:
        return min(r.improvement for r in self.rows)

    def to_dict(self) -> dict:
        return {
            "problem": self.problem,
            "budget": self.budget,
            "seeds": len(self.rows),
            "shade_not_worse": self.shade_not_worse,
            "shade_strictly_better": self.shade_strictly_better,
            "rows": [dict(asdict(r), improvement=r.improvement) for r in self.rows],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, allow_nan=False) + "\n"

    def table(self) -> str:
        """Fixed-width table: best losses, set average, SMSE, MRE, improvement."""
        head = (
            f"{'seed':>5} {'NM best':>12} {'SHADE best':>12} {'SHADE avg':>12} "
            f"{'NM SMSE':>10} {'SHADE SMSE':>10} {'NM MRE':>10} {'SHADE MRE':>10} {'improv.':>8}"
        )
        lines = [f"problem {self.problem}, budget {self.budget}", head, "-" * len(head)]
        for r in self.rows:
            lines.append(
                f"{r.seed:>5} {r.nm_best:>12.6g} {r.shade_best:>12.6g} {r.shade_set_average:>12.6g} "
                f"{_g(r.nm_smse):>10} {_g(r.shade_smse):>10} {_g(r.nm_mre):>10} {_g(r.shade_mre):>10} "
                f"{r.improvement:>8.4f}"
            )
        lines.append("-" * len(head))
        lines.append(
            f"SHADE <= NM in {self.shade_not_worse}/{len(self.rows)} seeds, "
            f"strictly better in {self.shade_strictly_better}/{len(self.rows)}"
        )
        return "\n".join(lines) + "\n"


def _g(x) -> str:
    return "-" if x is None else f"{x:.4g}"


def compare_one(problem: Problem, budget: int, seed: int, base: CalibrationOptions | None = None) -> CompareRow:
    base = base or CalibrationOptions()
    nm = calibrate(problem, base.replace(method="nm", max_fun_evals=budget, seed=seed, workers=1))
    sh = calibrate(problem, base.replace(method="shade", max_fun_evals=budget, seed=seed, workers=1))
    return CompareRow(
        seed=seed,
        nm_best=float(nm.fun_values[0]),
        shade_best=float(sh.fun_values[0]),
        shade_set_average=math.fsum(sh.fun_values) / sh.set_size,
        nm_smse=nm.results["best"]["smse"],
        shade_smse=sh.results["best"]["smse"],
        nm_mre=nm.results["best"]["mre"],
        shade_mre=sh.results["best"]["mre"],
        shade_set_size=sh.set_size,
        nm_set_size=nm.set_size,
        nm_evaluations=nm.results["evaluations"],
        shade_evaluations=sh.results["evaluations"],
    )


def compare(
    problem: Problem,
    budget: int = 20000,
    seeds=range(20),
    *,
    options: CalibrationOptions | None = None,
    workers: int = 1,
) -> CompareResult:
    """Run NM (continuation, whole budget) and SHADE plus refinement per seed.

    SHADE splits the budget by ``options.engine_fraction`` (75/25 by default).
    Seeds may run in parallel; every run is deterministic in its seed.
    """
    if budget < 1000:
        raise ValueError(f"budget must be at least 1000, got {budget}")
    seeds = list(seeds)
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            rows = list(ex.map(lambda s: compare_one(problem, budget, s, options), seeds))
    else:
        rows = [compare_one(problem, budget, s, options) for s in seeds]
    return CompareResult(problem.name, budget, rows)
