"""How many of Himmelblau's four global minima does each seeded run find?

Usage: python3 scripts/niche_coverage.py --seeds 20 --budget 20000 --pop 100
"""

import argparse
import sys

import numpy as np

from nichecal.orchestrator import CalibrationOptions, calibrate
from nichecal.problems import Himmelblau, builtin_problem


def coverage(solutions: np.ndarray, span: np.ndarray, radius: float) -> int:
    Z = solutions / span
    return sum(bool(np.any(np.linalg.norm(Z - m / span, axis=1) <= radius)) for m in Himmelblau.MINIMA)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--budget", type=int, default=20_000)
    ap.add_argument("--pop", type=int, default=100)
    ap.add_argument("--radius", type=float, default=1e-2, help="in normalised coordinates")
    ap.add_argument("--neighborhood", type=int, default=10)
    ap.add_argument("--niche-fraction", type=float, default=0.4)
    args = ap.parse_args(argv)

    problem = builtin_problem("himmelblau")
    opts = CalibrationOptions(
        max_fun_evals=args.budget,
        num_results=args.pop,
        neighborhood=args.neighborhood,
        niche_fraction=args.niche_fraction,
    )
    hits = []
    for seed in range(args.seeds):
        s = calibrate(problem, opts.replace(seed=seed))
        hits.append(coverage(s.solutions_set, problem.space.free_range, args.radius))
        print(f"seed {seed:>3}: {hits[-1]} minima, best loss {s.fun_values[0]:.3g}")
    print(f">=3 minima in {sum(h >= 3 for h in hits)}/{len(hits)}, all 4 in {sum(h == 4 for h in hits)}/{len(hits)}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
