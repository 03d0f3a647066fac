"""Gap between the mean and the minimum loss of the final solution set.

Also sweeps the niching schedule when given several ``--niche-fraction``
values, which is how the default was chosen.

Usage: python3 scripts/set_quality.py --seeds 20 --niche-fraction 0.3 0.4 0.5
"""

import argparse
import sys

from nichecal.analytics import loss_stats
from nichecal.orchestrator import CalibrationOptions, calibrate
from nichecal.problems import builtin_problem


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--problem", default="toy_growth")
    ap.add_argument("--budget", type=int, default=20_000)
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--threshold", type=float, default=0.25)
    ap.add_argument("--niche-fraction", type=float, nargs="+", default=[0.4])
    args = ap.parse_args(argv)

    problem = builtin_problem(args.problem)
    for frac in args.niche_fraction:
        gaps = []
        for seed in range(args.seeds):
            st = loss_stats(calibrate(problem, CalibrationOptions(max_fun_evals=args.budget, niche_fraction=frac, seed=seed)))
            gaps.append(st.mean / st.min - 1.0)
        ok = sum(g <= args.threshold for g in gaps)
        print(f"niche_fraction {frac:.2f}: mean/min - 1 <= {args.threshold} in {ok}/{len(gaps)} seeds, max {max(gaps):.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
