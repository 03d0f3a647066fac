"""Nelder-Mead local refinement with restarts from the incumbent."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .evolution import SolutionArchive, total_order
from .loss import INF, BudgetExhausted, Objective
from .objective import clamp_to_bounds

REFLECT, EXPAND, CONTRACT, SHRINK = 1.0, 2.0, 0.5, 0.5


@dataclass
class Candidate:
    x: np.ndarray
    f: float


@dataclass
class RefinePolicy:
    refine_best: bool = True
    refine_prob: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.refine_prob <= 1.0:
            raise ValueError(f"refine_prob must be in [0, 1], got {self.refine_prob}")


def initial_simplex(objective: Objective, x0: np.ndarray) -> np.ndarray:
    """Incumbent plus one vertex per axis, offset by 5% of the bound range.

    A coordinate sitting on a bound is offset by 0.025% of the range, inward.
    Offsets that would leave the box are flipped to the other side.
    """
    space = objective.space
    lo, hi = space.free_lower, space.free_upper
    span = hi - lo
    dim = len(x0)
    sim = np.tile(np.asarray(x0, dtype=float), (dim + 1, 1))
    for k in range(dim):
        if x0[k] <= lo[k]:
            step = 0.00025 * span[k]
        elif x0[k] >= hi[k]:
            step = -0.00025 * span[k]
        else:
            step = 0.05 * span[k]
            if x0[k] + step > hi[k]:
                step = -step
        sim[k + 1, k] = x0[k] + step
    return np.clip(sim, lo, hi)


def nm_run(
    objective: Objective,
    start: Candidate,
    max_steps: int = 500,
    *,
    xatol: float = 1e-10,
    fatol: float = 1e-14,
    frtol: float = 1e-12,
    should_stop: Callable[[], bool] | None = None,
) -> tuple[Candidate, int]:
    """At most ``max_steps`` simplex iterations from ``start``.

    Returns the best vertex and the number of iterations taken. Proposals
    outside the box are projected onto it. Budget exhaustion ends the run
    early with the best point seen so far.
    """
    x0 = np.array(start.x, dtype=float)
    if max_steps <= 0:
        return Candidate(x0, start.f), 0
    space = objective.space
    scale = space.free_range
    dim = len(x0)

    sim = initial_simplex(objective, x0)
    fsim = np.full(dim + 1, INF)
    fsim[0] = start.f
    steps = 0

    def clip(v):
        return clamp_to_bounds(space, v)

    try:
        for k in range(1, dim + 1):
            fsim[k] = objective.evaluate(sim[k])
        order = np.argsort(fsim, kind="stable")
        sim, fsim = sim[order], fsim[order]

        while steps < max_steps:
            if should_stop is not None and should_stop():
                break
            spread_x = np.max(np.abs((sim[1:] - sim[0]) / scale))
            spread_f = np.max(np.abs(fsim[1:] - fsim[0]))
            if spread_x <= xatol or (np.isfinite(spread_f) and spread_f <= fatol + frtol * abs(fsim[0])):
                break
            steps += 1
            xbar = sim[:-1].mean(axis=0)
            worst = sim[-1]
            xr = clip(xbar + REFLECT * (xbar - worst))
            fr = objective.evaluate(xr)
            if fr < fsim[0]:
                xe = clip(xbar + REFLECT * EXPAND * (xbar - worst))
                fe = objective.evaluate(xe)
                if fe < fr:
                    sim[-1], fsim[-1] = xe, fe
                else:
                    sim[-1], fsim[-1] = xr, fr
            elif fr < fsim[-2]:
                sim[-1], fsim[-1] = xr, fr
            else:
                shrink = False
                if fr < fsim[-1]:
                    xc = clip(xbar + CONTRACT * REFLECT * (xbar - worst))
                    fc = objective.evaluate(xc)
                    if fc <= fr:
                        sim[-1], fsim[-1] = xc, fc
                    else:
                        shrink = True
                else:
                    xcc = clip(xbar - CONTRACT * (xbar - worst))
                    fcc = objective.evaluate(xcc)
                    if fcc < fsim[-1]:
                        sim[-1], fsim[-1] = xcc, fcc
                    else:
                        shrink = True
                if shrink:
                    for j in range(1, dim + 1):
                        sim[j] = sim[0] + SHRINK * (sim[j] - sim[0])
                        fsim[j] = INF
                        fsim[j] = objective.evaluate(sim[j])
            order = np.argsort(fsim, kind="stable")
            sim, fsim = sim[order], fsim[order]
    except BudgetExhausted:
        pass

    b = int(np.argmin(fsim))
    if fsim[b] <= start.f:
        return Candidate(sim[b].copy(), float(fsim[b])), steps
    return Candidate(x0, start.f), steps


def nm_with_continuation(
    objective: Objective,
    start: Candidate,
    max_steps: int = 500,
    rel_tol: float = 1e-6,
    *,
    should_stop: Callable[[], bool] | None = None,
) -> Candidate:
    """Restart Nelder-Mead from its own incumbent until it stops improving.

    Stops when a run improves the loss by less than ``rel_tol`` (relative),
    when the budget is spent, or when ``should_stop`` fires.
    """
    best = Candidate(np.array(start.x, dtype=float), float(start.f))
    if not np.isfinite(best.f):
        try:
            best.f = objective.evaluate(best.x)
        except BudgetExhausted:
            return best
    while True:
        if objective.counter.exhausted() or (should_stop is not None and should_stop()):
            return best
        result, _ = nm_run(objective, best, max_steps, should_stop=should_stop)
        gain = best.f - result.f
        threshold = rel_tol * abs(best.f)
        best = result
        if not gain > threshold:
            return best


def apply_refinement(
    archive: SolutionArchive,
    policy: RefinePolicy,
    rng: np.random.Generator,
    objective: Objective,
    *,
    max_steps: int = 500,
    rel_tol: float = 1e-6,
    should_stop: Callable[[], bool] | None = None,
) -> tuple[SolutionArchive, list[int]]:
    """Refine the best member and/or a random subset, then re-sort.

    One uniform draw is taken per member up front so the random subset does
    not depend on how much budget each refinement consumes. Returns the new
    archive and the indices (in the pre-refinement sorted order) that were
    refined.
    """
    if len(archive) == 0:
        raise ValueError("cannot refine an empty archive")
    arch = archive.sorted()
    draws = rng.random(len(arch))
    targets = [
        i
        for i in range(len(arch))
        if (i == 0 and policy.refine_best) or (not (i == 0 and policy.refine_best) and draws[i] < policy.refine_prob)
    ]
    X, f = arch.X.copy(), arch.f.copy()
    for i in targets:
        if objective.counter.exhausted() or (should_stop is not None and should_stop()):
            break
        res = nm_with_continuation(objective, Candidate(X[i], f[i]), max_steps, rel_tol, should_stop=should_stop)
        X[i], f[i] = res.x, res.f
    order = total_order(X, f)
    return SolutionArchive(arch.capacity, arch.scale, X[order], f[order]), targets
