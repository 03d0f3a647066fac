"""SHADE and L-SHADE population engines plus the diverse result archive.

The engine follows Tanabe & Fukunaga's success-history DE:
current-to-pbest/1 mutation with an external archive of replaced parents,
binomial crossover, and a cyclic memory of successful (CR, F) pairs.
L-SHADE adds linear population size reduction from ``N_init`` to ``N_min``
over the evaluation budget. An optional nearest-neighbour restriction of the
mutation (see :class:`EngineConfig`) provides niching early in a run.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .loss import INF, Objective
from .objective import ParameterSpace, clamp_to_bounds


class EngineTooSmall(ValueError):
    pass


@dataclass
class EngineConfig:
    """Fixed SHADE hyperparameters; only ``pop_size`` is meant to be tuned.

    ``cr_init``/``f_init`` seed every slot of the success history.

    ``neighborhood`` turns on niching: each member draws its pbest and
    difference vectors from its ``neighborhood`` nearest members (itself
    included, normalised coordinates) instead of the whole population, with
    no external archive. This keeps separate basins from being merged early.
    It applies while less than ``niche_fraction`` of the engine budget is
    spent; after that the usual global mutation takes over.
    """

    pop_size: int = 200
    cr_init: float = 0.9
    f_init: float = 0.5
    history_size: int = 100
    p_best: float = 0.11
    n_min: int = 5
    archive_rate: float = 1.0
    neighborhood: int | None = None
    niche_fraction: float = 1.0

    def __post_init__(self):
        if self.pop_size < 4:
            raise EngineTooSmall(f"population size {self.pop_size} < 4")
        if not self.n_min < self.pop_size:
            raise ValueError(f"n_min ({self.n_min}) must be smaller than pop_size ({self.pop_size})")
        if self.n_min < 4:
            raise EngineTooSmall(f"n_min {self.n_min} < 4")
        if self.history_size < 1:
            raise ValueError("history_size must be >= 1")
        if not 0.0 < self.p_best <= 1.0:
            raise ValueError("p_best must be in (0, 1]")
        if self.neighborhood is not None and self.neighborhood < 4:
            raise EngineTooSmall(f"neighborhood {self.neighborhood} < 4")
        if not 0.0 <= self.niche_fraction <= 1.0:
            raise ValueError("niche_fraction must be in [0, 1]")


@dataclass
class SuccessHistory:
    """Cyclic memory of successful CR / F means. NaN in ``m_cr`` is the terminal value."""

    m_cr: np.ndarray
    m_f: np.ndarray
    k: int = 0

    @classmethod
    def initial(cls, size: int, cr: float = 0.9, f: float = 0.5) -> "SuccessHistory":
        return cls(np.full(size, float(cr)), np.full(size, float(f)), 0)

    @property
    def size(self) -> int:
        return len(self.m_cr)

    def copy(self) -> "SuccessHistory":
        return SuccessHistory(self.m_cr.copy(), self.m_f.copy(), self.k)


def sample_parameters(history: SuccessHistory, rng: np.random.Generator, f_default: float = 0.5) -> tuple[float, float]:
    """Draw (CR, F) around a random memory slot.

    CR ~ N(M_CR, 0.1) clipped to [0, 1] (0 if the slot is terminal);
    F ~ Cauchy(M_F, 0.1) redrawn while <= 0 and capped at 1. A slot whose
    M_F is undefined falls back to ``f_default``.
    """
    r = int(rng.integers(history.size))
    mu_cr = history.m_cr[r]
    if math.isnan(mu_cr):
        cr = 0.0
    else:
        cr = min(1.0, max(0.0, mu_cr + 0.1 * rng.standard_normal()))
    mu_f = history.m_f[r]
    if math.isnan(mu_f):
        mu_f = f_default
    f = 0.0
    while f <= 0.0:
        f = mu_f + 0.1 * rng.standard_cauchy()
    return cr, min(f, 1.0)


class ExternalArchive:
    """Parents displaced by better trials; random eviction above capacity."""

    def __init__(self, dim: int, capacity: int):
        self.dim = dim
        self.capacity = int(capacity)
        self.members: list[np.ndarray] = []

    def __len__(self):
        return len(self.members)

    def add(self, v: np.ndarray, rng: np.random.Generator) -> None:
        self.members.append(np.array(v, dtype=float))
        self._trim(rng)

    def resize(self, capacity: int, rng: np.random.Generator) -> None:
        self.capacity = int(capacity)
        self._trim(rng)

    def _trim(self, rng):
        while len(self.members) > self.capacity:
            self.members.pop(int(rng.integers(len(self.members))))


def pick_indices(
    n: int, n_archive: int, i: int, n_top: int, order: np.ndarray, rng: np.random.Generator
) -> tuple[int, int, int]:
    """(pbest, r1, r2) for member ``i``.

    ``pbest`` is uniform over the first ``n_top`` entries of ``order``;
    ``r1`` is uniform over the population minus ``i``; ``r2`` is uniform over
    population plus archive minus ``{i, r1}``. Indices ``>= n`` address the
    archive.
    """
    if n < 4:
        raise EngineTooSmall(f"population of {n} is too small for current-to-pbest/1")
    pbest = int(order[int(rng.integers(n_top))])
    r1 = int(rng.integers(n - 1))
    if r1 >= i:
        r1 += 1
    lo, hi = min(i, r1), max(i, r1)
    r2 = int(rng.integers(n + n_archive - 2))
    if r2 >= lo:
        r2 += 1
    if r2 >= hi:
        r2 += 1
    return pbest, r1, r2


def mutate_current_to_pbest(
    space: ParameterSpace,
    X: np.ndarray,
    f: np.ndarray,
    archive: ExternalArchive,
    i: int,
    F: float,
    p_best: float,
    rng: np.random.Generator,
    order: np.ndarray | None = None,
) -> np.ndarray:
    """current-to-pbest/1 donor for member ``i``, repaired against its parent.

    ``x_i + F (x_pbest - x_i) + F (x_r1 - x_r2)`` with indices from
    :func:`pick_indices`. ``order`` is the loss ranking of the population and
    may be passed in to avoid re-sorting.
    """
    n = len(X)
    if n < 4:
        raise EngineTooSmall(f"population of {n} is too small for current-to-pbest/1")
    if order is None:
        order = np.argsort(f, kind="stable")
    n_top = max(1, math.ceil(p_best * n))
    pbest, r1, r2 = pick_indices(n, len(archive), i, n_top, order, rng)
    x_r2 = X[r2] if r2 < n else archive.members[r2 - n]
    x_i = X[i]
    donor = x_i + F * (X[pbest] - x_i) + F * (X[r1] - x_r2)
    return clamp_to_bounds(space, donor, parent=x_i)


def crossover_binomial(parent: np.ndarray, donor: np.ndarray, CR: float, rng: np.random.Generator) -> np.ndarray:
    d = len(parent)
    j_rand = int(rng.integers(d))
    take = rng.random(d) < CR
    take[j_rand] = True
    return np.where(take, donor, parent)


@dataclass
class EngineState:
    X: np.ndarray
    f: np.ndarray
    history: SuccessHistory
    archive: ExternalArchive
    generation: int = 0


@dataclass
class GenerationOutcome:
    processed: int
    successes: int
    complete: bool


def _weights(delta: np.ndarray) -> np.ndarray:
    if np.isinf(delta).any():
        w = np.isinf(delta).astype(float)
    else:
        w = delta
    return w / w.sum()


def shade_generation(
    state: EngineState,
    objective: Objective,
    config: EngineConfig,
    rng: np.random.Generator,
    *,
    executor=None,
    limit: int | None = None,
    lshade: bool = False,
) -> GenerationOutcome:
    """One SHADE sweep over the population, updating ``state`` in place.

    Trials are generated sequentially from ``rng`` and then evaluated as one
    batch; replacement is applied in member order afterwards. If the budget
    runs out mid-sweep the evaluated prefix is still applied.
    """
    X, f = state.X, state.f
    n, dim = X.shape
    m = config.neighborhood
    local = m is not None and m < n
    if local:
        neighbors = nearest_neighbors(X / objective.space.free_range, m)
        empty = ExternalArchive(dim, 0)
    else:
        order = np.argsort(f, kind="stable")
    trials = np.empty_like(X)
    crs = np.empty(n)
    fs = np.empty(n)
    for i in range(n):
        cr, F = sample_parameters(state.history, rng, config.f_init)
        if local:
            nb = neighbors[i]
            donor = mutate_current_to_pbest(objective.space, X[nb], f[nb], empty, 0, F, config.p_best, rng)
        else:
            donor = mutate_current_to_pbest(objective.space, X, f, state.archive, i, F, config.p_best, rng, order)
        trials[i] = crossover_binomial(X[i], donor, cr, rng)
        crs[i], fs[i] = cr, F

    losses, processed = objective.evaluate_many(trials, executor, limit=limit)

    s_cr, s_f, s_delta = [], [], []
    for i in range(processed):
        if losses[i] <= f[i]:
            if losses[i] < f[i]:
                s_cr.append(crs[i])
                s_f.append(fs[i])
                s_delta.append(f[i] - losses[i])
                state.archive.add(X[i], rng)
            X[i] = trials[i]
            f[i] = losses[i]

    update_history(state.history, s_cr, s_f, s_delta, lshade)
    state.generation += 1
    return GenerationOutcome(processed, len(s_cr), processed == n)


def update_history(hist: SuccessHistory, s_cr, s_f, s_delta, lshade: bool = False) -> None:
    """Write the weighted means of one generation's successes into slot ``k``.

    M_CR gets the Δloss-weighted arithmetic mean, M_F the weighted Lehmer
    mean. Without successes the memory is left alone. For L-SHADE a slot
    becomes terminal (NaN) once it is terminal or all successful CRs are 0.
    """
    if len(s_cr) == 0:
        return
    w = _weights(np.asarray(s_delta, dtype=float))
    s_cr_arr, s_f_arr = np.asarray(s_cr, dtype=float), np.asarray(s_f, dtype=float)
    if lshade and (math.isnan(hist.m_cr[hist.k]) or s_cr_arr.max() == 0.0):
        hist.m_cr[hist.k] = math.nan
    else:
        hist.m_cr[hist.k] = float(np.sum(w * s_cr_arr))
    hist.m_f[hist.k] = float(np.sum(w * s_f_arr**2) / np.sum(w * s_f_arr))
    hist.k = (hist.k + 1) % hist.size


def nearest_neighbors(Z: np.ndarray, m: int) -> np.ndarray:
    """Row ``i`` lists ``i`` followed by its ``m - 1`` nearest rows of ``Z``."""
    sq = np.sum(Z * Z, axis=1)
    dist = sq[:, None] + sq[None, :] - 2.0 * (Z @ Z.T)
    np.fill_diagonal(dist, -np.inf)
    idx = np.argsort(dist, axis=1, kind="stable")[:, :m]
    return idx


def lshade_population_size(evals_used: int, max_fun_evals: int, n_init: int, n_min: int) -> int:
    """Linear population size reduction target (round half to even)."""
    if max_fun_evals <= 0:
        return n_min
    progress = min(1.0, max(0.0, evals_used / max_fun_evals))
    return int(round(n_init + (n_min - n_init) * progress))


# -- result archive ---------------------------------------------------------


def total_order(X: np.ndarray, f: np.ndarray) -> np.ndarray:
    """Indices sorting by loss, ties broken lexicographically on the vector."""
    if len(f) == 0:
        return np.zeros(0, dtype=int)
    keys = [X[:, k] for k in range(X.shape[1] - 1, -1, -1)] + [f]
    return np.lexsort(keys)


@dataclass
class SolutionArchive:
    """Size-capped set of good and mutually distant solutions.

    Distances are Euclidean in bounds-normalised coordinates (``scale`` is
    the bound range per free parameter).
    """

    capacity: int
    scale: np.ndarray
    X: np.ndarray = field(default=None)
    f: np.ndarray = field(default=None)

    def __post_init__(self):
        self.scale = np.asarray(self.scale, dtype=float)
        if self.X is None:
            self.X = np.zeros((0, len(self.scale)))
        if self.f is None:
            self.f = np.zeros(0)

    def __len__(self):
        return len(self.f)

    @property
    def best_loss(self) -> float:
        return float(self.f.min()) if len(self.f) else INF

    def sorted(self) -> "SolutionArchive":
        idx = total_order(self.X, self.f)
        return SolutionArchive(self.capacity, self.scale, self.X[idx].copy(), self.f[idx].copy())


def update_result_archive(archive: SolutionArchive, X, f) -> SolutionArchive:
    """Merge candidates into the archive, thinning crowded pairs if over capacity.

    While too large, the closest pair (normalised distance) is found and its
    worse member dropped. The overall best member is never dropped; on equal
    loss the later member in the total order goes.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    f = np.asarray(f, dtype=float).reshape(-1)
    allX = np.vstack([archive.X, X]) if len(X) else archive.X.copy()
    allf = np.concatenate([archive.f, f]) if len(f) else archive.f.copy()
    order = total_order(allX, allf)
    allX, allf = allX[order], allf[order]
    n = len(allf)
    if n <= archive.capacity:
        return SolutionArchive(archive.capacity, archive.scale, allX, allf)

    Z = allX / archive.scale
    sq = np.sum(Z * Z, axis=1)
    dist = sq[:, None] + sq[None, :] - 2.0 * (Z @ Z.T)
    np.maximum(dist, 0.0, out=dist)
    # exact zeros for identical rows regardless of rounding in the expansion
    diff_zero = np.all(Z[:, None, :] == Z[None, :, :], axis=2)
    dist[diff_zero] = 0.0
    np.fill_diagonal(dist, np.inf)
    alive = np.ones(n, dtype=bool)
    # after sorting, row 0 is the protected best member and rank == index
    for _ in range(n - archive.capacity):
        a, b = np.unravel_index(int(np.argmin(dist)), dist.shape)
        drop = max(a, b)
        alive[drop] = False
        dist[drop, :] = np.inf
        dist[:, drop] = np.inf
    return SolutionArchive(archive.capacity, archive.scale, allX[alive], allf[alive])


# -- engine driver ----------------------------------------------------------


@dataclass
class EngineResult:
    X: np.ndarray
    f: np.ndarray
    archive: SolutionArchive
    history: SuccessHistory
    generations: int
    evals_used: int


def run_engine(
    objective: Objective,
    X0: np.ndarray,
    config: EngineConfig,
    rng: np.random.Generator,
    budget: int,
    *,
    lshade: bool = False,
    archive_capacity: int | None = None,
    executor=None,
    should_stop: Callable[[], bool] | None = None,
    trace: Callable[[dict], None] | None = None,
    progress: Callable[[int], float] | None = None,
) -> EngineResult:
    """Run SHADE (or L-SHADE) from population ``X0`` for ``budget`` evaluations.

    ``progress(evals_used)`` maps budget use to [0, 1] for the population
    size schedule; by default it is ``evals_used / budget``. The result
    archive receives members retired by the size reduction and finally the
    surviving population.
    """
    counter = objective.counter
    start = counter.count
    X = np.array(X0, dtype=float)
    n_init = len(X)
    dim = X.shape[1]
    if n_init < 4:
        raise EngineTooSmall(f"population of {n_init} is too small")
    capacity = archive_capacity if archive_capacity is not None else n_init
    result = SolutionArchive(capacity, objective.space.free_range)

    f, _ = objective.evaluate_many(X, executor, limit=budget)
    state = EngineState(
        X,
        f,
        SuccessHistory.initial(config.history_size, config.cr_init, config.f_init),
        ExternalArchive(dim, round(config.archive_rate * n_init)),
    )

    def used() -> int:
        return counter.count - start

    def frac(u: int) -> float:
        if progress is not None:
            return progress(u)
        return u / budget if budget > 0 else 1.0

    def emit():
        if trace is not None:
            finite = state.f[np.isfinite(state.f)]
            trace(
                {
                    "generation": state.generation,
                    "evals": counter.count,
                    "best": float(state.f.min()),
                    "mean": float(finite.mean()) if len(finite) else None,
                    "n": len(state.f),
                    "m_cr": [None if math.isnan(v) else float(v) for v in state.history.m_cr],
                    "m_f": [None if math.isnan(v) else float(v) for v in state.history.m_f],
                }
            )

    global_config = dataclasses.replace(config, neighborhood=None)
    emit()
    while True:
        remaining = budget - used()
        if remaining <= 0 or counter.exhausted():
            break
        if should_stop is not None and should_stop():
            break
        cfg = config if frac(used()) < config.niche_fraction else global_config
        shade_generation(state, objective, cfg, rng, executor=executor, limit=remaining, lshade=lshade)
        if lshade:
            target = int(round(n_init + (config.n_min - n_init) * min(1.0, frac(used()))))
            if target < len(state.f):
                order = total_order(state.X, state.f)
                keep = np.sort(order[:target])
                gone = np.setdiff1d(np.arange(len(state.f)), keep)
                result = update_result_archive(result, state.X[gone], state.f[gone])
                state.X = state.X[keep]
                state.f = state.f[keep]
                state.archive.resize(round(config.archive_rate * target), rng)
        emit()

    result = update_result_archive(result, state.X, state.f)
    return EngineResult(state.X, state.f, result, state.history, state.generation, used())
