"""Goodness-of-fit metrics, the calibration loss and the evaluation budget.

Conventions for a collection of datasets ``i`` with points ``j``:

* ``w_i = sum_j w_ij``; only datasets with ``w_i > 0`` take part, ``n'`` is
  their count.
* ``d_i`` and ``p_i`` are the plain (unweighted) means of the observations
  and predictions of dataset ``i``.

``mre``  = 1/n' sum_i sum_j (w_ij / w_i) |p_ij - d_ij| / |d_i|

``smse`` = 1/n' sum_i sum_j (w_ij / w_i) (p_ij - d_ij)^2 / (p_i^2 + d_i^2)

``primary_loss`` = sum_i sum_j w_ij (p_ij - d_ij)^2 / (d_i^2 + p_i^2)

The last one is what the engines minimise. With default weights and a single
dataset it coincides with ``smse``.
"""

from __future__ import annotations

import math
import threading
from typing import Callable, Sequence

import numpy as np

from .objective import (
    Dataset,
    DatasetCollection,
    FilterRejection,
    ParameterSpace,
    PredictionFailure,
    PredictionModel,
    assemble_full_vector,
    predict,
    run_model,
)

INF = math.inf


class LossDomainError(ZeroDivisionError):
    """A metric denominator vanished for a positively weighted dataset."""


class BudgetExhausted(Exception):
    """No evaluations left in the run budget."""


def _check_aligned(data: DatasetCollection, predictions: Sequence) -> list[np.ndarray]:
    if len(predictions) != len(data):
        raise ValueError(f"{len(predictions)} prediction sets for {len(data)} datasets")
    out = []
    for ds, p in zip(data.datasets, predictions):
        p = np.atleast_1d(np.asarray(p, dtype=float))
        if p.shape != ds.d.shape:
            raise ValueError(f"dataset {ds.id!r}: prediction shape {p.shape} != {ds.d.shape}")
        out.append(p)
    return out


def mre(data: DatasetCollection, predictions) -> float:
    """Weighted mean relative error (additive, unbounded above)."""
    preds = _check_aligned(data, predictions)
    active = data.active
    if not active:
        raise ValueError("no dataset has positive weight")
    total = 0.0
    for i in active:
        ds, p = data.datasets[i], preds[i]
        d_mean = abs(float(ds.d.mean()))
        if d_mean == 0.0:
            raise LossDomainError(f"dataset {ds.id!r}: mean observation is zero, relative error undefined")
        total += float(np.sum(ds.w * np.abs(p - ds.d))) / ds.weight / d_mean
    return total / len(active)


def smse(data: DatasetCollection, predictions) -> float:
    """Weighted symmetric mean squared error, bounded in [0, 1]."""
    preds = _check_aligned(data, predictions)
    active = data.active
    if not active:
        raise ValueError("no dataset has positive weight")
    total = 0.0
    for i in active:
        ds, p = data.datasets[i], preds[i]
        denom = float(p.mean()) ** 2 + float(ds.d.mean()) ** 2
        if denom == 0.0:
            raise LossDomainError(f"dataset {ds.id!r}: observations and predictions both average to zero")
        total += float(np.sum(ds.w * (p - ds.d) ** 2)) / ds.weight / denom
    return total / len(active)


def primary_loss(data: DatasetCollection, predictions) -> float:
    """Loss minimised during calibration; ``inf`` when there are no predictions."""
    if predictions is None:
        return INF
    preds = _check_aligned(data, predictions)
    return _primary(data.datasets, preds, data.active)


def _primary(datasets, preds, active) -> float:
    total = 0.0
    for i in active:
        ds, p = datasets[i], preds[i]
        d_mean = ds.d.mean()
        p_mean = p.mean()
        denom = d_mean * d_mean + p_mean * p_mean
        if denom == 0.0:
            raise LossDomainError(f"dataset {ds.id!r}: observations and predictions both average to zero")
        r = p - ds.d
        total += float(np.dot(ds.w, r * r)) / denom
    return total


class EvalCounter:
    """Thread-safe count of loss evaluations against a hard limit."""

    def __init__(self, limit: int):
        if limit < 0:
            raise ValueError("limit must be non-negative")
        self.limit = int(limit)
        self._count = 0
        self._lock = threading.Lock()

    @property
    def count(self) -> int:
        return self._count

    @property
    def remaining(self) -> int:
        return self.limit - self._count

    def exhausted(self) -> bool:
        return self._count >= self.limit

    def try_reserve(self) -> bool:
        with self._lock:
            if self._count >= self.limit:
                return False
            self._count += 1
            return True

    def reserve(self) -> None:
        if not self.try_reserve():
            raise BudgetExhausted(f"evaluation budget of {self.limit} exhausted")

    def __repr__(self):
        return f"EvalCounter({self._count}/{self.limit})"


def evaluate(counter: EvalCounter, model: PredictionModel, space: ParameterSpace, v, data: DatasetCollection):
    """One budgeted loss evaluation.

    Returns ``(loss, predictions)``. Filter rejections give ``(inf, None)``
    without touching the counter; prediction failures give ``(inf, None)``
    and do consume one evaluation.
    """
    if counter.exhausted():
        raise BudgetExhausted(f"evaluation budget of {counter.limit} exhausted")
    try:
        full = assemble_full_vector(space, v)
        if not model.feasible(full):
            raise FilterRejection
    except FilterRejection:
        return INF, None
    counter.reserve()
    try:
        preds = run_model(model, full, data)
    except PredictionFailure:
        return INF, None
    return primary_loss(data, preds), preds


class Objective:
    """Budgeted loss of a calibration problem over free-parameter vectors.

    The engines only talk to this class: ``feasible`` (free, no budget),
    ``evaluate`` for a single vector and ``evaluate_many`` for a batch whose
    budget is reserved in order before any model runs, so results do not
    depend on how many workers run the batch.
    """

    def __init__(self, model, space: ParameterSpace, data: DatasetCollection, counter: EvalCounter):
        data.check_well_posed()
        self.model = model
        self.space = space
        self.data = data
        self.counter = counter
        self._template = space.initial.copy()
        self._free = np.flatnonzero(space.free_mask)
        self._datasets = data.datasets
        self._active = data.active

    def full(self, v) -> np.ndarray:
        x = self._template.copy()
        x[self._free] = v
        return x

    def feasible(self, v) -> bool:
        return bool(self.model.feasible(self.full(v)))

    def predictions(self, v):
        """Unbudgeted model run, used for reporting."""
        return predict(self.model, self.space, v, self.data)

    def _loss_of_full(self, full) -> float:
        try:
            with np.errstate(all="ignore"):
                raw = self.model.predict(full, self.data)
        except (ArithmeticError, ValueError):
            return INF
        preds = []
        for ds, p in zip(self._datasets, raw):
            p = np.asarray(p, dtype=float)
            if p.shape != ds.d.shape or not np.isfinite(p).all():
                return INF
            preds.append(p)
        if len(preds) != len(self._datasets):
            return INF
        return _primary(self._datasets, preds, self._active)

    def evaluate(self, v) -> float:
        """Loss of ``v``; ``inf`` if filtered or failed. Raises BudgetExhausted."""
        if self.counter.exhausted():
            raise BudgetExhausted(f"evaluation budget of {self.counter.limit} exhausted")
        full = self.full(v)
        if not self.model.feasible(full):
            return INF
        self.counter.reserve()
        return self._loss_of_full(full)

    def evaluate_many(self, vectors, executor=None, limit: int | None = None) -> tuple[np.ndarray, int]:
        """Evaluate rows of ``vectors`` in order until the budget runs out.

        At most ``limit`` evaluations are spent when given. Returns the losses
        and the number of rows processed; rows past that index were not
        evaluated (their loss is left at ``inf``).
        """
        vectors = np.asarray(vectors, dtype=float)
        losses = np.full(len(vectors), INF)
        jobs: list[tuple[int, np.ndarray]] = []
        processed = 0
        for k, v in enumerate(vectors):
            full = self.full(v)
            if not self.model.feasible(full):
                processed = k + 1
                continue
            if limit is not None and len(jobs) >= limit:
                break
            if not self.counter.try_reserve():
                break
            jobs.append((k, full))
            processed = k + 1
        if executor is None or len(jobs) < 2:
            for k, full in jobs:
                losses[k] = self._loss_of_full(full)
        else:
            results = executor.map(self._loss_of_full, [full for _, full in jobs])
            for (k, _), f in zip(jobs, results):
                losses[k] = f
        return losses, processed


class _FunctionModel:
    id = "function"

    def __init__(self, fn: Callable[[np.ndarray], float]):
        self.fn = fn

    def constants(self) -> dict:
        return {}

    def feasible(self, params) -> bool:
        return True

    def predict(self, params, data):
        return [np.atleast_1d(float(self.fn(params)))]


class FunctionObjective(Objective):
    """Budgeted objective wrapping a plain ``f(x) -> float`` for testing engines."""

    def __init__(self, fn: Callable[[np.ndarray], float], lower, upper, counter: EvalCounter):
        lower = np.asarray(lower, dtype=float)
        space = ParameterSpace([f"x{k}" for k in range(len(lower))], lower, upper, initial=lower)
        super().__init__(_FunctionModel(fn), space, DatasetCollection([Dataset("f", [0.0])]), counter)
        self.fn = fn

    def _loss_of_full(self, full) -> float:
        value = float(self.fn(full))
        return value if math.isfinite(value) else INF
