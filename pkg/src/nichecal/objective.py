"""Calibration problem definition: parameter space, observations and model contract."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np


class ProblemError(ValueError):
    """Invalid problem definition (bounds, datasets, shapes)."""


class DimensionMismatch(ProblemError):
    pass


class FilterRejection(Exception):
    """The feasibility filter refused a parameter vector before the model ran."""


class PredictionFailure(Exception):
    """The model ran but produced unusable (non-finite or mis-shaped) output."""


def _as_float_array(values, name: str) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.ndim != 1:
        raise ProblemError(f"{name} must be one-dimensional")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ParameterSpace:
    """Named parameters with box bounds and a free/fixed mask.

    ``initial`` is the full reference vector: fixed slots are taken from it,
    free slots are the starting guess for the calibration.
    """

    names: tuple[str, ...]
    lower: np.ndarray
    upper: np.ndarray
    free_mask: np.ndarray
    initial: np.ndarray

    def __init__(self, names, lower, upper, free_mask=None, initial=None):
        names = tuple(str(n) for n in names)
        lower = _as_float_array(lower, "lower")
        upper = _as_float_array(upper, "upper")
        if free_mask is None:
            free_mask = np.ones(len(names), dtype=bool)
        free_mask = np.array(free_mask, dtype=bool)
        free_mask.setflags(write=False)
        if initial is None:
            initial = (lower + upper) / 2.0
        initial = _as_float_array(initial, "initial")

        n = len(names)
        if not (len(lower) == len(upper) == len(free_mask) == len(initial) == n):
            raise ProblemError("names, lower, upper, free_mask and initial must have equal length")
        if len(set(names)) != n:
            raise ProblemError(f"parameter names must be unique: {names}")
        if not free_mask.any():
            raise ProblemError("at least one parameter must be free")
        bad = [names[k] for k in np.flatnonzero(free_mask) if not lower[k] < upper[k]]
        if bad:
            raise ProblemError(f"lower < upper violated for free parameters {bad}")

        object.__setattr__(self, "names", names)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "free_mask", free_mask)
        object.__setattr__(self, "initial", initial)

    @property
    def dim(self) -> int:
        return int(self.free_mask.sum())

    @property
    def free_names(self) -> tuple[str, ...]:
        return tuple(n for n, f in zip(self.names, self.free_mask) if f)

    @property
    def free_lower(self) -> np.ndarray:
        return self.lower[self.free_mask]

    @property
    def free_upper(self) -> np.ndarray:
        return self.upper[self.free_mask]

    @property
    def free_range(self) -> np.ndarray:
        return self.free_upper - self.free_lower

    @property
    def fixed_values(self) -> np.ndarray:
        return self.initial[~self.free_mask]

    @property
    def initial_free(self) -> np.ndarray:
        return self.initial[self.free_mask].copy()

    def normalize(self, v: np.ndarray) -> np.ndarray:
        """Map free-parameter vectors into the unit box."""
        return (np.asarray(v, dtype=float) - self.free_lower) / self.free_range

    def contains(self, v: np.ndarray) -> bool:
        v = np.asarray(v, dtype=float)
        return bool(np.all(v >= self.free_lower) and np.all(v <= self.free_upper))

    def replace(self, *, lower=None, upper=None, free_mask=None, initial=None) -> "ParameterSpace":
        return ParameterSpace(
            self.names,
            self.lower if lower is None else lower,
            self.upper if upper is None else upper,
            self.free_mask if free_mask is None else free_mask,
            self.initial if initial is None else initial,
        )

    def __eq__(self, other):
        if not isinstance(other, ParameterSpace):
            return NotImplemented
        return (
            self.names == other.names
            and np.array_equal(self.lower, other.lower)
            and np.array_equal(self.upper, other.upper)
            and np.array_equal(self.free_mask, other.free_mask)
            and np.array_equal(self.initial, other.initial)
        )

    __hash__ = None


def assemble_full_vector(space: ParameterSpace, free_values) -> np.ndarray:
    """Slot ``free_values`` into the free positions, fixed values elsewhere."""
    free_values = np.asarray(free_values, dtype=float)
    if free_values.shape != (space.dim,):
        raise DimensionMismatch(f"expected {space.dim} free values, got shape {free_values.shape}")
    full = space.initial.copy()
    full[space.free_mask] = free_values
    return full


def clamp_to_bounds(space: ParameterSpace, v, parent=None) -> np.ndarray:
    """Repair out-of-bounds coordinates of a free-parameter vector.

    With a ``parent`` the violated coordinate is moved halfway between the
    parent and the violated bound (the usual SHADE repair). Without one the
    coordinate is projected onto the bound.
    """
    v = np.array(v, dtype=float)
    lo, hi = space.free_lower, space.free_upper
    below = v < lo
    above = v > hi
    if not (below.any() or above.any()):
        return v
    if parent is None:
        return np.clip(v, lo, hi)
    parent = np.asarray(parent, dtype=float)
    v[below] = (lo[below] + parent[below]) / 2.0
    v[above] = (hi[above] + parent[above]) / 2.0
    return v


@dataclass(frozen=True, eq=False)
class Dataset:
    """One observation set: a single scalar (zero-variate) or a series (uni-variate)."""

    id: str
    d: np.ndarray
    w: np.ndarray
    x: np.ndarray | None = None

    def __init__(self, id: str, d, w=None, x=None):
        d = np.atleast_1d(np.array(d, dtype=float))
        if d.ndim != 1 or len(d) < 1:
            raise ProblemError(f"dataset {id!r}: observations must be a non-empty vector")
        n = len(d)
        if w is None:
            w = np.full(n, 1.0 / n)
        w = np.atleast_1d(np.array(w, dtype=float))
        if w.shape != d.shape:
            raise ProblemError(f"dataset {id!r}: {len(w)} weights for {n} observations")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ProblemError(f"dataset {id!r}: weights must be finite and non-negative")
        if not np.all(np.isfinite(d)):
            raise ProblemError(f"dataset {id!r}: observations must be finite")
        if x is not None:
            x = np.array(x, dtype=float)
            if x.shape != d.shape:
                raise ProblemError(f"dataset {id!r}: x and d lengths differ")
            if n > 1 and np.any(np.diff(x) <= 0):
                raise ProblemError(f"dataset {id!r}: x must be strictly increasing")
            x.setflags(write=False)
        elif n != 1:
            raise ProblemError(f"dataset {id!r}: a zero-variate dataset holds exactly one value")
        d.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "id", str(id))
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "x", x)

    @property
    def kind(self) -> str:
        return "zero-variate" if self.x is None else "uni-variate"

    @property
    def n(self) -> int:
        return len(self.d)

    @property
    def weight(self) -> float:
        return float(self.w.sum())

    def with_weights(self, w) -> "Dataset":
        return Dataset(self.id, self.d, w, self.x)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        same_x = (self.x is None and other.x is None) or (
            self.x is not None and other.x is not None and np.array_equal(self.x, other.x)
        )
        return self.id == other.id and same_x and np.array_equal(self.d, other.d) and np.array_equal(self.w, other.w)

    __hash__ = None


@dataclass(frozen=True)
class DatasetCollection:
    datasets: tuple[Dataset, ...]

    def __init__(self, datasets: Sequence[Dataset]):
        datasets = tuple(datasets)
        ids = [ds.id for ds in datasets]
        if len(set(ids)) != len(ids):
            raise ProblemError(f"dataset ids must be unique: {ids}")
        object.__setattr__(self, "datasets", datasets)

    def __iter__(self):
        return iter(self.datasets)

    def __len__(self):
        return len(self.datasets)

    def __getitem__(self, key):
        if isinstance(key, str):
            for ds in self.datasets:
                if ds.id == key:
                    return ds
            raise KeyError(key)
        return self.datasets[key]

    @property
    def n(self) -> int:
        return len(self.datasets)

    @property
    def active(self) -> list[int]:
        """Indices of datasets with positive total weight."""
        return [i for i, ds in enumerate(self.datasets) if ds.weight > 0]

    def check_well_posed(self) -> None:
        if not self.active:
            raise ProblemError("no dataset has positive total weight; the problem is ill-posed")


class PredictionModel(Protocol):
    """Deterministic map from a full parameter vector to per-dataset predictions.

    Implementations must be pure so they can be evaluated from several
    workers at once.
    """

    id: str

    def predict(self, params: np.ndarray, data: DatasetCollection) -> list[np.ndarray]: ...

    def feasible(self, params: np.ndarray) -> bool: ...

    def constants(self) -> dict: ...


def predict(model: PredictionModel, space: ParameterSpace, v, data: DatasetCollection) -> list[np.ndarray]:
    """Run ``model`` on free vector ``v``.

    Raises :class:`FilterRejection` when the model's feasibility filter refuses
    the vector and :class:`PredictionFailure` for non-finite or mis-shaped
    output. Never returns partial predictions.
    """
    full = assemble_full_vector(space, v)
    if not model.feasible(full):
        raise FilterRejection(f"filter rejected parameters {full.tolist()}")
    return run_model(model, full, data)


def run_model(model: PredictionModel, full: np.ndarray, data: DatasetCollection) -> list[np.ndarray]:
    try:
        with np.errstate(all="ignore"):
            raw = model.predict(full, data)
    except (ArithmeticError, ValueError) as exc:
        raise PredictionFailure(str(exc)) from exc
    if len(raw) != len(data):
        raise PredictionFailure(f"model returned {len(raw)} prediction sets for {len(data)} datasets")
    out = []
    for ds, p in zip(data.datasets, raw):
        p = np.atleast_1d(np.asarray(p, dtype=float))
        if p.shape != ds.d.shape:
            raise PredictionFailure(f"dataset {ds.id!r}: {p.shape[0]} predictions for {ds.n} points")
        if not np.all(np.isfinite(p)):
            raise PredictionFailure(f"dataset {ds.id!r}: non-finite prediction")
        out.append(p)
    return out


@dataclass(frozen=True, eq=False)
class Problem:
    """Everything a calibration run needs besides its options."""

    space: ParameterSpace
    data: DatasetCollection
    model: PredictionModel
    name: str = "problem"
    meta: dict = field(default_factory=dict)

    def __eq__(self, other):
        if not isinstance(other, Problem):
            return NotImplemented
        return (
            self.name == other.name
            and self.space == other.space
            and self.data == other.data
            and self.model.id == other.model.id
            and self.model.constants() == other.model.constants()
        )

    __hash__ = None

    def with_space(self, space: ParameterSpace) -> "Problem":
        return Problem(space, self.data, self.model, self.name, dict(self.meta))

