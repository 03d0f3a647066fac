"""Chart data (heatmaps, scatter variants, prediction curves) and SVG/CSV export.

Chart data is computed by pure functions over a :class:`SolutionSet`;
:func:`render` turns it into a file. SVG output is byte-stable: the
matplotlib hash salt is pinned and no date is embedded.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import numpy as np  # noqa: E402
from matplotlib.figure import Figure  # noqa: E402

from .loss import mre, smse  # noqa: E402
from .objective import FilterRejection, PredictionFailure, Problem, predict  # noqa: E402
from .orchestrator import SolutionSet  # noqa: E402

SCATTER_MODES = ("plain", "weighted", "density")
HEATMAP_VALUES = ("count", "min_loss")
PLOT_SELECTIONS = ("basic", "best", "set", "complete")
CHART_NAMES = ("density_hm", "density_hm_scatter", "scatter", "weighted_scatter", "density_scatter", "results")
BANDWIDTH_FLOOR = 1e-3

_SVG_RC = {"svg.hashsalt": "nichecal", "svg.fonttype": "path", "path.simplify": False}


class ChartError(ValueError):
    pass


def _pair_columns(s: SolutionSet, pair) -> tuple[int, int]:
    a, b = pair
    names = list(s.par_names)
    missing = [p for p in (a, b) if p not in names]
    if missing:
        raise ChartError(f"unknown parameter(s) {missing}; valid names: {', '.join(names)}")
    if a == b:
        raise ChartError(f"a chart needs two different parameters, got {a!r} twice")
    return names.index(a), names.index(b)


def _pair_bounds(s: SolutionSet, cols) -> tuple[np.ndarray, np.ndarray]:
    space = s.problem().space
    return space.free_lower[list(cols)], space.free_upper[list(cols)]


def chart_filename(run_id: str, chart: str, pair=None, ext: str = "svg") -> str:
    """``<run-id>_<chart>_<A>-<B>.<ext>``; the results chart uses its plot name instead of a pair."""
    if chart not in CHART_NAMES:
        raise ChartError(f"chart must be one of {CHART_NAMES}, got {chart!r}")
    suffix = f"{pair[0]}-{pair[1]}" if isinstance(pair, (tuple, list)) else str(pair)
    return f"{run_id}_{chart}_{suffix}.{ext}"


# -- heatmap ----------------------------------------------------------------


@dataclass
class Grid2D:
    """Binned view of a parameter pair over its bound box.

    ``values[i, j]`` belongs to x-bin ``i`` and y-bin ``j``. Count grids hold
    integers; min-loss grids hold NaN for empty cells.
    """

    pair: tuple[str, str]
    x_edges: np.ndarray
    y_edges: np.ndarray
    values: np.ndarray
    value: str = "count"

    @property
    def nx(self) -> int:
        return len(self.x_edges) - 1

    @property
    def ny(self) -> int:
        return len(self.y_edges) - 1


def bin_index(v: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """Lower edge inclusive bins; the top edge belongs to the last bin."""
    idx = np.searchsorted(edges, v, side="right") - 1
    return np.clip(idx, 0, len(edges) - 2)


def density_heatmap(s: SolutionSet, pair, bins=(25, 25), value: str = "count") -> Grid2D:
    if value not in HEATMAP_VALUES:
        raise ChartError(f"heatmap value must be one of {HEATMAP_VALUES}, got {value!r}")
    if np.ndim(bins) == 0:
        bins = (int(bins), int(bins))
    nx, ny = int(bins[0]), int(bins[1])
    if nx < 2 or ny < 2:
        raise ChartError(f"need at least 2 bins per axis, got {nx}x{ny}")
    cols = _pair_columns(s, pair)
    lo, hi = _pair_bounds(s, cols)
    x_edges = np.linspace(lo[0], hi[0], nx + 1)
    y_edges = np.linspace(lo[1], hi[1], ny + 1)
    X = np.asarray(s.solutions_set, dtype=float)
    ix = bin_index(X[:, cols[0]], x_edges)
    iy = bin_index(X[:, cols[1]], y_edges)
    if value == "count":
        grid = np.zeros((nx, ny), dtype=np.int64)
        np.add.at(grid, (ix, iy), 1)
    else:
        grid = np.full((nx, ny), np.inf)
        np.minimum.at(grid, (ix, iy), np.asarray(s.fun_values, dtype=float))
        grid[np.isinf(grid)] = np.nan
    return Grid2D(tuple(pair), x_edges, y_edges, grid, value)


# -- scatter ----------------------------------------------------------------


@dataclass
class ScatterSeries:
    pair: tuple[str, str]
    x: np.ndarray
    y: np.ndarray
    mode: str = "plain"
    weights: np.ndarray | None = None
    density: np.ndarray | None = None

    def __len__(self):
        return len(self.x)


def silverman_bandwidth(Z: np.ndarray) -> np.ndarray:
    """Per-axis Silverman rule ``sigma_j * (4 / (d + 2))^(1/(d+4)) * n^(-1/(d+4))``, floored."""
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    n, d = Z.shape
    sigma = Z.std(axis=0, ddof=1) if n > 1 else np.zeros(d)
    h = sigma * (4.0 / (d + 2)) ** (1.0 / (d + 4)) * n ** (-1.0 / (d + 4))
    return np.maximum(h, BANDWIDTH_FLOOR)


def kde(Z, at=None, bandwidth=None) -> np.ndarray:
    """Product Gaussian kernel density of sample ``Z`` evaluated at ``at`` (default: ``Z``)."""
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    P = Z if at is None else np.atleast_2d(np.asarray(at, dtype=float))
    h = silverman_bandwidth(Z) if bandwidth is None else np.asarray(bandwidth, dtype=float)
    u = (P[:, None, :] - Z[None, :, :]) / h
    k = np.exp(-0.5 * np.sum(u * u, axis=2))
    norm = len(Z) * np.prod(h) * (2.0 * math.pi) ** (Z.shape[1] / 2.0)
    return k.sum(axis=1) / norm


def scatter(s: SolutionSet, pair, mode: str = "plain") -> ScatterSeries:
    if mode not in SCATTER_MODES:
        raise ChartError(f"scatter mode must be one of {SCATTER_MODES}, got {mode!r}")
    cols = _pair_columns(s, pair)
    X = np.asarray(s.solutions_set, dtype=float)
    series = ScatterSeries(tuple(pair), X[:, cols[0]].copy(), X[:, cols[1]].copy(), mode)
    if mode == "weighted":
        series.weights = np.asarray(s.fun_values, dtype=float).copy()
    elif mode == "density":
        lo, hi = _pair_bounds(s, cols)
        Z = (X[:, list(cols)] - lo) / (hi - lo)
        series.density = kde(Z)
    return series


@dataclass
class HeatmapScatter:
    grid: Grid2D
    points: ScatterSeries


# -- predictions ------------------------------------------------------------


@dataclass
class PredictionSeries:
    """Observed data of one dataset and the predictions of selected solutions.

    ``curves`` rows follow ``indices`` (solution indices in the set).
    ``best_row`` is the row of the best solution, or None when it is not
    included.
    """

    id: str
    kind: str
    x: np.ndarray | None
    observed: np.ndarray
    indices: list[int]
    curves: np.ndarray
    best_row: int | None


@dataclass
class PredictionPlotData:
    selection: str
    series: list[PredictionSeries]
    failures: dict[int, str] = field(default_factory=dict)
    best_metrics: dict | None = None
    set_metrics: dict | None = None


def prediction_plot_data(s: SolutionSet, selection: str = "complete", problem: Problem | None = None) -> PredictionPlotData:
    """Prediction curves for ``basic`` (all solutions), ``best`` (the best
    solution and its MRE/SMSE), ``set`` (all solutions, the best highlighted,
    set-average MRE/SMSE) or ``complete`` (all of the above).

    Solutions whose prediction fails are listed in ``failures`` and left out.
    """
    if selection not in PLOT_SELECTIONS:
        raise ChartError(f"plot selection must be one of {PLOT_SELECTIONS}, got {selection!r}")
    if problem is None:
        problem = s.problem()
    everyone = selection != "best"
    wanted = range(s.set_size) if everyone else [0]

    preds: dict[int, list[np.ndarray]] = {}
    failures: dict[int, str] = {}
    for k in wanted:
        try:
            preds[k] = predict(problem.model, problem.space, s.solutions_set[k], problem.data)
        except (FilterRejection, PredictionFailure) as exc:
            failures[k] = str(exc) or type(exc).__name__

    indices = sorted(preds)
    series = []
    for di, ds in enumerate(problem.data):
        curves = np.array([preds[k][di] for k in indices]).reshape(len(indices), ds.n)
        best_row = indices.index(0) if (0 in preds and selection != "basic") else None
        series.append(PredictionSeries(ds.id, ds.kind, ds.x, ds.d, list(indices), curves, best_row))

    out = PredictionPlotData(selection, series, failures)
    if selection in ("best", "complete") and 0 in preds:
        out.best_metrics = {"mre": mre(problem.data, preds[0]), "smse": smse(problem.data, preds[0])}
    if selection in ("set", "complete") and indices:
        per_mre = [mre(problem.data, preds[k]) for k in indices]
        per_smse = [smse(problem.data, preds[k]) for k in indices]
        out.set_metrics = {
            "mre": math.fsum(per_mre) / len(indices),
            "smse": math.fsum(per_smse) / len(indices),
            "n": len(indices),
        }
    return out


# -- rendering --------------------------------------------------------------


def _csv_rows(data) -> tuple[list[str], list[list]]:
    if isinstance(data, HeatmapScatter):
        data = data.grid
    if isinstance(data, Grid2D):
        header = ["i", "j", "x_lo", "x_hi", "y_lo", "y_hi", data.value]
        rows = []
        for i in range(data.nx):
            for j in range(data.ny):
                v = data.values[i, j]
                cell = "" if isinstance(v, float) and math.isnan(v) else repr(v.item())
                rows.append(
                    [i, j, repr(data.x_edges[i].item()), repr(data.x_edges[i + 1].item()),
                     repr(data.y_edges[j].item()), repr(data.y_edges[j + 1].item()), cell]
                )
        return header, rows
    if isinstance(data, ScatterSeries):
        header = ["index", data.pair[0], data.pair[1]]
        extra = None
        if data.weights is not None:
            header.append("loss")
            extra = data.weights
        elif data.density is not None:
            header.append("density")
            extra = data.density
        rows = []
        for k in range(len(data)):
            row = [k, repr(data.x[k].item()), repr(data.y[k].item())]
            if extra is not None:
                row.append(repr(extra[k].item()))
            rows.append(row)
        return header, rows
    if isinstance(data, PredictionPlotData):
        header = ["dataset", "kind", "series", "x", "value"]
        rows = []
        for ser in data.series:
            xs = ser.x if ser.x is not None else [""] * len(ser.observed)
            for x, d in zip(xs, ser.observed):
                rows.append([ser.id, ser.kind, "observed", _num(x), repr(float(d))])
            for r, k in enumerate(ser.indices):
                label = f"solution_{k}" + ("_best" if r == ser.best_row else "")
                for x, p in zip(xs, ser.curves[r]):
                    rows.append([ser.id, ser.kind, label, _num(x), repr(float(p))])
        return header, rows
    raise ChartError(f"cannot render {type(data).__name__}")


def _num(x) -> str:
    return "" if x == "" else repr(float(x))


def _draw(fig: Figure, data) -> None:
    if isinstance(data, (Grid2D, HeatmapScatter)):
        grid = data.grid if isinstance(data, HeatmapScatter) else data
        ax = fig.add_subplot()
        shown = np.ma.masked_invalid(grid.values.T.astype(float))
        mesh = ax.pcolormesh(grid.x_edges, grid.y_edges, shown, cmap="viridis")
        fig.colorbar(mesh, ax=ax, label="solutions" if grid.value == "count" else "min loss")
        if isinstance(data, HeatmapScatter):
            ax.scatter(data.points.x, data.points.y, s=6, c="white", edgecolors="black", linewidths=0.3)
        ax.set_xlabel(grid.pair[0])
        ax.set_ylabel(grid.pair[1])
        ax.set_title("Solution density" if grid.value == "count" else "Minimum loss per cell")
    elif isinstance(data, ScatterSeries):
        ax = fig.add_subplot()
        if data.mode == "plain":
            ax.scatter(data.x, data.y, s=10, c="tab:blue", label="solutions")
            ax.legend(loc="best")
        else:
            c = data.weights if data.mode == "weighted" else data.density
            pts = ax.scatter(data.x, data.y, s=10, c=c, cmap="viridis")
            fig.colorbar(pts, ax=ax, label="loss" if data.mode == "weighted" else "density")
        ax.set_xlabel(data.pair[0])
        ax.set_ylabel(data.pair[1])
        ax.set_title(f"{data.mode} scatter")
    elif isinstance(data, PredictionPlotData):
        n = max(1, len(data.series))
        axes = fig.subplots(n, 1, squeeze=False)[:, 0]
        for ax, ser in zip(axes, data.series):
            xs = ser.x if ser.x is not None else np.zeros(1)
            for r in range(len(ser.indices)):
                if r != ser.best_row:
                    style = dict(color="0.7", lw=0.6) if ser.x is not None else dict(color="0.7", marker="_", ls="")
                    ax.plot(xs, ser.curves[r], **style)
            if ser.best_row is not None:
                style = dict(color="black", lw=1.5) if ser.x is not None else dict(color="black", marker="x", ls="")
                ax.plot(xs, ser.curves[ser.best_row], label="best", **style)
            ax.plot(xs, ser.observed, "o", color="tab:blue", label="observed")
            ax.set_title(ser.id)
            ax.legend(loc="best")
        notes = []
        if data.best_metrics:
            notes.append(f"best MRE {data.best_metrics['mre']:.4g}, SMSE {data.best_metrics['smse']:.4g}")
        if data.set_metrics:
            notes.append(f"set MRE {data.set_metrics['mre']:.4g}, SMSE {data.set_metrics['smse']:.4g}")
        if notes:
            fig.suptitle("; ".join(notes))
    else:
        raise ChartError(f"cannot render {type(data).__name__}")


def render(data, path, fmt: str | None = None) -> Path:
    """Write chart data as ``svg`` or ``csv`` (taken from the suffix by default)."""
    path = Path(path)
    fmt = (fmt or path.suffix.lstrip(".")).lower()
    if fmt not in ("svg", "csv"):
        raise ChartError(f"format must be svg or csv, got {fmt!r}")
    if fmt == "csv":
        header, rows = _csv_rows(data)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
        return path
    height = 4.0
    if isinstance(data, PredictionPlotData):
        height = 3.0 * max(1, len(data.series))
    with matplotlib.rc_context(_SVG_RC):
        fig = Figure(figsize=(6.0, height))
        _draw(fig, data)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
    return path
