import csv
import math
import xml.etree.ElementTree as ET

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nichecal.charts import (
    ChartError,
    HeatmapScatter,
    chart_filename,
    density_heatmap,
    kde,
    prediction_plot_data,
    render,
    scatter,
    silverman_bandwidth,
)
from nichecal.objective import Problem
from nichecal.problems import Himmelblau, himmelblau_problem

from conftest import make_set
from oracles import naive_kde


# -- heatmap ----------------------------------------------------------------


def test_identical_points_fill_one_cell():
    g = density_heatmap(make_set(np.full((7, 2), 1.3)), ("x", "y"))
    assert g.values.sum() == 7 and np.count_nonzero(g.values) == 1


def test_four_corners_two_by_two():
    corners = [[-5, -5], [-5, 5], [5, -5], [5, 5]]
    g = density_heatmap(make_set(corners), ("x", "y"), bins=(2, 2))
    np.testing.assert_array_equal(g.values, np.ones((2, 2)))
    np.testing.assert_array_equal(g.x_edges, [-5, 0, 5])


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 30), st.integers(2, 30))
def test_counts_sum_to_set_size(seed, nx, ny):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-5, 5, (int(rng.integers(1, 60)), 2))
    s = make_set(X)
    g = density_heatmap(s, ("x", "y"), bins=(nx, ny))
    assert g.values.shape == (nx, ny)
    assert g.values.sum() == s.set_size


def test_min_loss_heatmap():
    X = [[1.0, 1.0], [1.1, 1.1], [-4.0, -4.0]]
    s = make_set(X)
    g = density_heatmap(s, ("x", "y"), bins=(2, 2), value="min_loss")
    f = {tuple(v): l for v, l in zip(s.solutions_set.tolist(), s.fun_values)}
    assert g.values[1, 1] == min(f[(1.0, 1.0)], f[(1.1, 1.1)])
    assert g.values[0, 0] == f[(-4.0, -4.0)]
    assert math.isnan(g.values[0, 1]) and math.isnan(g.values[1, 0])


def test_unknown_parameter_and_value():
    s = make_set([[0.0, 0.0]])
    with pytest.raises(ChartError, match="nope"):
        density_heatmap(s, ("x", "nope"))
    with pytest.raises(ChartError):
        density_heatmap(s, ("x", "y"), value="mean")


# -- scatter and density ----------------------------------------------------


def test_scatter_modes():
    s = make_set(np.random.default_rng(0).uniform(-5, 5, (10, 2)))
    plain = scatter(s, ("x", "y"))
    assert plain.weights is None and plain.density is None and len(plain) == 10
    weighted = scatter(s, ("x", "y"), "weighted")
    np.testing.assert_array_equal(weighted.weights, s.fun_values)
    dens = scatter(s, ("y", "x"), "density")
    np.testing.assert_array_equal(dens.x, s.solutions_set[:, 1])
    assert np.all(np.isfinite(dens.density)) and np.all(dens.density > 0)
    with pytest.raises(ChartError):
        scatter(s, ("x", "y"), "hexbin")


def test_kde_matches_direct_sum():
    rng = np.random.default_rng(1)
    for _ in range(20):
        Z = rng.random((int(rng.integers(2, 40)), 2))
        at = rng.random((5, 2))
        h = silverman_bandwidth(Z)
        np.testing.assert_allclose(kde(Z, at), naive_kde(Z.tolist(), at.tolist(), h.tolist()), rtol=1e-9)


def test_silverman_bandwidth_value():
    Z = np.array([[0.0, 0.0], [1.0, 2.0], [2.0, 4.0]])
    expected = np.array([1.0, 2.0]) * (4 / 4) ** (1 / 6) * 3 ** (-1 / 6)
    np.testing.assert_allclose(silverman_bandwidth(Z), expected, rtol=1e-12)
    assert np.all(silverman_bandwidth(np.zeros((4, 2))) == 1e-3)


def test_two_clusters_denser_than_midpoint():
    rng = np.random.default_rng(2)
    Z = np.vstack([rng.normal(0.2, 0.02, (50, 2)), rng.normal(0.8, 0.02, (50, 2))])
    d = kde(Z, [[0.2, 0.2], [0.8, 0.8], [0.5, 0.5]])
    assert d[0] > d[2] and d[1] > d[2]


# -- predictions ------------------------------------------------------------


def test_best_selection(toy_set):
    data = prediction_plot_data(toy_set, "best")
    assert all(ser.curves.shape[0] == 1 and ser.best_row == 0 for ser in data.series)
    assert data.best_metrics["mre"] == pytest.approx(toy_set.results["best"]["mre"], rel=1e-12)
    assert data.set_metrics is None


def test_set_selection_averages(toy_set):
    data = prediction_plot_data(toy_set, "set")
    assert all(ser.curves.shape[0] == toy_set.set_size for ser in data.series)
    direct = sum(r["mre"] for r in toy_set.results["solutions"]) / toy_set.set_size
    assert data.set_metrics["mre"] == pytest.approx(direct, rel=1e-12)
    assert data.set_metrics["n"] == toy_set.set_size
    assert data.best_metrics is None


def test_basic_and_complete(toy_set):
    basic = prediction_plot_data(toy_set, "basic")
    assert basic.series[0].best_row is None and basic.best_metrics is None and basic.set_metrics is None
    full = prediction_plot_data(toy_set, "complete")
    assert full.best_metrics is not None and full.set_metrics is not None
    with pytest.raises(ChartError):
        prediction_plot_data(toy_set, "fancy")


class FlakyHimmelblau(Himmelblau):
    def predict(self, params, data):
        if params[0] > 4.0:
            raise ArithmeticError("overflow")
        return super().predict(params, data)


def test_failed_predictions_are_reported():
    s = make_set([[3.0, 2.0], [4.5, 0.0], [0.0, 0.0]])
    base = himmelblau_problem()
    flaky = Problem(base.space, base.data, FlakyHimmelblau(), name="himmelblau")
    data = prediction_plot_data(s, "set", problem=flaky)
    bad = [k for k, v in enumerate(s.solutions_set) if v[0] > 4.0]
    assert list(data.failures) == bad
    assert data.set_metrics["n"] == 2
    assert bad[0] not in data.series[0].indices


# -- rendering --------------------------------------------------------------


def test_heatmap_csv_shape(tmp_path):
    s = make_set(np.random.default_rng(3).uniform(-5, 5, (20, 2)))
    path = render(density_heatmap(s, ("x", "y"), bins=(4, 3)), tmp_path / "h.csv")
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["i", "j", "x_lo", "x_hi", "y_lo", "y_hi", "count"]
    assert len(rows) == 1 + 12
    assert sum(int(r[6]) for r in rows[1:]) == 20


def test_svg_is_well_formed_and_byte_stable(tmp_path, toy_set):
    s = make_set(np.random.default_rng(4).uniform(-5, 5, (30, 2)))
    charts = [
        density_heatmap(s, ("x", "y")),
        HeatmapScatter(density_heatmap(s, ("x", "y")), scatter(s, ("x", "y"))),
        scatter(s, ("x", "y"), "weighted"),
        scatter(s, ("x", "y"), "density"),
        prediction_plot_data(toy_set, "complete"),
    ]
    for k, chart in enumerate(charts):
        a = render(chart, tmp_path / f"a{k}.svg").read_bytes()
        b = render(chart, tmp_path / f"b{k}.svg").read_bytes()
        assert a == b
        assert ET.fromstring(a).tag.endswith("svg")


def test_chart_filenames():
    assert chart_filename("run1", "density_hm", ("x", "y"), "svg") == "run1_density_hm_x-y.svg"
    assert chart_filename("run1", "results", "set", "csv") == "run1_results_set.csv"
    with pytest.raises(ChartError):
        chart_filename("run1", "pie", ("x", "y"))
