import itertools
import json

import numpy as np
import pytest

from nichecal.loss import EvalCounter, Objective
from nichecal.orchestrator import (
    CalibrationOptions,
    InfeasibleSelection,
    OptionsError,
    SolutionSetError,
    calibrate,
    check_stopping,
    continue_calibration,
    initial_population,
    load_solution_set,
    save_solution_set,
    solution_set_from_dict,
)
from nichecal.problems import builtin_problem


def fake_clock(step):
    ticks = itertools.count()
    return lambda: next(ticks) * step


# -- options and stopping ---------------------------------------------------


def test_option_defaults_and_budget():
    o = CalibrationOptions()
    assert (o.method, o.num_results, o.refine_best, o.refine_prob, o.engine_fraction) == ("shade", 200, True, 0.0, 0.75)
    assert o.budget(4) == 4000
    assert CalibrationOptions(max_fun_evals=20000).budget(4) == 20000
    assert CalibrationOptions(stop_on="time", max_calibration_time=5).budget(4) is None


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(method="pso"),
        dict(refine_prob=1.5),
        dict(engine_fraction=0.0),
        dict(stop_on="time"),
        dict(num_results=3),
        dict(max_fun_evals=0),
        dict(neighborhood=2),
    ],
)
def test_invalid_options(kwargs):
    with pytest.raises(OptionsError):
        CalibrationOptions(**kwargs)


def test_options_round_trip_and_unknown_keys():
    o = CalibrationOptions(method="lshade", seed=3)
    assert CalibrationOptions.from_dict(o.to_dict()) == o
    with pytest.raises(OptionsError, match="max_evals"):
        CalibrationOptions.from_dict({"max_evals": 10})


def test_check_stopping_cases():
    opts = CalibrationOptions(max_fun_evals=10)
    c = EvalCounter(10)
    assert check_stopping(c, 0.0, opts) is None
    for _ in range(10):
        c.reserve()
    assert check_stopping(c, 0.0, opts) == "evals"
    timed = CalibrationOptions(stop_on="time", max_calibration_time=600)
    assert check_stopping(EvalCounter(10**9), 600.0, timed) == "time"
    both = CalibrationOptions(max_fun_evals=10**6, max_calibration_time=1.0)
    assert check_stopping(EvalCounter(10**6), 1.5, both) == "time"


# -- calibrate --------------------------------------------------------------


def test_nm_returns_one_solution():
    s = calibrate(builtin_problem("toy_growth"), CalibrationOptions(method="nm", max_fun_evals=20000))
    assert s.set_size == 1
    assert s.results["evaluations"] <= 20000


def test_shade_returns_num_results_sorted_and_feasible():
    p = builtin_problem("toy_growth")
    s = calibrate(p, CalibrationOptions(max_fun_evals=20000, num_results=200))
    assert s.set_size == 200
    assert list(s.fun_values) == sorted(s.fun_values)
    assert s.results["evaluations"] <= 20000
    for v in s.solutions_set:
        assert p.space.contains(v)
    assert s.par_names == p.space.free_names


def test_lshade_returns_num_results():
    s = calibrate(builtin_problem("himmelblau"), CalibrationOptions(method="lshade", max_fun_evals=4000, num_results=50))
    assert s.set_size == 50


def test_same_seed_same_bytes_serial_and_parallel():
    p = builtin_problem("multi_basin_growth")
    o = CalibrationOptions(max_fun_evals=2000, num_results=20, seed=5)
    a = calibrate(p, o).to_json()
    b = calibrate(p, o).to_json()
    c = calibrate(p, o.replace(workers=3)).to_json()
    assert a == b
    assert a == c


def test_time_cap_stops_run():
    o = CalibrationOptions(stop_on="time", max_calibration_time=2.0, num_results=20, refine_prob=1.0)
    s = calibrate(builtin_problem("toy_growth"), o, clock=fake_clock(0.001))
    assert s.results["stop_reason"] == "time"
    assert s.set_size == 20


def test_seed_centered_and_uniform_init():
    p = builtin_problem("toy_growth")
    obj = Objective(p.model, p.space, p.data, EvalCounter(10))
    X = initial_population(obj, CalibrationOptions(num_results=10), np.random.default_rng(0))
    np.testing.assert_array_equal(X[0], p.space.initial_free)
    assert X.shape == (10, 4) and all(obj.feasible(x) and p.space.contains(x) for x in X)
    U = initial_population(obj, CalibrationOptions(num_results=10, init_mode="uniform"), np.random.default_rng(0))
    assert not np.array_equal(U[0], p.space.initial_free)
    seeds = [X[3], X[5]]
    S = initial_population(obj, CalibrationOptions(num_results=10), np.random.default_rng(0), seeds)
    np.testing.assert_array_equal(S[:2], seeds)


def test_ill_posed_problem_rejected():
    p = builtin_problem("toy_growth")
    bad = type(p)(p.space, type(p.data)([ds.with_weights(ds.w * 0) for ds in p.data]), p.model)
    with pytest.raises(ValueError, match="ill-posed"):
        calibrate(bad, CalibrationOptions(max_fun_evals=100, num_results=10))


# -- continuation -----------------------------------------------------------


def test_continue_from_best_is_elitist(toy_set):
    out = continue_calibration(toy_set, "best", CalibrationOptions(max_fun_evals=1000, num_results=40, seed=1))
    assert out.fun_values[0] <= toy_set.fun_values[0]
    assert out.results["continued_from"]["selection"] == [0]


def test_continue_with_fixed_parameter(toy_set):
    value = float(toy_set.solutions_set[0][0])
    out = continue_calibration(toy_set, [0, 5, 10], CalibrationOptions(max_fun_evals=600, num_results=20), fix={"W_max": value})
    assert out.par_names == ("r", "t0", "b")
    assert all(rec["par"]["W_max"] == value for rec in out.results["solutions"])


def test_continue_rejects_excluded_selection(toy_set):
    r0 = float(toy_set.solutions_set[0][1])
    with pytest.raises(InfeasibleSelection) as err:
        continue_calibration(toy_set, "best", CalibrationOptions(max_fun_evals=600, num_results=20), bounds={"r": (r0 * 1.5, 0.1)})
    assert 0 in err.value.offenders


def test_continue_selection_out_of_range(toy_set):
    with pytest.raises(IndexError):
        continue_calibration(toy_set, [toy_set.set_size], CalibrationOptions(max_fun_evals=600, num_results=20))


# -- persistence ------------------------------------------------------------


def test_round_trip(tmp_path, toy_set):
    path = tmp_path / "s.json"
    save_solution_set(toy_set, path)
    back = load_solution_set(path)
    assert back == toy_set
    save_solution_set(back, tmp_path / "t.json")
    assert (tmp_path / "t.json").read_bytes() == path.read_bytes()


def test_mismatched_lengths_and_version(toy_set):
    d = json.loads(toy_set.to_json())
    d["fun_values"] = d["fun_values"][:-1]
    with pytest.raises(SolutionSetError, match="fun_values"):
        solution_set_from_dict(d)
    d = json.loads(toy_set.to_json())
    d["schema"] = "nichecal.solution_set/99"
    with pytest.raises(SolutionSetError, match="unsupported version"):
        solution_set_from_dict(d)


def test_out_of_bounds_solution_rejected(toy_set):
    d = json.loads(toy_set.to_json())
    d["solutions_set"][2][0] = 1e9
    with pytest.raises(SolutionSetError, match="solutions_set/2"):
        solution_set_from_dict(d)
