import math

import pytest

from roibin.errors import ConfigError, TuningError
from roibin.tuner import (
    TuneBudget,
    TuneSpace,
    TunedAllocation,
    aggregate_mode,
    load_tuning,
    save_tuning,
    tune,
)


def _space_1d(lo=1, hi=8, name="bin"):
    return TuneSpace(dims=((name, lo, hi),))


def test_singleton_space_single_eval():
    space = _space_1d(3, 3)
    calls = []

    def objective(a):
        calls.append(a)
        return 1.0

    result = tune(space, objective, seed=0)
    assert result.assignment == {"bin": 3}
    assert len(result.trials) == 1
    assert len(calls) == 3  # median of three measurements


def test_known_minimum_found_within_sqrt_budget():
    space = _space_1d(1, 8)
    budget = TuneBudget.for_space(space)
    assert budget.max_evals == 8
    result = tune(space, lambda a: abs(a["bin"] - 5), budget=budget, seed=1)
    assert result.assignment == {"bin": 5}
    assert result.objective == 0.0
    assert len(result.trials) <= budget.max_evals


def test_budget_one_returns_single_sample():
    space = _space_1d(1, 8)
    result = tune(space, lambda a: float(a["bin"]), budget=TuneBudget(1), seed=2)
    assert len(result.trials) == 1
    assert result.objective == result.trials[0].seconds


def test_budget_formula():
    space = TuneSpace(dims=(("tasks", 1, 40), ("roi", 1, 8), ("bin", 1, 8)))
    assert space.non_task_size() == 64
    assert TuneBudget.for_space(space).max_evals == 8
    tiny = TuneSpace(dims=(("roi", 1, 2),))
    assert TuneBudget.for_space(tiny).max_evals == 8  # floor of 8


def test_argmin_over_log_and_bounds():
    space = TuneSpace(dims=(("a", 1, 4), ("b", 1, 4)))

    def objective(x):
        return (x["a"] - 2) ** 2 + (x["b"] - 3) ** 2

    result = tune(space, objective, budget=TuneBudget(16), seed=3)
    assert result.assignment == {"a": 2, "b": 3}
    assert all(result.objective <= t.seconds for t in result.trials)
    for t in result.trials:
        a = dict(zip(space.names, t.assignment))
        assert space.contains(a)


def test_seeded_determinism():
    space = TuneSpace(dims=(("a", 1, 10), ("b", 1, 10)))

    def objective(x):
        return abs(x["a"] - 7) + abs(x["b"] - 2)

    r1 = tune(space, objective, budget=TuneBudget(9), seed=42)
    r2 = tune(space, objective, budget=TuneBudget(9), seed=42)
    assert [t.assignment for t in r1.trials] == [t.assignment for t in r2.trials]


def test_infeasible_points_skipped():
    space = _space_1d(1, 4)

    def objective(x):
        if x["bin"] == 1:
            raise RuntimeError("boom")
        return float(x["bin"])

    result = tune(space, objective, seed=4)
    assert result.assignment == {"bin": 2}
    infeasible = [t for t in result.trials if not t.feasible]
    assert infeasible and all(math.isinf(t.seconds) for t in infeasible)


def test_all_infeasible_raises():
    def objective(x):
        raise RuntimeError("no")

    with pytest.raises(TuningError):
        tune(_space_1d(1, 2), objective, seed=5)


def test_evaluation_cap_respected_on_large_space():
    space = TuneSpace(dims=(("a", 1, 100), ("b", 1, 100)))
    result = tune(space, lambda x: x["a"] + x["b"], budget=TuneBudget(12), seed=6)
    assert len(result.trials) <= 12


def _alloc(space, assignment, objective):
    return TunedAllocation(assignment=assignment, objective=objective,
                           trials=(), space=space, seed=0)


def test_aggregate_mode_majority():
    space = TuneSpace(dims=(("a", 1, 8),))
    a = _alloc(space, {"a": 3}, 1.0)
    a2 = _alloc(space, {"a": 3}, 1.2)
    b = _alloc(space, {"a": 5}, 0.5)
    assert aggregate_mode([a, a2, b]) == {"a": 3}


def test_aggregate_mode_tie_breaks_by_mean_objective():
    space = TuneSpace(dims=(("a", 1, 8),))
    a = _alloc(space, {"a": 3}, 1.0)
    b = _alloc(space, {"a": 5}, 2.0)
    assert aggregate_mode([a, b]) == {"a": 3}
    assert aggregate_mode([b, a]) == {"a": 3}


def test_aggregate_mode_tie_breaks_lexicographically():
    space = TuneSpace(dims=(("a", 1, 8), ("b", 1, 8)))
    a = _alloc(space, {"a": 2, "b": 7}, 1.0)
    b = _alloc(space, {"a": 2, "b": 3}, 1.0)
    assert aggregate_mode([a, b]) == {"a": 2, "b": 3}


def test_aggregate_mode_single_and_empty():
    space = TuneSpace(dims=(("a", 1, 8),))
    a = _alloc(space, {"a": 4}, 1.0)
    assert aggregate_mode([a]) == {"a": 4}
    with pytest.raises(TuningError):
        aggregate_mode([])


def test_space_validation():
    with pytest.raises(ConfigError):
        TuneSpace(dims=())
    with pytest.raises(ConfigError):
        TuneSpace(dims=(("a", 5, 3),))
    with pytest.raises(ConfigError):
        TuneSpace(dims=(("a", 1, 2), ("a", 1, 2)))


def test_default_space_shape():
    space = TuneSpace.default()
    assert space.names == ("tasks", "roi", "bin", "codec", "roi_codec")
    assert space.non_task_size() == 8 ** 4


def test_save_load_round_trip(tmp_path):
    space = _space_1d(1, 8)
    result = tune(space, lambda a: abs(a["bin"] - 2), seed=7)
    path = tmp_path / "tune.json"
    save_tuning(path, result)
    doc = load_tuning(path)
    assert doc["winner"] == {"bin": 2}
    assert doc["seed"] == 7
    assert [tuple(d) for d in doc["space"]] == list(space.dims)
    assert "host" in doc and "trials" in doc
