import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import minimize

from panelnowcast.errors import ConfigError, DataError, DegenerateWeightsError, DimensionError
from panelnowcast.aggregation import (
    WeightVector,
    aggregate_nowcast,
    combine_forecasts,
    group_share_ratio,
    project_simplex,
    weights_for_period,
    weights_w1,
    weights_w2,
    weights_w3,
    weights_w4,
    w4_objective,
    write_weights_csv,
)
from panelnowcast.paneldata import PanelDataset


def test_w1_examples():
    np.testing.assert_allclose(weights_w1([[1, -1], [2, 2]]).weights, [2 / 6, 4 / 6])
    np.testing.assert_allclose(weights_w1([[1, 2], [1, 2], [1, 2]]).weights, [1 / 3] * 3)
    assert weights_w1([[0.4, -3]]).weights.tolist() == [1.0]
    with pytest.raises(DegenerateWeightsError):
        weights_w1([[0, 0], [0, 0]])


def test_w2_examples():
    np.testing.assert_allclose(weights_w2([1, 3]).weights, [0.25, 0.75])
    np.testing.assert_array_equal(weights_w2([-1, 3]).weights, weights_w2([1, -3]).weights)
    np.testing.assert_array_equal(weights_w2([0, 0, 2]).weights, [0, 0, 1])
    with pytest.raises(DegenerateWeightsError):
        weights_w2([0.0, 0.0])


def test_w3_examples():
    np.testing.assert_allclose(weights_w3([100, 300]).weights, [0.25, 0.75])
    np.testing.assert_allclose(weights_w3([5, 5, 5, 5]).weights, 0.25)
    with pytest.raises(DataError):
        weights_w3([100, 0])
    with pytest.raises(DataError):
        weights_w3([100, -3])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0.01, 1e4), min_size=2, max_size=8), st.floats(1e-3, 1e3))
def test_share_schemes_are_scale_invariant_and_sum_to_one(x, c):
    x = np.array(x)
    for f in (weights_w2, weights_w3):
        a, b = f(x).weights, f(c * x).weights
        np.testing.assert_allclose(a, b, rtol=1e-12)
        assert abs(a.sum() - 1) <= 1e-10
    h = np.outer(x, [1.0, -0.5])
    np.testing.assert_allclose(weights_w1(h).weights, weights_w1(c * h).weights, rtol=1e-12)


def test_weight_vector_invariants():
    with pytest.raises(ValueError):
        WeightVector([0.5, 0.6], "W1")
    with pytest.raises(ValueError):
        WeightVector([1.5, -0.5], "W4")
    WeightVector([1.5, -0.5], "fixed")
    np.testing.assert_array_equal(WeightVector.equal(4).weights, 0.25)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=10))
def test_simplex_projection(v):
    v = np.array(v)
    w = project_simplex(v)
    assert np.all(w >= 0) and abs(w.sum() - 1) < 1e-10
    # optimality: (v - w)'(u - w) <= 0 for the vertices u of the simplex
    for j in range(len(v)):
        u = np.zeros(len(v))
        u[j] = 1
        assert (v - w) @ (u - w) <= 1e-9 * (1 + np.abs(v).max())


def test_w4_single_unit():
    assert weights_w4(np.arange(5.0), np.arange(5.0)[None]).weights.tolist() == [1.0]


def test_w4_recovers_known_weights(rng):
    Y = rng.standard_normal((2, 40))
    y = 0.3 * Y[0] + 0.7 * Y[1]
    w = weights_w4(y, Y).weights
    np.testing.assert_allclose(w, [0.3, 0.7], atol=1e-3)


def test_w4_tie_split_matches_grid_search(rng):
    Y = rng.standard_normal((3, 40))
    Y[2] = Y[1]
    y = 0.2 * Y[0] + 0.8 * Y[1] + 0.1 * rng.standard_normal(40)
    w = weights_w4(y, Y).weights
    assert abs(w[1] - w[2]) < 1e-6
    # fine grid over the simplex
    best, arg = np.inf, None
    g = np.linspace(0, 1, 401)
    for a in g:
        for b in g[g <= 1 - a + 1e-12]:
            cand = np.array([a, b, 1 - a - b])
            f = w4_objective(cand, y, Y)
            if f < best:
                best, arg = f, cand
    assert w4_objective(w, y, Y) <= best + 1e-12
    assert abs(w[0] - arg[0]) < 5e-3


def test_w4_matches_generic_constrained_solver(rng):
    for _ in range(10):
        N = int(rng.integers(2, 7))
        Y = rng.standard_normal((N, 30))
        y = rng.standard_normal(30) + Y[0]
        w = weights_w4(y, Y).weights
        res = minimize(lambda v: w4_objective(v, y, Y), np.full(N, 1 / N), method="SLSQP",
                       bounds=[(0, 1)] * N,
                       constraints=[{"type": "eq", "fun": lambda v: v.sum() - 1}],
                       options={"ftol": 1e-14, "maxiter": 1000})
        assert w4_objective(w, y, Y) <= res.fun + 1e-9
        np.testing.assert_allclose(w, res.x, atol=1e-4)


def test_w4_descent_and_constraints(rng):
    for N in (2, 5, 19):
        Y = rng.standard_normal((N, 40)) + 0.5
        y = rng.standard_normal(40)
        w = weights_w4(y, Y).weights
        assert np.all(w >= 0) and abs(w.sum() - 1) <= 1e-10
        assert w4_objective(w, y, Y) <= w4_objective(np.full(N, 1 / N), y, Y)


def test_w4_errors():
    with pytest.raises(DimensionError):
        weights_w4(np.zeros(3), np.zeros((2, 4)))
    with pytest.raises(DataError):
        weights_w4(np.array([1.0, np.nan]), np.ones((2, 2)))


def test_weights_for_period_uses_past_only(small_panel):
    ds = small_panel
    t = 10
    w1 = weights_for_period(ds, "W1", t)
    y = ds.targets.copy()
    y[:, t:] = 99.0
    changed = PanelDataset(ds.unit_ids, ds.time_index, y, ds.covariates, ds.levels, ds.aggregate)
    np.testing.assert_array_equal(weights_for_period(changed, "W1", t).weights, w1.weights)
    for s in ("W1", "W2", "W3", "W4", "fixed"):
        assert abs(weights_for_period(ds, s, t).weights.sum() - 1) < 1e-10
    one = ds.subset(["U02"])
    for s in ("W1", "W2", "W3", "W4"):
        assert weights_for_period(one, s, t).weights.tolist() == [1.0]
    with pytest.raises(ConfigError):
        weights_for_period(ds, "W9", t)
    bare = PanelDataset(ds.unit_ids, ds.time_index, ds.targets)
    with pytest.raises(ConfigError):
        weights_for_period(bare, "W3", t)
    with pytest.raises(ConfigError):
        weights_for_period(bare, "W4", t)


def test_aggregate_nowcast():
    assert aggregate_nowcast([0.5, 0.5], [2, 4]) == 3
    assert aggregate_nowcast([0, 1, 0], [2, 4, 7]) == 4
    assert aggregate_nowcast(WeightVector.equal(3), np.zeros(3)) == 0
    with pytest.raises(DimensionError):
        aggregate_nowcast([1.0], [1, 2])


def test_combination():
    np.testing.assert_array_equal(combine_forecasts([[1.0], [3.0]]), [2.0])
    np.testing.assert_array_equal(combine_forecasts([[1.5, 2.0]]), [1.5, 2.0])
    np.testing.assert_array_equal(combine_forecasts([[4.0, 4.0]] * 3), [4.0, 4.0])
    with pytest.raises(ValueError):
        combine_forecasts(np.empty((0, 3)))
    F = np.array([[1.0, 2.0, 3.0, 4.0], [0.0, 0.0, 0.0, 10.0]])
    a = np.array([1.0, 2.0, 3.0, 4.0])
    np.testing.assert_array_equal(combine_forecasts(F, "inverse_mse", a, [0, 1, 2]), F[0])


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 6), st.integers(1, 12), st.integers(0, 10_000))
def test_combination_rmse_bound(m, n, seed):
    rng = np.random.default_rng(seed)
    F = rng.standard_normal((m, n)) * rng.uniform(0.1, 5, (m, 1))
    a = rng.standard_normal(n)
    rmse = lambda f: np.sqrt(np.mean((f - a) ** 2))
    assert rmse(combine_forecasts(F)) <= np.mean([rmse(f) for f in F]) + 1e-12


def test_group_ratio_and_csv(tmp_path):
    w = WeightVector([0.1, 0.2, 0.3, 0.4], "W1", "2020-Q1")
    assert group_share_ratio(w, [0, 1], [2, 3]) == pytest.approx(0.3 / 0.7)
    p = tmp_path / "w.csv"
    write_weights_csv({"W1": [w]}, ["a", "b", "c", "d"], p)
    rows = list(csv.reader(open(p)))
    assert rows[0] == ["scheme", "period", "unit", "weight"]
    assert rows[4] == ["W1", "2020-Q1", "d", "0.4"]
