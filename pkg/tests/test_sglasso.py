import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import minimize

from panelnowcast.errors import DegeneratePathError, FoldError
from panelnowcast.sglasso import (
    GAMMA_GRID,
    GroupStructure,
    PenaltySpec,
    SgLassoFit,
    _group_lambda_max,
    lambda_max,
    lambda_path,
    panel_cv,
    select_tuning,
    sg_lasso_fit,
    sg_lasso_path,
    sg_penalty,
    sg_prox,
    time_folds,
)

from conftest import random_problem


def numeric_prox(v, t1, t2, groups):
    # smooth out the kinks slightly and polish with Nelder-Mead-free BFGS
    def obj(u):
        pen = t1 * np.abs(u).sum() + t2 * sum(np.linalg.norm(u[g]) for g in groups.groups)
        return 0.5 * np.sum((u - v) ** 2) + pen

    best = minimize(obj, sg_prox(v, t1, t2, groups) + 1e-3, method="Powell",
                    options={"xtol": 1e-12, "ftol": 1e-15, "maxfev": 200000})
    return best.x, obj


def test_prox_matches_numerical_minimization(rng):
    groups = GroupStructure(([0, 1, 2], [3], [4, 5]))
    for _ in range(10):
        v = rng.standard_normal(6) * 2
        t1, t2 = rng.uniform(0, 1.5, 2)
        u = sg_prox(v, t1, t2, groups)
        num, obj = numeric_prox(v, t1, t2, groups)
        assert obj(u) <= obj(num) + 1e-10
        np.testing.assert_allclose(u, num, atol=1e-5)


def test_prox_special_cases():
    groups = GroupStructure(([0, 1], [2]))
    v = np.array([3.0, -4.0, 0.5])
    # pure l1 is soft-thresholding
    np.testing.assert_allclose(sg_prox(v, 1.0, 0.0, groups), [2.0, -3.0, 0.0])
    # pure group shrinkage scales each group towards zero
    np.testing.assert_allclose(sg_prox(v, 0.0, 1.0, groups)[:2], v[:2] * (1 - 1 / 5.0))
    assert sg_prox(v, 0.0, 1.0, groups)[2] == 0.0
    np.testing.assert_array_equal(sg_prox(v, 0.0, 0.0, groups), v)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=5, max_size=5),
       st.lists(st.floats(-10, 10), min_size=5, max_size=5),
       st.floats(0, 3), st.floats(0, 3))
def test_prox_is_nonexpansive(a, b, t1, t2):
    groups = GroupStructure(([0, 1], [2, 3, 4]))
    a, b = np.array(a), np.array(b)
    pa, pb = sg_prox(a, t1, t2, groups), sg_prox(b, t1, t2, groups)
    assert np.linalg.norm(pa - pb) <= np.linalg.norm(a - b) + 1e-9


def test_group_structure_validation():
    with pytest.raises(ValueError):
        GroupStructure(([0, 1], [1, 2]))
    with pytest.raises(ValueError):
        GroupStructure(([0], [2]))
    g = GroupStructure.from_labels(["a", "b", "a", "c"])
    assert [x.tolist() for x in g.groups] == [[0, 2], [1], [3]]
    np.testing.assert_array_equal(g.labels(), [0, 1, 0, 2])


def test_penalty_spec_validation():
    with pytest.raises(ValueError):
        PenaltySpec(1.5, 1.0)
    with pytest.raises(ValueError):
        PenaltySpec(0.5, -1.0)


@pytest.mark.parametrize("gamma", [0.0, 0.5, 1.0])
@pytest.mark.parametrize("solver", ["pg", "bcd"])
def test_kkt_on_random_problems(rng, gamma, solver):
    for _ in range(8):
        X, y, labels = random_problem(rng)
        groups = GroupStructure.from_labels(labels)
        lmax = lambda_max(X, y, groups, gamma)
        lam = lmax * rng.uniform(0.02, 0.9)
        fit = sg_lasso_fit(X, y, groups, PenaltySpec(gamma, lam), solver=solver)
        assert fit.kkt_residual <= 1e-6


def test_solvers_agree(rng):
    X, y, labels = random_problem(rng, n=60, p=15)
    groups = GroupStructure.from_labels(labels)
    for gamma in (0.0, 0.35, 1.0):
        lam = 0.1 * lambda_max(X, y, groups, gamma)
        a = sg_lasso_fit(X, y, groups, PenaltySpec(gamma, lam), solver="pg")
        b = sg_lasso_fit(X, y, groups, PenaltySpec(gamma, lam), solver="bcd")
        np.testing.assert_allclose(a.coef, b.coef, atol=1e-6)
        assert a.intercept == pytest.approx(b.intercept, abs=1e-6)


def test_lambda_zero_matches_normal_equations(rng):
    for _ in range(5):
        X, y, labels = random_problem(rng, n=30, p=5, n_groups=2)
        fit = sg_lasso_fit(X, y, GroupStructure.from_labels(labels), PenaltySpec(0.5, 0.0))
        A = np.column_stack([np.ones(len(y)), X])
        ols = np.linalg.solve(A.T @ A, A.T @ y)
        assert fit.intercept == pytest.approx(ols[0], abs=1e-6)
        np.testing.assert_allclose(fit.coef, ols[1:], atol=1e-6)


def test_lambda_max_zeroes_the_fit(rng):
    X, y, labels = random_problem(rng)
    groups = GroupStructure.from_labels(labels)
    for gamma in (0.0, 0.3, 1.0):
        lmax = lambda_max(X, y, groups, gamma)
        at = sg_lasso_fit(X, y, groups, PenaltySpec(gamma, lmax))
        assert np.all(at.coef == 0)
        assert at.intercept == pytest.approx(y.mean())
        below = sg_lasso_fit(X, y, groups, PenaltySpec(gamma, 0.97 * lmax))
        assert np.any(below.coef != 0)


def test_group_lambda_max_closed_forms():
    c = np.array([3.0, -4.0])
    assert _group_lambda_max(c, 1.0) == 4.0
    assert _group_lambda_max(c, 0.0) == pytest.approx(5.0)
    # |soft(c, g lam)| = (1 - g) lam at the returned value
    lam = _group_lambda_max(c, 0.5)
    s = np.sign(c) * np.maximum(np.abs(c) - 0.5 * lam, 0)
    assert np.linalg.norm(s) == pytest.approx(0.5 * lam, rel=1e-12)


def test_lambda_path_endpoints(rng):
    X, y, labels = random_problem(rng)
    groups = GroupStructure.from_labels(labels)
    path = lambda_path(X, y, groups, 0.5, n_points=50)
    assert len(path) == 50
    assert path[-1] / path[0] == pytest.approx(1e-2, abs=1e-12)
    assert np.all(np.diff(path) < 0)
    steps = np.diff(np.log(path))
    np.testing.assert_allclose(steps, steps[0], rtol=1e-9)


def test_lambda_path_degenerate():
    X = np.random.default_rng(0).standard_normal((10, 3))
    with pytest.raises(DegeneratePathError):
        lambda_path(X, np.ones(10), GroupStructure.singletons(3), 1.0)


def test_path_warm_starts_match_cold(rng):
    X, y, labels = random_problem(rng)
    groups = GroupStructure.from_labels(labels)
    lams = lambda_path(X, y, groups, 0.7, n_points=8)
    warm = sg_lasso_path(X, y, groups, 0.7, lams)
    for lam, f in zip(lams, warm):
        cold = sg_lasso_fit(X, y, groups, PenaltySpec(0.7, lam))
        np.testing.assert_allclose(f.coef, cold.coef, atol=1e-6)


def test_objective_history_is_monotone(rng):
    X, y, labels = random_problem(rng)
    groups = GroupStructure.from_labels(labels)
    lam = 0.05 * lambda_max(X, y, groups, 0.5)
    fit = sg_lasso_fit(X, y, groups, PenaltySpec(0.5, lam), record_history=True)
    assert np.all(np.diff(fit.history) <= 1e-12 * abs(fit.history[0]))


def test_fit_roundtrip(rng):
    X, y, labels = random_problem(rng)
    groups = GroupStructure.from_labels(labels)
    fit = sg_lasso_fit(X, y, groups, PenaltySpec(0.5, 0.1))
    back = SgLassoFit.from_dict(fit.to_dict())
    np.testing.assert_array_equal(back.predict(X), fit.predict(X))
    assert sg_penalty(fit.std_coef, groups, 0.5) >= 0


def test_time_folds_are_contiguous():
    periods = np.tile(np.arange(23), 3)
    blocks = time_folds(periods, 5)
    assert len(blocks) == 5
    assert np.concatenate(blocks).tolist() == list(range(23))
    assert all(np.all(np.diff(b) == 1) for b in blocks)
    with pytest.raises(FoldError):
        time_folds(np.arange(4), 5)


def test_select_tuning_tie_break():
    lambdas = np.array([[3.0, 2.0, 1.0], [6.0, 4.0, 2.0]])
    err = np.array([[1.0, 0.5, 0.5], [0.5, 0.9, 0.9]])
    # three-way tie; the largest lambda (6.0, gamma index 1) wins
    assert select_tuning(np.array([0.0, 1.0]), lambdas, err) == (1, 0)


def test_panel_cv_protocol(rng):
    N, T, p = 3, 25, 6
    X = rng.standard_normal((N * T, p))
    y = X[:, 0] + 0.3 * rng.standard_normal(N * T)
    periods = np.tile(np.arange(T), N)
    cv = panel_cv(X, y, periods, GroupStructure.singletons(p), n_lambda=10)
    np.testing.assert_array_equal(cv.gamma_grid, GAMMA_GRID)
    assert cv.cv_error.shape == (21, 10)
    assert [b.tolist() for b in cv.fold_blocks] == [list(range(k * 5, k * 5 + 5))
                                                    for k in range(5)]
    gi = int(np.flatnonzero(cv.gamma_grid == cv.gamma)[0])
    assert cv.cv_error[gi, list(cv.lambdas[gi]).index(cv.lam)] == pytest.approx(
        np.min(cv.cv_error))
    assert cv.fit.coef[0] > 0.5


def test_panel_cv_fold_errors_by_hand(rng):
    # CV error of one (gamma, lambda) equals the mean of hand-computed fold MSEs
    T, p = 20, 3
    X = rng.standard_normal((T, p))
    y = X @ np.array([1.0, 0.0, -0.5]) + 0.2 * rng.standard_normal(T)
    periods = np.arange(T)
    cv = panel_cv(X, y, periods, GroupStructure.singletons(p), gamma_grid=(1.0,), n_lambda=5)
    lam = cv.lambdas[0, 3]
    mses = []
    for b in cv.fold_blocks:
        test = np.isin(periods, b)
        f = sg_lasso_fit(X[~test], y[~test], GroupStructure.singletons(p), PenaltySpec(1.0, lam))
        mses.append(np.mean((f.predict(X[test]) - y[test]) ** 2))
    assert cv.cv_error[0, 3] == pytest.approx(np.mean(mses), rel=1e-6)
