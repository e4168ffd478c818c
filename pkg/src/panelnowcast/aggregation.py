"""Country weights for aggregating unit nowcasts, and forecast combination.

Schemes (all computed from information dated ``t-1`` or earlier):

W1  historical shares of absolute growth
W2  last-period shares of absolute growth
W3  last-period shares of the level series
W4  simplex-constrained least-squares projection of the aggregate on the units
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import (
    ConfigError,
    ConvergenceError,
    DataError,
    DegenerateWeightsError,
    DimensionError,
)

SCHEMES = ("W1", "W2", "W3", "W4")
W4_RIDGE = 1e-7


@dataclass(frozen=True)
class WeightVector:
    weights: np.ndarray
    scheme: str = "fixed"
    period: Optional[object] = None

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).ravel()
        if not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite")
        object.__setattr__(self, "weights", w)
        if self.scheme in SCHEMES and abs(w.sum() - 1.0) > 1e-10:
            raise ValueError(f"{self.scheme} weights must sum to one (got {w.sum()!r})")
        if self.scheme == "W4" and np.any(w < 0):
            raise ValueError("W4 weights must be nonnegative")

    def __len__(self):
        return len(self.weights)

    @classmethod
    def equal(cls, n: int, period=None) -> "WeightVector":
        return cls(np.full(n, 1.0 / n), "fixed", period)


def _shares(x: np.ndarray, scheme: str, period) -> WeightVector:
    total = x.sum()
    if not total > 0:
        raise DegenerateWeightsError(f"{scheme}: all-zero inputs, weights undefined")
    w = x / total
    # push the rounding residue onto the largest weight so the sum is exact
    w[np.argmax(w)] += 1.0 - w.sum()
    return WeightVector(w, scheme, period)


def weights_w1(history, period=None) -> WeightVector:
    """``history`` is ``N x (t-1)``: every unit's growth before period ``t``."""
    h = np.atleast_2d(np.asarray(history, dtype=float))
    if h.shape[1] < 1:
        raise DataError("W1 needs at least one past period")
    if np.any(np.isnan(h)):
        raise DataError("W1 history contains missing values")
    return _shares(np.abs(h).sum(axis=1), "W1", period)


def weights_w2(last, period=None) -> WeightVector:
    x = np.asarray(last, dtype=float).ravel()
    if np.any(np.isnan(x)):
        raise DataError("W2 needs every unit's last-period growth")
    return _shares(np.abs(x), "W2", period)


def weights_w3(levels, period=None) -> WeightVector:
    x = np.asarray(levels, dtype=float).ravel()
    if np.any(np.isnan(x)) or np.any(x <= 0):
        raise DataError("W3 needs positive last-period levels for every unit")
    return _shares(x, "W3", period)


def project_simplex(v) -> np.ndarray:
    """Euclidean projection onto ``{w : w >= 0, sum(w) = 1}`` (sort-based, exact)."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, len(v) + 1)
    rho = np.flatnonzero(u - css / k > 0)[-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def w4_objective(w, aggregate, units, ridge=W4_RIDGE) -> float:
    r = aggregate - w @ units
    return float(r @ r + ridge * (w @ w))


def _face_solution(H, b, support):
    """Minimiser of ``w'Hw - 2b'w`` on ``{sum w = 1, w_i = 0 off support}``."""
    S = np.flatnonzero(support)
    k = len(S)
    K = np.zeros((k + 1, k + 1))
    K[:k, :k] = 2.0 * H[np.ix_(S, S)]
    K[:k, k] = 1.0
    K[k, :k] = 1.0
    rhs = np.concatenate([2.0 * b[S], [1.0]])
    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError:
        return None
    w = np.zeros(len(b))
    w[S] = sol[:k]
    return w


def _active_set_polish(H, b, w, max_steps=None):
    """Primal active-set refinement on the simplex, started from feasible ``w``.

    Alternates exact face solves with ratio-test steps that keep ``w >= 0``
    and adds the most violating coordinate when the face is optimal.
    """
    N = len(b)
    w = w.copy()
    S = w > 0
    for _ in range(max_steps or 4 * N + 10):
        cand = _face_solution(H, b, S)
        if cand is None:
            return None
        neg = S & (cand < 0)
        if np.any(neg):
            d = cand - w
            steps = w[neg] / (w[neg] - cand[neg])
            k = np.argmin(steps)
            w = w + steps[k] * d
            w[np.flatnonzero(neg)[k]] = 0.0
            w = np.maximum(w, 0.0)
            S = w > 0
            continue
        w = cand
        g = 2.0 * (H @ w - b)
        nu = -float(np.mean(g[S]))
        slack = g + nu
        slack[S] = 0.0
        j = int(np.argmin(slack))
        if slack[j] >= -1e-12 * max(1.0, float(np.max(np.abs(g)))):
            return w
        S[j] = True
    return None


def weights_w4(aggregate_history, unit_histories, period=None, ridge: float = W4_RIDGE,
               tol: float = 1e-10, max_iter: int = 100_000, face_every: int = 25) -> WeightVector:
    """Simplex-constrained ridge regression of the aggregate on the unit series.

    Solves ``min_w |y_ea - Y'w|^2 + ridge |w|^2`` s.t. ``w >= 0, sum w = 1``
    by accelerated projected gradient started at ``1/N``. The run stops when
    one projected-gradient step moves the iterate by less than ``tol`` (max
    norm). Because the tiny ridge leaves the problem badly conditioned, every
    ``face_every`` iterations an active-set refinement (exact solves on the
    faces of the simplex) is started from the current iterate; its result is
    kept if it does not raise the objective
    (or already passes the movement test, when rounding blurs the comparison).
    """
    y = np.asarray(aggregate_history, dtype=float).ravel()
    Y = np.atleast_2d(np.asarray(unit_histories, dtype=float))
    N, S = Y.shape
    if S != len(y):
        raise DimensionError(f"aggregate has {len(y)} periods, units have {S}")
    if S < 1:
        raise DataError("W4 needs at least one history period")
    if np.any(np.isnan(Y)) or np.any(np.isnan(y)):
        raise DataError("W4 history contains missing values")
    if N == 1:
        return WeightVector(np.ones(1), "W4", period)

    H = Y @ Y.T + ridge * np.eye(N)
    b = Y @ y
    L = 2.0 * float(np.linalg.eigvalsh(H)[-1])

    def f(w):
        return float(w @ H @ w - 2.0 * b @ w)

    def grad(w):
        return 2.0 * (H @ w - b)

    def moved(w):
        return float(np.max(np.abs(project_simplex(w - grad(w) / L) - w)))

    w = np.full(N, 1.0 / N)
    fw = f(w)
    z, t = w.copy(), 1.0
    for it in range(1, max_iter + 1):
        w_next = project_simplex(z - grad(z) / L)
        f_next = f(w_next)
        if f_next > fw:
            # restart momentum; keep the descent property
            z, t = w.copy(), 1.0
        else:
            t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            z = w_next + ((t - 1.0) / t_next) * (w_next - w)
            w, fw, t = w_next, f_next, t_next
        if it % face_every == 0:
            cand = _active_set_polish(H, b, w)
            if cand is not None and (f(cand) <= fw or moved(cand) < tol):
                w, fw = cand, f(cand)
                z, t = w.copy(), 1.0
        if moved(w) < tol:
            break
    else:
        raise ConvergenceError(f"W4 projected gradient did not converge in {max_iter} iterations",
                               last_iterate=w)
    w = np.maximum(w, 0.0)
    w /= w.sum()
    return WeightVector(w, "W4", period)


def weights_for_period(ds, scheme: str, t: int) -> WeightVector:
    """Weights for period index ``t`` from the dataset's data through ``t-1``."""
    if t < 1:
        raise DataError("weights need at least one past period")
    label = ds.time_index[t]
    if ds.N == 1 and scheme in SCHEMES:
        return WeightVector(np.ones(1), scheme, label)
    if scheme == "fixed":
        return WeightVector.equal(ds.N, label)
    if scheme == "W1":
        return weights_w1(ds.targets[:, :t], label)
    if scheme == "W2":
        return weights_w2(ds.targets[:, t - 1], label)
    if scheme == "W3":
        if ds.levels is None:
            raise ConfigError("W3 requires a level series")
        return weights_w3(ds.levels[:, t - 1], label)
    if scheme == "W4":
        if ds.aggregate is None:
            raise ConfigError("W4 requires an aggregate target series")
        return weights_w4(ds.aggregate[:t], ds.targets[:, :t], label)
    raise ConfigError(f"unknown weighting scheme {scheme!r}")


def weight_schedule(ds, scheme: str, periods: Sequence[int]) -> list:
    return [weights_for_period(ds, scheme, t) for t in periods]


def aggregate_nowcast(w, nowcasts) -> float:
    """``sum_i w_i * yhat_i``; ``nowcasts`` may be a NowcastSet or an array."""
    x = getattr(nowcasts, "unit_predictions", nowcasts)
    x = np.asarray(list(x.values()) if isinstance(x, dict) else x, dtype=float).ravel()
    wv = np.asarray(getattr(w, "weights", w), dtype=float).ravel()
    if x.shape != wv.shape:
        raise DimensionError(f"{len(wv)} weights for {len(x)} nowcasts")
    return float(wv @ x)


def combine_forecasts(members, method: str = "mean", actuals=None, train=None) -> np.ndarray:
    """Combine member forecasts period by period.

    ``members`` is ``n_members x n_periods``. ``method="inverse_mse"`` weights
    members by the reciprocal of their MSE over the ``train`` periods
    (boolean mask or indices) against ``actuals``.
    """
    F = np.atleast_2d(np.asarray(members, dtype=float))
    if F.size == 0 or F.shape[0] == 0:
        raise ValueError("at least one member forecast is required")
    if method == "mean":
        return F.mean(axis=0)
    if method == "inverse_mse":
        if actuals is None or train is None:
            raise ValueError("inverse_mse needs actuals and a training window")
        a = np.asarray(actuals, dtype=float)
        mse = ((F[:, train] - a[train]) ** 2).mean(axis=1)
        if np.any(mse == 0):
            wts = (mse == 0).astype(float)
        else:
            wts = 1.0 / mse
        wts /= wts.sum()
        return wts @ F
    raise ValueError(f"unknown combination method {method!r}")


def group_share_ratio(w: WeightVector, numerator_idx, denominator_idx) -> float:
    """Sum of weights on one unit group divided by the sum on another."""
    den = float(w.weights[list(denominator_idx)].sum())
    return float(w.weights[list(numerator_idx)].sum()) / den if den else float("inf")


def write_weights_csv(schedules: dict, units: Sequence, path) -> None:
    """``schedules`` maps scheme -> list of WeightVector (one per period)."""
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["scheme", "period", "unit", "weight"])
        for scheme, vecs in schedules.items():
            for wv in vecs:
                for u, x in zip(units, wv.weights):
                    out.writerow([scheme, wv.period, u, repr(float(x))])
