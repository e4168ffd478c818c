"""Sparse-group LASSO estimation, regularization paths and panel cross-validation.

The estimator minimizes

    |y - a - X b|^2 / n + 2 * lam * (gamma * |b|_1 + (1 - gamma) * sum_G |b_G|_2)

over an unpenalized intercept ``a`` and penalized slopes ``b``. Columns of
``X`` are standardized internally (zero mean, unit variance) and the penalty
acts on the standardized slopes; coefficients are reported on the original
column scale.

Two solvers share the same contract:

* ``"pg"``: monotone accelerated proximal gradient with backtracking.
* ``"bcd"``: cyclic block coordinate descent (compiled), much faster on the
  long regularization paths used inside cross-validation.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import _kernels
from .errors import (
    ConvergenceError,
    DegeneratePathError,
    DimensionError,
    FoldError,
    NumericError,
)

GAMMA_GRID = np.round(np.linspace(0.0, 1.0, 21), 2)
DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 100_000


@dataclass(frozen=True)
class GroupStructure:
    """Partition of the penalized columns into disjoint groups."""

    groups: tuple

    def __post_init__(self):
        groups = tuple(np.asarray(g, dtype=np.int64).ravel() for g in self.groups)
        object.__setattr__(self, "groups", groups)
        cols = np.concatenate(groups) if groups else np.empty(0, dtype=np.int64)
        if np.any(cols < 0) or len(np.unique(cols)) != len(cols):
            raise ValueError("groups must be disjoint sets of nonnegative column indices")
        if len(cols) and set(cols.tolist()) != set(range(len(cols))):
            raise ValueError("groups must cover columns 0..p-1 exactly once")

    @classmethod
    def singletons(cls, p: int) -> "GroupStructure":
        return cls(tuple([j] for j in range(p)))

    @classmethod
    def from_labels(cls, labels: Sequence) -> "GroupStructure":
        """Build groups from one label per column; order of first appearance."""
        order: dict = {}
        for j, lab in enumerate(labels):
            order.setdefault(lab, []).append(j)
        return cls(tuple(order.values()))

    @property
    def n_features(self) -> int:
        return int(sum(len(g) for g in self.groups))

    def __len__(self):
        return len(self.groups)

    def labels(self) -> np.ndarray:
        out = np.empty(self.n_features, dtype=np.int64)
        for k, g in enumerate(self.groups):
            out[g] = k
        return out

    def csr(self):
        gptr = np.zeros(len(self.groups) + 1, dtype=np.int64)
        gptr[1:] = np.cumsum([len(g) for g in self.groups])
        gidx = (np.concatenate(self.groups) if self.groups
                else np.empty(0, dtype=np.int64))
        return gptr, gidx.astype(np.int64)

    def active(self, coef: np.ndarray) -> np.ndarray:
        """Boolean indicator of groups with at least one nonzero coefficient."""
        return np.array([bool(np.any(coef[g] != 0)) for g in self.groups])


@dataclass(frozen=True)
class PenaltySpec:
    gamma: float
    lam: float

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        if not self.lam >= 0.0:
            raise ValueError(f"lambda must be nonnegative, got {self.lam}")


def sg_penalty(u, groups: GroupStructure, gamma: float) -> float:
    """Omega_gamma(u) = gamma |u|_1 + (1 - gamma) sum_G |u_G|_2."""
    gptr, gidx = groups.csr()
    return float(_kernels.penalty_csr(np.asarray(u, dtype=float), gamma, gptr, gidx))


def sg_prox(v, t1: float, t2: float, groups: GroupStructure) -> np.ndarray:
    """Proximal map of ``u -> t1 |u|_1 + t2 sum_G |u_G|_2`` evaluated at ``v``.

    Soft-thresholding every coordinate by ``t1`` followed by group-wise
    shrinkage by ``t2`` is the exact prox of this sum.
    """
    if t1 < 0 or t2 < 0:
        raise ValueError("thresholds must be nonnegative")
    gptr, gidx = groups.csr()
    return _kernels.sg_prox_csr(np.asarray(v, dtype=float), float(t1), float(t2), gptr, gidx)


@dataclass
class SgLassoFit:
    intercept: float
    coef: np.ndarray
    penalty: PenaltySpec
    objective: float
    kkt_residual: float
    iterations: int
    center: np.ndarray
    scale: np.ndarray
    groups: GroupStructure
    solver: str = "pg"
    history: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def gamma(self) -> float:
        return self.penalty.gamma

    @property
    def lam(self) -> float:
        return self.penalty.lam

    @property
    def std_coef(self) -> np.ndarray:
        return self.coef * self.scale

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return self.intercept + X @ self.coef

    def active_groups(self) -> np.ndarray:
        return self.groups.active(self.coef)

    def to_dict(self) -> dict:
        return {
            "intercept": self.intercept,
            "coef": self.coef.tolist(),
            "gamma": self.gamma,
            "lambda": self.lam,
            "objective": self.objective,
            "kkt_residual": self.kkt_residual,
            "iterations": self.iterations,
            "center": self.center.tolist(),
            "scale": self.scale.tolist(),
            "groups": [g.tolist() for g in self.groups.groups],
            "solver": self.solver,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SgLassoFit":
        return cls(
            intercept=float(d["intercept"]),
            coef=np.asarray(d["coef"], dtype=float),
            penalty=PenaltySpec(float(d["gamma"]), float(d["lambda"])),
            objective=float(d["objective"]),
            kkt_residual=float(d["kkt_residual"]),
            iterations=int(d["iterations"]),
            center=np.asarray(d["center"], dtype=float),
            scale=np.asarray(d["scale"], dtype=float),
            groups=GroupStructure(tuple(d["groups"])),
            solver=d.get("solver", "pg"),
        )


class _Problem:
    """Standardized, intercept-profiled least-squares problem."""

    def __init__(self, X, y, groups: GroupStructure):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float).ravel()
        if X.ndim != 2:
            raise DimensionError("design must be a 2-d array")
        if X.shape[0] != y.shape[0]:
            raise DimensionError(f"design has {X.shape[0]} rows but y has {y.shape[0]}")
        if X.shape[0] < 1:
            raise DimensionError("need at least one observation")
        if groups.n_features != X.shape[1]:
            raise DimensionError(
                f"group structure covers {groups.n_features} columns, design has {X.shape[1]}")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise NumericError("non-finite values in design or response")
        self.n, self.p = X.shape
        self.groups = groups
        self.gptr, self.gidx = groups.csr()
        self.center = X.mean(axis=0)
        sd = X.std(axis=0)
        # constant columns carry no information; keep them at exactly zero
        const = sd <= 1e-12 * np.maximum(1.0, np.abs(self.center))
        self.scale = np.where(const, 1.0, sd)
        Z = (X - self.center) / self.scale
        Z[:, const] = 0.0
        self.Z = np.ascontiguousarray(Z)
        self.ybar = float(y.mean())
        self.yc = y - self.ybar
        self.colsq = (self.Z ** 2).sum(axis=0) / self.n
        self.glip = np.array([
            float(np.linalg.eigvalsh(self.Z[:, g].T @ self.Z[:, g] / self.n)[-1]) if len(g) > 1
            else float(self.colsq[g[0]])
            for g in groups.groups
        ]) if len(groups) else np.empty(0)
        self.c0 = self.Z.T @ self.yc / self.n
        self.kkt_scale = float(np.max(np.abs(self.c0))) if self.p else 0.0

    def objective(self, u, lam, gamma, r=None) -> float:
        if r is None:
            r = self.yc - self.Z @ u
        pen = _kernels.penalty_csr(u, gamma, self.gptr, self.gidx) if self.p else 0.0
        return float(r @ r / self.n + 2.0 * lam * pen)

    def kkt(self, u, r, lam, gamma) -> float:
        if self.p == 0 or self.kkt_scale == 0.0:
            return 0.0
        c = self.Z.T @ r / self.n
        v = _kernels.kkt_violation(c, u, lam, gamma, self.gptr, self.gidx)
        return max(float(v), 0.0) / self.kkt_scale

    def to_original(self, u):
        coef = u / self.scale
        return self.ybar - float(self.center @ coef), coef

    def to_standardized(self, coef):
        return np.asarray(coef, dtype=float) * self.scale

    def lambda_max(self, gamma: float) -> float:
        return max((_group_lambda_max(self.c0[g], gamma) for g in self.groups.groups),
                   default=0.0)


def _group_lambda_max(c: np.ndarray, gamma: float) -> float:
    """Smallest lam with |soft(c, gamma lam)|_2 <= (1 - gamma) lam, by bisection."""
    cinf = float(np.max(np.abs(c))) if len(c) else 0.0
    if cinf == 0.0:
        return 0.0
    if gamma >= 1.0:
        return cinf
    if gamma <= 0.0:
        return float(np.linalg.norm(c))

    def f(lam):
        s = np.sign(c) * np.maximum(np.abs(c) - gamma * lam, 0.0)
        return np.linalg.norm(s) - (1.0 - gamma) * lam

    lo, hi = 0.0, cinf / gamma
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if f(mid) > 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-16 * hi:
            break
    return hi


def _solve_pg(prob: _Problem, lam, gamma, u0, tol, max_iter, record):
    Z, yc, n = prob.Z, prob.yc, prob.n
    u = u0.copy()
    r = yc - Z @ u
    F = prob.objective(u, lam, gamma, r)
    history = [F] if record else None
    if prob.p == 0:
        return u, r, 0, history
    L = 2.0 * max(float(np.max(prob.colsq)), 1e-12)
    t = 1.0
    yk = u.copy()
    for it in range(1, max_iter + 1):
        ry = yc - Z @ yk
        fy = ry @ ry / n
        grad = -2.0 * (Z.T @ ry) / n
        while True:
            z = _kernels.sg_prox_csr(yk - grad / L, 2.0 * lam * gamma / L,
                                     2.0 * lam * (1.0 - gamma) / L, prob.gptr, prob.gidx)
            d = z - yk
            rz = yc - Z @ z
            fz = rz @ rz / n
            if fz <= fy + grad @ d + 0.5 * L * (d @ d) + 1e-14 * max(fy, 1e-300):
                break
            L *= 2.0
        Fz = fz + 2.0 * lam * _kernels.penalty_csr(z, gamma, prob.gptr, prob.gidx)
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        # a plain prox step from u descends in exact arithmetic, so after a
        # restart it is accepted even when rounding hides the decrease
        if Fz <= F or t == 1.0:
            u_new, r_new, F_new = z, rz, Fz
            yk = u_new + (t / t_new) * (z - u_new) + ((t - 1.0) / t_new) * (u_new - u)
            t = t_new
        else:
            # monotone safeguard doubles as an adaptive restart
            u_new, r_new, F_new = u, r, F
            yk = u.copy()
            t = 1.0
        u, r, F = u_new, r_new, F_new
        if record:
            history.append(F)
        if it % 5 == 0 or np.all(u == 0.0):
            if prob.kkt(u, r, lam, gamma) <= tol:
                return u, r, it, history
    raise ConvergenceError(f"proximal gradient did not converge in {max_iter} iterations",
                           last_iterate=prob.to_original(u)[1])


def _active_set_l1(prob: _Problem, u, lam, tol, max_steps=None):
    """Sign-pattern active-set method for the plain-L1 case.

    Works on ``F(u) = u'Gu/2 - c'u + lam |u|_1`` with ``G = Z'Z/n``. Each step
    minimises the sign-fixed quadratic on the current support and line-searches
    over the sign-change points, so ``F`` strictly decreases and the method
    stops after finitely many steps. When the sign-fixed system has no solution
    (rank-deficient support) the step follows a null direction of the support
    columns, along which ``F`` falls linearly until a coefficient hits zero.
    """
    Z, c, n = prob.Z, prob.c0, prob.n
    G = Z.T @ Z / n
    u = u.copy()
    eps = 1e-13 * max(prob.kkt_scale, 1e-300)

    def F(v):
        return 0.5 * v @ G @ v - c @ v + lam * np.abs(v).sum()

    steps = max_steps or 20 * prob.p + 100
    for _ in range(steps):
        g = c - G @ u
        A = np.flatnonzero(u)
        theta = np.sign(u[A])
        if len(A) == 0 or np.max(np.abs(g[A] - lam * theta)) <= eps:
            r = prob.yc - Z @ u
            if prob.kkt(u, r, lam, 1.0) <= tol:
                return u
            zero = np.flatnonzero(u == 0.0)
            j = zero[np.argmax(np.abs(g[zero]))]
            A = np.sort(np.append(A, j))
            theta = np.sign(u[A])
            theta[A == j] = np.sign(g[j])
        ZA = Z[:, A]
        _, sv, Vt = np.linalg.svd(ZA, full_matrices=True)
        rank = int(np.sum(sv > 1e-10 * sv[0])) if len(sv) and sv[0] > 0 else 0
        N0 = Vt[rank:].T
        nd = -N0 @ (N0.T @ theta) if N0.size else np.zeros(len(A))
        uA = u[A]
        if np.linalg.norm(nd) > 1e-10 * np.sqrt(len(A)):
            d, t_max = nd, np.inf
        else:
            target, *_ = np.linalg.lstsq(G[np.ix_(A, A)], c[A] - lam * theta, rcond=None)
            d, t_max = target - uA, 1.0
        # coordinates that would change sign against theta
        moving = (uA != 0.0) & (uA * d < 0)
        cross = np.full(len(A), np.inf)
        cross[moving] = -uA[moving] / d[moving]
        cands = sorted({t for t in cross if t < t_max} | ({t_max} if np.isfinite(t_max) else set()))
        if not cands:
            return None
        best, best_F = None, F(u)
        for t in cands:
            v = u.copy()
            v[A] = uA + t * d
            v[A[np.abs(cross - t) <= 1e-15 * max(t, 1.0)]] = 0.0
            fv = F(v)
            if fv < best_F:
                best, best_F = v, fv
        if best is None:
            return None
        u = best
    return None


def _solve_bcd(prob: _Problem, lam, gamma, u0, tol, max_iter):
    u = u0.copy()
    r = prob.yc - prob.Z @ u
    if prob.p == 0:
        return u, r, 0
    plain_l1 = gamma >= 1.0 or all(len(g) == 1 for g in prob.groups.groups)
    total = 0
    ctol = 1e-10
    while True:
        budget = min(max_iter - total, 500 if plain_l1 else max_iter - total)
        sweeps = _kernels.bcd_solve(prob.Z, r, u, prob.gptr, prob.gidx, prob.colsq, prob.glip,
                                    float(lam), float(gamma), ctol, budget)
        total += sweeps
        # refresh the residual to shed accumulated rounding
        r = prob.yc - prob.Z @ u
        if prob.kkt(u, r, lam, gamma) <= tol:
            return u, r, total
        if plain_l1:
            v = _active_set_l1(prob, u, lam, tol)
            if v is not None:
                rv = prob.yc - prob.Z @ v
                if prob.kkt(v, rv, lam, gamma) <= tol:
                    return v, rv, total
        if total >= max_iter or ctol < 1e-18:
            raise ConvergenceError(
                f"block coordinate descent did not converge in {total} sweeps",
                last_iterate=prob.to_original(u)[1])
        if sweeps < budget:
            ctol *= 1e-2


def _solve(prob, lam, gamma, u0, solver, tol, max_iter, record=False):
    if solver == "pg":
        return _solve_pg(prob, lam, gamma, u0, tol, max_iter, record)
    if solver == "bcd":
        u, r, it = _solve_bcd(prob, lam, gamma, u0, tol, max_iter)
        return u, r, it, ([prob.objective(u, lam, gamma, r)] if record else None)
    raise ValueError(f"unknown solver {solver!r}")


def _make_fit(prob, u, r, it, lam, gamma, solver, history, tol) -> SgLassoFit:
    a, coef = prob.to_original(u)
    return SgLassoFit(
        intercept=a,
        coef=coef,
        penalty=PenaltySpec(gamma, lam),
        objective=prob.objective(u, lam, gamma, r),
        kkt_residual=prob.kkt(u, r, lam, gamma),
        iterations=it,
        center=prob.center,
        scale=prob.scale,
        groups=prob.groups,
        solver=solver,
        history=None if history is None else np.asarray(history),
    )


def sg_lasso_fit(X, y, groups: GroupStructure, penalty: PenaltySpec, warm_start=None,
                 tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
                 solver: str = "pg", record_history: bool = False) -> SgLassoFit:
    """Fit one sparse-group LASSO problem.

    Parameters
    ----------
    X : (n, p) array
        Penalized columns; the intercept is added internally.
    y : (n,) array
    groups : GroupStructure over the p columns.
    penalty : PenaltySpec
    warm_start : optional (p,) array of original-scale coefficients.
    tol : float
        Relative KKT tolerance; the violation is scaled by ``max|X_std' y_c| / n``.
    solver : {"pg", "bcd"}
    record_history : bool
        Keep the objective value after every iteration (``pg`` only).

    Raises
    ------
    NumericError
        Non-finite inputs.
    ConvergenceError
        Iteration cap reached; ``last_iterate`` carries the coefficients.
    """
    prob = _Problem(X, y, groups)
    u0 = np.zeros(prob.p) if warm_start is None else prob.to_standardized(warm_start)
    u, r, it, hist = _solve(prob, penalty.lam, penalty.gamma, u0, solver, tol, max_iter,
                            record_history)
    return _make_fit(prob, u, r, it, penalty.lam, penalty.gamma, solver, hist, tol)


def lambda_max(X, y, groups: GroupStructure, gamma: float) -> float:
    return _Problem(X, y, groups).lambda_max(gamma)


def _path_from_problem(prob: _Problem, gamma: float, n_points: int, ratio: float) -> np.ndarray:
    if n_points < 2:
        raise ValueError("a lambda path needs at least two points")
    lmax = prob.lambda_max(gamma)
    if not lmax > 0.0:
        raise DegeneratePathError("response is constant after demeaning (or design is null); "
                                  "no nontrivial lambda path exists")
    path = np.exp(np.linspace(np.log(lmax), np.log(lmax * ratio), n_points))
    path[0] = lmax
    path[-1] = lmax * ratio
    return path


def lambda_path(X, y, groups: GroupStructure, gamma: float, n_points: int = 50,
                ratio: float = 1e-2) -> np.ndarray:
    """Descending log-spaced grid from lambda_max down to ``ratio * lambda_max``."""
    return _path_from_problem(_Problem(X, y, groups), gamma, n_points, ratio)


def _run_path(prob: _Problem, gamma, lambdas, solver, tol, max_iter, warm=None):
    U = np.zeros((len(lambdas), prob.p))
    u = np.zeros(prob.p) if warm is None else warm
    out = []
    for k, lam in enumerate(lambdas):
        u, r, it, _ = _solve(prob, lam, gamma, u, solver, tol, max_iter)
        U[k] = u
        out.append((u, r, it))
    return U, out


def sg_lasso_path(X, y, groups: GroupStructure, gamma: float, lambdas,
                  solver: str = "pg", tol: float = DEFAULT_TOL,
                  max_iter: int = DEFAULT_MAX_ITER) -> list:
    """Fits along ``lambdas`` (in the given order) with warm starts."""
    prob = _Problem(X, y, groups)
    _, sols = _run_path(prob, gamma, np.asarray(lambdas, dtype=float), solver, tol, max_iter)
    return [_make_fit(prob, u, r, it, float(lam), gamma, solver, None, tol)
            for lam, (u, r, it) in zip(lambdas, sols)]


def time_folds(periods, folds: int = 5) -> list:
    """Split the distinct periods into ``folds`` contiguous blocks."""
    uniq = np.unique(np.asarray(periods))
    if folds < 2:
        raise FoldError("need at least two folds")
    if len(uniq) < folds:
        raise FoldError(f"{len(uniq)} distinct periods cannot be split into {folds} folds")
    return [b for b in np.array_split(uniq, folds)]


@dataclass
class CVResult:
    gamma: float
    lam: float
    fit: SgLassoFit
    gamma_grid: np.ndarray
    lambdas: np.ndarray
    cv_error: np.ndarray
    fold_blocks: list

    def rows(self):
        for gi, g in enumerate(self.gamma_grid):
            for li, lam in enumerate(self.lambdas[gi]):
                yield float(g), float(lam), float(self.cv_error[gi, li])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["gamma", "lambda", "cv_mse"])
            for row in self.rows():
                w.writerow([repr(v) for v in row])


def select_tuning(gamma_grid, lambdas, cv_error, tie_tol: float = 1e-12):
    """Argmin of the CV surface; ties go to the largest lambda, then largest gamma."""
    best = np.nanmin(cv_error)
    cand = np.argwhere(cv_error <= best + tie_tol)
    key = max(((lambdas[gi, li], gamma_grid[gi], gi, li) for gi, li in cand))
    return key[2], key[3]


def panel_cv(X, y, periods, groups: GroupStructure, gamma_grid=GAMMA_GRID,
             n_lambda: int = 50, folds: int = 5, solver: str = "pg",
             tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> CVResult:
    """Select (gamma, lambda) by blocked time-series cross-validation and refit.

    ``periods`` labels every row with its time period. Distinct periods are
    split into contiguous blocks; a block is held out for all units at once.
    The lambda grid for each gamma is built on the full sample.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    periods = np.asarray(periods)
    if len(periods) != len(y):
        raise DimensionError("one period label per row is required")
    gamma_grid = np.asarray(gamma_grid, dtype=float)
    blocks = time_folds(periods, folds)
    full = _Problem(X, y, groups)
    fold_data = []
    for b in blocks:
        test = np.isin(periods, b)
        fold_data.append((_Problem(X[~test], y[~test], groups), X[test], y[test]))

    lambdas = np.array([_path_from_problem(full, g, n_lambda, 1e-2) for g in gamma_grid])
    cv_error = np.zeros((len(gamma_grid), n_lambda))
    for gi, g in enumerate(gamma_grid):
        for prob, Xte, yte in fold_data:
            U, _ = _run_path(prob, g, lambdas[gi], solver, tol, max_iter)
            coef = U / prob.scale
            intercepts = prob.ybar - coef @ prob.center
            pred = intercepts[:, None] + coef @ Xte.T
            cv_error[gi] += ((pred - yte) ** 2).mean(axis=1)
        cv_error[gi] /= len(fold_data)

    gi, li = select_tuning(gamma_grid, lambdas, cv_error)
    g = float(gamma_grid[gi])
    _, sols = _run_path(full, g, lambdas[gi][: li + 1], solver, tol, max_iter)
    u, r, it = sols[-1]
    fit = _make_fit(full, u, r, it, float(lambdas[gi, li]), g, solver, None, tol)
    return CVResult(g, float(lambdas[gi, li]), fit, gamma_grid, lambdas, cv_error, blocks)
