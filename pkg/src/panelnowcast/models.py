"""Estimator families and nowcast production.

Families
--------
P      pooled panel: one coefficient vector for every unit
HetAR  pooled covariate block, unit-specific autoregressive lags
TS     one regression per unit
A      aggregate target on aggregated regressors
AC     aggregate target on every unit's (weighted) regressors

Everything is built on a small array-level core (:class:`PanelArrays`,
:func:`fit_arrays`, :func:`unit_equivalents`) which the simulation module
reuses directly; the dataset-level functions only add the MIDAS design and
the bookkeeping around clocks and unit labels.

Whatever the family, a fit can be written as unit-level intercepts ``a_i``
and slopes ``B_i`` acting on ``z_i = [AR lags | covariates]``. For A and AC
those "unit equivalents" satisfy ``sum_i w_i (a_i + z_i'B_i) = Yhat`` whenever
the weights sum to one, which is what the error decomposition relies on.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from typing import Mapping, Optional, Union

import numpy as np

from .errors import (
    ConfigError,
    DataError,
    DegeneratePathError,
    DimensionError,
    InsufficientHistoryError,
    PanelNowcastError,
)
from .midas import MidasSpec, build_design, feasible_periods, midas_specs
from .paneldata import HORIZONS, NowcastClock, PanelDataset, aggregate_series
from .sglasso import (
    DEFAULT_MAX_ITER,
    DEFAULT_TOL,
    GAMMA_GRID,
    GroupStructure,
    PenaltySpec,
    SgLassoFit,
    panel_cv,
    sg_lasso_fit,
)

log = logging.getLogger(__name__)

FAMILIES = ("P", "HetAR", "TS", "A", "AC")
PANEL_FAMILIES = ("P", "HetAR")
WEIGHTED_FAMILIES = ("A", "AC")


@dataclass(frozen=True)
class ModelSpec:
    family: str
    Q: int = 1
    midas: Mapping[str, MidasSpec] = field(default_factory=dict)
    penalty: Union[PenaltySpec, str] = "cv"
    gamma_grid: tuple = tuple(GAMMA_GRID)
    n_lambda: int = 50
    folds: int = 5
    solver: str = "pg"
    tol: float = DEFAULT_TOL
    max_iter: int = DEFAULT_MAX_ITER

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown family {self.family!r}; use one of {FAMILIES}")
        if self.Q < 0:
            raise ConfigError("Q must be nonnegative")
        if isinstance(self.penalty, str) and self.penalty != "cv":
            raise ConfigError("penalty must be 'cv' or a PenaltySpec")
        if self.solver not in ("pg", "bcd"):
            raise ConfigError(f"unknown solver {self.solver!r}")

    @property
    def uses_cv(self) -> bool:
        return isinstance(self.penalty, str)

    def validate_for(self, n_units: int, weights=None) -> None:
        if self.family in PANEL_FAMILIES and n_units < 2:
            raise ConfigError(f"family {self.family} needs N >= 2 units (got N={n_units})")
        if self.family in WEIGHTED_FAMILIES and weights is None:
            raise ConfigError(f"family {self.family} needs an aggregation weight vector")

    def to_dict(self) -> dict:
        pen = ("cv" if self.uses_cv
               else {"gamma": self.penalty.gamma, "lambda": self.penalty.lam})
        return {
            "family": self.family,
            "Q": self.Q,
            "midas": {k: {"L": m.L, "k_max": m.k_max, "dictionary": m.dictionary}
                      for k, m in self.midas.items()},
            "penalty": pen,
            "gamma_grid": [float(g) for g in self.gamma_grid],
            "n_lambda": self.n_lambda,
            "folds": self.folds,
            "solver": self.solver,
            "tol": self.tol,
            "max_iter": self.max_iter,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelSpec":
        try:
            pen = d.get("penalty", "cv")
            if isinstance(pen, Mapping):
                pen = PenaltySpec(float(pen.get("gamma", 1.0)), float(pen["lambda"]))
            return cls(
                family=d["family"],
                Q=int(d.get("Q", 1)),
                midas={k: MidasSpec.from_dict(v) for k, v in d.get("midas", {}).items()},
                penalty=pen,
                gamma_grid=tuple(float(g) for g in d.get("gamma_grid", GAMMA_GRID)),
                n_lambda=int(d.get("n_lambda", 50)),
                folds=int(d.get("folds", 5)),
                solver=d.get("solver", "pg"),
                tol=float(d.get("tol", DEFAULT_TOL)),
                max_iter=int(d.get("max_iter", DEFAULT_MAX_ITER)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"invalid model spec {dict(d)!r}: {exc}") from None


# ---------------------------------------------------------------------------
# array-level core


@dataclass
class PanelArrays:
    """Balanced estimation arrays: ``y`` is ``N x T``, ``ar`` is ``N x T x Q``,
    ``x`` is ``N x T x C``. ``x_groups`` partitions the ``C`` covariate columns.
    """

    y: np.ndarray
    ar: np.ndarray
    x: np.ndarray
    periods: np.ndarray
    x_groups: list
    x_names: list = field(default_factory=list)

    def __post_init__(self):
        self.y = np.atleast_2d(np.asarray(self.y, dtype=float))
        N, T = self.y.shape
        self.ar = np.asarray(self.ar, dtype=float).reshape(N, T, -1)
        self.x = np.asarray(self.x, dtype=float).reshape(N, T, -1)
        self.periods = np.asarray(self.periods)
        if len(self.periods) != T:
            raise DimensionError("one period label per column of y is required")
        if not self.x_names:
            self.x_names = [f"x{j}" for j in range(self.C)]

    @property
    def N(self) -> int:
        return self.y.shape[0]

    @property
    def T(self) -> int:
        return self.y.shape[1]

    @property
    def Q(self) -> int:
        return self.ar.shape[2]

    @property
    def C(self) -> int:
        return self.x.shape[2]

    def z(self) -> np.ndarray:
        """``N x T x (Q + C)`` unit regressors ``[AR | covariates]``."""
        return np.concatenate([self.ar, self.x], axis=2)

    def unit(self, i: int) -> "PanelArrays":
        return PanelArrays(self.y[i:i + 1], self.ar[i:i + 1], self.x[i:i + 1], self.periods,
                           self.x_groups, self.x_names)

    def aggregated(self, w) -> "PanelArrays":
        w = np.asarray(w, dtype=float)
        return PanelArrays((w @ self.y)[None], np.einsum("i,itq->tq", w, self.ar)[None],
                           np.einsum("i,itc->tc", w, self.x)[None], self.periods,
                           self.x_groups, self.x_names)


def _unit_groups(Q: int, x_groups, offset: int = 0, ar_single_group=True) -> list:
    out = []
    if Q:
        if ar_single_group:
            out.append(np.arange(offset, offset + Q))
        else:
            out.extend([offset + q] for q in range(Q))
    out.extend(np.asarray(g) + offset + Q for g in x_groups)
    return out


def family_design(family: str, pa: PanelArrays, w=None):
    """Stacked design ``(X, y, periods, groups, names)`` for one family.

    For TS the single-unit design is returned; call it per unit.
    """
    N, T, Q, C = pa.N, pa.T, pa.Q, pa.C
    ar_names = [f"ar{q + 1}" for q in range(Q)]
    if family in ("P", "TS") or (family == "A" and N == 1):
        X = pa.z().reshape(N * T, Q + C)
        groups = _unit_groups(Q, pa.x_groups, ar_single_group=(family != "P"))
        return (X, pa.y.ravel(), np.tile(pa.periods, N), GroupStructure(tuple(groups)),
                ar_names + list(pa.x_names))
    if family == "HetAR":
        ar = np.zeros((N, T, N * Q))
        for i in range(N):
            ar[i, :, i * Q:(i + 1) * Q] = pa.ar[i]
        X = np.concatenate([ar, pa.x], axis=2).reshape(N * T, N * Q + C)
        groups = [np.arange(i * Q, (i + 1) * Q) for i in range(N)] if Q else []
        groups += [np.asarray(g) + N * Q for g in pa.x_groups]
        names = [f"u{i}.ar{q + 1}" for i in range(N) for q in range(Q)] + list(pa.x_names)
        return X, pa.y.ravel(), np.tile(pa.periods, N), GroupStructure(tuple(groups)), names
    if w is None:
        raise ConfigError(f"family {family} needs aggregation weights")
    w = np.asarray(w, dtype=float)
    if family == "A":
        return family_design("TS", pa.aggregated(w))
    if family == "AC":
        width = Q + C
        X = (w[:, None, None] * pa.z()).transpose(1, 0, 2).reshape(T, N * width)
        groups = []
        for i in range(N):
            groups += _unit_groups(Q, pa.x_groups, offset=i * width)
        names = [f"u{i}.{n}" for i in range(N) for n in ar_names + list(pa.x_names)]
        return X, w @ pa.y, pa.periods, GroupStructure(tuple(groups)), names
    raise ConfigError(f"unknown family {family!r}")


def _intercept_only(X, y, groups, gamma) -> SgLassoFit:
    # every lambda > 0 selects the empty model; the lambda = 0 fit from zero is it
    return sg_lasso_fit(X, y, groups, PenaltySpec(gamma, 0.0))


def _fit_one(X, y, periods, groups, spec: ModelSpec):
    if not spec.uses_cv:
        return sg_lasso_fit(X, y, groups, spec.penalty, tol=spec.tol, max_iter=spec.max_iter,
                            solver=spec.solver), None
    try:
        cv = panel_cv(X, y, periods, groups, gamma_grid=spec.gamma_grid,
                      n_lambda=spec.n_lambda, folds=spec.folds, solver=spec.solver,
                      tol=spec.tol, max_iter=spec.max_iter)
    except DegeneratePathError:
        log.warning("constant response after demeaning: intercept-only fit")
        return _intercept_only(X, y, groups, float(max(spec.gamma_grid))), None
    return cv.fit, cv


@dataclass
class CoreFit:
    family: str
    fits: list
    cv: list
    groups: GroupStructure
    names: list
    N: int
    Q: int
    C: int
    weights: Optional[np.ndarray] = None
    failures: dict = field(default_factory=dict)


def fit_arrays(family: str, pa: PanelArrays, spec: ModelSpec, w=None) -> CoreFit:
    """Fit one family on balanced arrays (rows with a NaN target or regressor are dropped)."""
    if family in WEIGHTED_FAMILIES:
        if w is None:
            raise ConfigError(f"family {family} needs aggregation weights")
        w = np.asarray(getattr(w, "weights", w), dtype=float)
        if w.shape != (pa.N,):
            raise DimensionError(f"{len(w)} weights for {pa.N} units")
    if family == "TS":
        fits, cvs, failures, groups, names = [], [], {}, None, None
        for i in range(pa.N):
            X, y, per, groups, names = family_design("TS", pa.unit(i))
            ok = ~np.isnan(y) & ~np.isnan(X).any(axis=1)
            try:
                f, cv = _fit_one(X[ok], y[ok], per[ok], groups, spec)
            except PanelNowcastError as exc:
                log.warning("unit %d excluded: %s", i, exc)
                failures[i] = f"{type(exc).__name__}: {exc}"
                f, cv = None, None
            fits.append(f)
            cvs.append(cv)
        return CoreFit(family, fits, cvs, groups, names, pa.N, pa.Q, pa.C, None, failures)
    X, y, per, groups, names = family_design(family, pa, w)
    ok = ~np.isnan(y) & ~np.isnan(X).any(axis=1)
    f, cv = _fit_one(X[ok], y[ok], per[ok], groups, spec)
    return CoreFit(family, [f], [cv], groups, names, pa.N, pa.Q, pa.C, w)


def unit_equivalents(core: CoreFit):
    """Per-unit ``(a, B)`` with unit predictions ``a_i + z_i'B_i``.

    Units whose TS fit failed get NaN rows.
    """
    N, Q, C = core.N, core.Q, core.C
    a = np.full(N, np.nan)
    B = np.full((N, Q + C), np.nan)
    fam = core.family
    if fam == "TS":
        for i, f in enumerate(core.fits):
            if f is not None:
                a[i], B[i] = f.intercept, f.coef
        return a, B
    f = core.fits[0]
    if fam in ("P", "A"):
        a[:] = f.intercept
        B[:] = f.coef
    elif fam == "HetAR":
        a[:] = f.intercept
        for i in range(N):
            B[i, :Q] = f.coef[i * Q:(i + 1) * Q]
            B[i, Q:] = f.coef[N * Q:]
    elif fam == "AC":
        a[:] = f.intercept
        B[:] = f.coef.reshape(N, Q + C)
    return a, B


def predict_arrays(core: CoreFit, ar_new, x_new):
    """Unit-level predictions and the family's own aggregate (A, AC only).

    ``ar_new`` is ``N x Q`` and ``x_new`` is ``N x C`` at the target clock.
    """
    z = np.concatenate([np.asarray(ar_new, float).reshape(core.N, core.Q),
                        np.asarray(x_new, float).reshape(core.N, core.C)], axis=1)
    a, B = unit_equivalents(core)
    unit_pred = a + np.einsum("ij,ij->i", z, np.nan_to_num(B))
    unit_pred[np.isnan(a)] = np.nan
    agg = None
    if core.family == "A":
        agg = float(core.fits[0].predict(core.weights @ z))
    elif core.family == "AC":
        agg = float(core.fits[0].predict((core.weights[:, None] * z).ravel()))
    return unit_pred, agg


# ---------------------------------------------------------------------------
# dataset level


@dataclass
class FitBundle:
    family: str
    fits: list
    groups: GroupStructure
    names: list
    unit_ids: tuple
    clock: NowcastClock
    spec: ModelSpec
    training_periods: list
    weights: Optional[np.ndarray] = None
    cv: list = field(default_factory=list, repr=False)
    failures: dict = field(default_factory=dict)

    @property
    def core(self) -> CoreFit:
        C = sum(len(g) for g in self._x_groups())
        return CoreFit(self.family, self.fits, self.cv, self.groups, self.names,
                       len(self.unit_ids), self.spec.Q, C, self.weights, self.failures)

    def _x_groups(self):
        Q = self.spec.Q
        if self.family == "AC":
            width = len(self.names) // len(self.unit_ids)
            return [np.arange(width - Q)]
        n_ar = Q * len(self.unit_ids) if self.family == "HetAR" else Q
        return [np.arange(len(self.names) - n_ar)]

    def active_indicators(self) -> dict:
        """Group activity (1/0) per fit, keyed by a readable group label."""
        out = {}
        for k, f in enumerate(self.fits):
            if f is None:
                continue
            prefix = f"{self.unit_ids[k]}:" if self.family == "TS" else ""
            for g, on in zip(self.groups.groups, f.active_groups()):
                label = self.names[g[0]] if len(g) == 1 else \
                    self.names[g[0]].split("[")[0].rsplit(".ar", 1)[0] + \
                    ("" if "[" in self.names[g[0]] else ".ar")
                out[prefix + label] = int(on)
        return out

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "unit_ids": list(self.unit_ids),
            "clock": {"period": self.clock.period, "step": self.clock.step},
            "spec": self.spec.to_dict(),
            "names": list(self.names),
            "groups": [g.tolist() for g in self.groups.groups],
            "training_periods": [int(p) for p in self.training_periods],
            "weights": None if self.weights is None else self.weights.tolist(),
            "fits": [None if f is None else f.to_dict() for f in self.fits],
            "failures": {str(k): v for k, v in self.failures.items()},
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def from_dict(cls, d: Mapping) -> "FitBundle":
        return cls(
            family=d["family"],
            fits=[None if f is None else SgLassoFit.from_dict(f) for f in d["fits"]],
            groups=GroupStructure(tuple(d["groups"])),
            names=list(d["names"]),
            unit_ids=tuple(d["unit_ids"]),
            clock=NowcastClock(int(d["clock"]["period"]), int(d["clock"]["step"])),
            spec=ModelSpec.from_dict(d["spec"]),
            training_periods=list(d["training_periods"]),
            weights=None if d["weights"] is None else np.asarray(d["weights"], dtype=float),
            failures={int(k): v for k, v in d.get("failures", {}).items()},
        )


def horizon_label(clock: NowcastClock) -> str:
    for k, v in HORIZONS.items():
        if v == clock.step:
            return k
    return "forecast" if clock.step == 0 else f"step{clock.step}"


def panel_arrays(ds: PanelDataset, clock: NowcastClock, spec: ModelSpec,
                 balanced: bool = True):
    """Training arrays at ``clock`` plus the regressors for the nowcast itself.

    Training uses the periods before ``clock.period`` with enough history;
    with ``balanced`` only periods where every unit's target is observed.
    """
    specs = midas_specs(ds, spec.midas)
    periods = feasible_periods(ds, clock, specs, spec.Q)
    if balanced:
        periods = [p for p in periods if not np.any(np.isnan(ds.targets[:, p]))]
    if not periods:
        raise InsufficientHistoryError(f"no usable training periods before period {clock.period}")
    clocks = [clock.shifted(p) for p in periods] + [clock]
    d = build_design(ds, clocks, specs, spec.Q, allow_missing=not balanced)
    n, T1 = ds.N, len(clocks)
    y = d.y.reshape(n, T1)
    ar = d.ar.reshape(n, T1, spec.Q)
    x = d.x.reshape(n, T1, -1)
    train = PanelArrays(y[:, :-1], ar[:, :-1], x[:, :-1], np.asarray(periods), d.x_groups,
                        d.x_names)
    return train, ar[:, -1], x[:, -1]


def _fit_dataset(family: str, ds: PanelDataset, spec: ModelSpec, clock: NowcastClock,
                 w=None) -> FitBundle:
    wv = None if w is None else np.asarray(getattr(w, "weights", w), dtype=float)
    if family == "A":
        agg = aggregate_series(ds, wv)
        train, _, _ = panel_arrays(agg, clock, spec)
        core = fit_arrays("TS", train, spec)
        core.family, core.weights = "A", wv
    else:
        train, _, _ = panel_arrays(ds, clock, spec, balanced=(family != "TS"))
        core = fit_arrays(family, train, spec, wv)
    return FitBundle(family, core.fits, core.groups, core.names, tuple(ds.unit_ids), clock,
                     spec, list(train.periods), wv, core.cv, core.failures)


def fit_pooled(ds: PanelDataset, spec: ModelSpec, clock: NowcastClock) -> FitBundle:
    # N = 1 is allowed here (it reduces to TS); the N >= 2 rule is enforced by fit()
    return _fit_dataset("P", ds, spec, clock)


def fit_hetar(ds: PanelDataset, spec: ModelSpec, clock: NowcastClock) -> FitBundle:
    if ds.N < 2:
        raise ConfigError("HetAR needs N >= 2 units")
    return _fit_dataset("HetAR", ds, spec, clock)


def fit_ts(ds: PanelDataset, spec: ModelSpec, clock: NowcastClock) -> FitBundle:
    return _fit_dataset("TS", ds, spec, clock)


def fit_agg_on_agg(ds: PanelDataset, spec: ModelSpec, clock: NowcastClock, w) -> FitBundle:
    return _fit_dataset("A", ds, spec, clock, w)


def fit_agg_on_components(ds: PanelDataset, spec: ModelSpec, clock: NowcastClock,
                          w) -> FitBundle:
    return _fit_dataset("AC", ds, spec, clock, w)


def fit(ds: PanelDataset, spec: ModelSpec, clock: NowcastClock, w=None) -> FitBundle:
    """Dispatch on ``spec.family`` after checking the family's requirements."""
    spec.validate_for(ds.N, w)
    return _fit_dataset(spec.family, ds, spec, clock, w)


@dataclass
class NowcastSet:
    unit_ids: tuple
    unit_predictions: np.ndarray
    period: object
    horizon: str
    aggregate: Optional[float] = None
    family: str = ""
    warnings: list = field(default_factory=list)

    def rows(self):
        for u, p in zip(self.unit_ids, self.unit_predictions):
            yield u, self.period, self.horizon, float(p)
        if self.aggregate is not None:
            yield "aggregate", self.period, self.horizon, float(self.aggregate)

    def to_csv(self, path, append: bool = False) -> None:
        with open(path, "a" if append else "w", newline="") as fh:
            out = csv.writer(fh)
            if not append:
                out.writerow(["unit", "period", "horizon", "prediction"])
            for u, per, h, p in self.rows():
                out.writerow([u, per, h, repr(p)])


def nowcast(bundle: FitBundle, ds: PanelDataset, clock: NowcastClock, w=None) -> NowcastSet:
    """Predict every unit at ``clock``; aggregate with ``w`` when given.

    A and AC always report their own direct aggregate prediction (with the
    weights fixed at estimation time). Units whose TS fit failed are left out,
    and the remaining weights are renormalized with a warning.
    """
    if bundle.training_periods and max(bundle.training_periods) >= clock.period:
        raise DataError("bundle was estimated on data from or after the nowcast period")
    spec = bundle.spec
    specs = midas_specs(ds, spec.midas)
    d = build_design(ds, [clock], specs, spec.Q, allow_missing=bundle.family == "TS")
    core = bundle.core
    core.C = d.x.shape[1]
    unit_pred, agg = predict_arrays(core, d.ar, d.x)
    label = ds.time_index[clock.period] if clock.period < ds.T else clock.period
    warnings = [f"unit {bundle.unit_ids[i]!r} excluded: {m}" for i, m in bundle.failures.items()]
    keep = ~np.isnan(unit_pred)
    warnings += [f"unit {bundle.unit_ids[i]!r} excluded: lagged target unavailable"
                 for i in np.flatnonzero(~keep) if i not in bundle.failures]
    if agg is None and w is not None:
        wv = np.asarray(getattr(w, "weights", w), dtype=float)
        if wv.shape != (ds.N,):
            raise DimensionError(f"{len(wv)} weights for {ds.N} units")
        if not np.all(keep):
            if wv[keep].sum() <= 0:
                raise DataError("every weighted unit failed to fit")
            warnings.append("weights renormalized over the fitted units")
            wv = wv[keep] / wv[keep].sum()
        agg = float(wv @ unit_pred[keep])
    ids = tuple(u for u, k in zip(ds.unit_ids, keep) if k)
    return NowcastSet(ids, unit_pred[keep], label, horizon_label(clock), agg, bundle.family,
                      warnings)


# ---------------------------------------------------------------------------
# forecast-error decomposition


@dataclass(frozen=True)
class Decomposition:
    family: str
    error: float
    estimation: float
    heterogeneity: float
    noise: float

    @property
    def residual(self) -> float:
        return self.error - (self.estimation + self.heterogeneity + self.noise)


def decompose_error(core: CoreFit, z_new, w, alpha, beta, eps, y_true: float,
                    proxy=None) -> Decomposition:
    """Split ``Yhat - Y`` into estimation, heterogeneity and noise terms.

    ``z_new`` is ``N x (Q + C)``, ``beta`` the true ``N x (Q + C)`` slopes,
    ``alpha`` the true intercepts and ``eps`` the realized shocks.
    ``proxy`` optionally supplies ``(a_k, B_k)`` population-proxy coefficients;
    by default the fitted coefficients stand in, so the estimation term is 0.
    """
    w = np.asarray(w, dtype=float)
    z = np.asarray(z_new, dtype=float)
    a_hat, B_hat = unit_equivalents(core)
    a_k, B_k = (a_hat, B_hat) if proxy is None else proxy
    pred_units = a_hat + np.einsum("ij,ij->i", z, B_hat)
    _, agg = predict_arrays(core, z[:, :core.Q], z[:, core.Q:])
    Yhat = float(w @ pred_units) if agg is None else agg
    est = float(w @ (a_hat - a_k + np.einsum("ij,ij->i", z, B_hat - B_k)))
    het = float(w @ (a_k - alpha + np.einsum("ij,ij->i", z, B_k - beta)))
    noise = -float(w @ eps)
    return Decomposition(core.family, Yhat - y_true, est, het, noise)
