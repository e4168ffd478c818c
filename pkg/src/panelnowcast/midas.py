"""MIDAS dictionaries and compression of high-frequency lag windows.

A window of ``k_max`` high-frequency lags (newest first) is mapped to ``L``
regressors ``r_l = (1/k_max) * sum_j w_l(j / n_H) * x_j`` where ``w_l`` are
orthonormal shifted Legendre polynomials on ``[0, n_L]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np
from numpy.polynomial import legendre

from .errors import DimensionError, DomainError, InsufficientHistoryError
from .paneldata import NowcastClock, PanelDataset

DEFAULT_L = 3
DEFAULT_MONTHLY_KMAX = 12


@dataclass(frozen=True)
class DictionarySpec:
    degree: int = DEFAULT_L
    family: str = "legendre"
    domain: float = 1.0

    def __post_init__(self):
        if self.degree < 1:
            raise ValueError("dictionary needs at least one function")
        if self.family != "legendre":
            raise ValueError(f"unsupported dictionary family {self.family!r}")
        if not self.domain > 0:
            raise ValueError("domain length must be positive")


@dataclass(frozen=True)
class DictionaryMatrix:
    values: np.ndarray
    scaled: bool = True

    @property
    def k_max(self) -> int:
        return self.values.shape[0]

    @property
    def L(self) -> int:
        return self.values.shape[1]


def shifted_legendre(spec: DictionarySpec, points) -> DictionaryMatrix:
    """Evaluate the orthonormal shifted Legendre basis at ``points`` in ``[0, q]``.

    The domain is rescaled to ``[0, 1]`` and column ``l`` holds
    ``sqrt(2l + 1) * P_l(2 s / q - 1)``; column 0 is identically one.
    """
    s = np.asarray(points, dtype=float).ravel()
    q = spec.domain
    eps = 1e-12 * q
    if np.any(s < -eps) or np.any(s > q + eps):
        raise DomainError(f"dictionary points must lie in [0, {q}]")
    u = np.clip(s / q, 0.0, 1.0)
    V = legendre.legvander(2.0 * u - 1.0, spec.degree - 1)
    V *= np.sqrt(2.0 * np.arange(spec.degree) + 1.0)
    return DictionaryMatrix(V)


def lag_dictionary(L: int, k_max: int, high_per_low: int) -> DictionaryMatrix:
    """Dictionary for lags ``j = 0..k_max-1`` evaluated at ``j / n_H`` on ``[0, k_max / n_H]``."""
    spec = DictionarySpec(L, "legendre", k_max / high_per_low)
    return shifted_legendre(spec, np.arange(k_max) / high_per_low)


def compress_window(x, W: DictionaryMatrix) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != W.k_max:
        raise DimensionError(f"window has {x.shape[-1]} lags, dictionary expects {W.k_max}")
    r = x @ W.values
    return r / W.k_max if W.scaled else r


@dataclass(frozen=True)
class MidasSpec:
    """Per-covariate lag settings: ``L`` basis functions over ``k_max`` lags."""

    L: int = DEFAULT_L
    k_max: Optional[int] = None
    dictionary: str = "legendre"

    def resolve_kmax(self, high_per_low: int) -> int:
        if self.k_max is not None:
            return int(self.k_max)
        return DEFAULT_MONTHLY_KMAX if high_per_low == 3 else 4 * high_per_low

    @classmethod
    def from_dict(cls, d: Mapping) -> "MidasSpec":
        return cls(int(d.get("L", DEFAULT_L)), d.get("k_max"), d.get("dictionary", "legendre"))


def covariate_windows(ds: PanelDataset, unit: int, covariate: str, clocks: Sequence[NowcastClock],
                      k_max: int) -> np.ndarray:
    """Stacked lag windows (one row per clock); same rules as ``extract_window``."""
    cov = ds.covariates[covariate]
    series = cov.values[unit]
    n_h = cov.ratio.high_per_low
    pos = np.array([c.hf_index(n_h) for c in clocks], dtype=np.int64)
    if np.any(pos - (k_max - 1) < 0):
        bad = clocks[int(np.argmax(pos - (k_max - 1) < 0))]
        raise InsufficientHistoryError(
            f"{covariate!r}: window of {k_max} lags at period {bad.period} starts before the sample")
    valid = np.flatnonzero(~np.isnan(series))
    last = valid[-1] if len(valid) else -1
    avail = np.minimum(pos - cov.release_lag, last)
    if np.any(avail < 0):
        raise InsufficientHistoryError(f"{covariate!r}: nothing published for unit "
                                       f"{ds.unit_ids[unit]!r} at the requested cutoff")
    idx = np.minimum(pos[:, None] - np.arange(k_max)[None, :], avail[:, None])
    return series[idx]


@dataclass
class Design:
    """Estimation-ready rows, unit-major then time-minor.

    ``ar`` holds the ``Q`` target lags, ``x`` the compressed covariate blocks;
    ``x_groups`` lists the column indices (within ``x``) of every covariate.
    """

    y: np.ndarray
    ar: np.ndarray
    x: np.ndarray
    unit: np.ndarray
    period: np.ndarray
    x_groups: list
    x_names: list
    Q: int
    n_units: int

    @property
    def n_rows(self) -> int:
        return len(self.y)

    def unit_rows(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.unit == i)


def midas_specs(ds: PanelDataset, specs: Optional[Mapping[str, MidasSpec]] = None) -> dict:
    specs = dict(specs or {})
    return {k: specs.get(k, MidasSpec()) for k in ds.covariates}


def build_design(ds: PanelDataset, clocks: Sequence[NowcastClock],
                 specs: Optional[Mapping[str, MidasSpec]] = None, Q: int = 1,
                 units: Optional[Sequence[int]] = None, allow_missing: bool = False) -> Design:
    """Stack ``[AR lags | compressed covariates]`` for every unit and clock.

    The target column is NaN where the target is not (yet) observed. Lagged
    targets must be available unless ``allow_missing`` is set, in which case
    missing lags stay NaN and the caller drops those rows.
    """
    if Q < 0:
        raise ValueError("Q must be nonnegative")
    specs = midas_specs(ds, specs)
    units = list(range(ds.N)) if units is None else list(units)
    periods = np.array([c.period for c in clocks], dtype=np.int64)
    if Q and np.any(periods - Q < 0):
        raise InsufficientHistoryError(f"{Q} target lags need history before period "
                                       f"{int(periods.min())}")
    dicts, names, groups = {}, [], []
    col = 0
    for k, cov in ds.covariates.items():
        sp = specs[k]
        kmax = sp.resolve_kmax(cov.ratio.high_per_low)
        dicts[k] = (kmax, lag_dictionary(sp.L, kmax, cov.ratio.high_per_low))
        groups.append(np.arange(col, col + sp.L))
        names.extend(f"{k}[{l}]" for l in range(sp.L))
        col += sp.L

    ys, ars, xs = [], [], []
    for i in units:
        ys.append(ds.targets[i, periods])
        ar = np.column_stack([ds.targets[i, periods - q] for q in range(1, Q + 1)]) if Q \
            else np.empty((len(periods), 0))
        if not allow_missing and np.any(np.isnan(ar)):
            raise InsufficientHistoryError(
                f"lagged target unavailable for unit {ds.unit_ids[i]!r}")
        ars.append(ar)
        blocks = [compress_window(covariate_windows(ds, i, k, clocks, kmax), W)
                  for k, (kmax, W) in dicts.items()]
        xs.append(np.hstack(blocks) if blocks else np.empty((len(periods), 0)))
    n = len(units)
    return Design(
        y=np.concatenate(ys) if ys else np.empty(0),
        ar=np.vstack(ars) if ars else np.empty((0, Q)),
        x=np.vstack(xs) if xs else np.empty((0, col)),
        unit=np.repeat(np.arange(n), len(periods)),
        period=np.tile(periods, n),
        x_groups=groups,
        x_names=names,
        Q=Q,
        n_units=n,
    )


def feasible_periods(ds: PanelDataset, clock: NowcastClock,
                     specs: Optional[Mapping[str, MidasSpec]] = None, Q: int = 1) -> list:
    """Periods before ``clock.period`` with enough history at the same intra-period step."""
    specs = midas_specs(ds, specs)
    start = Q
    for k, cov in ds.covariates.items():
        kmax = specs[k].resolve_kmax(cov.ratio.high_per_low)
        n_h = cov.ratio.high_per_low
        while clock.shifted(start).hf_index(n_h) - (kmax - 1) < 0 \
                or clock.shifted(start).hf_index(n_h) - cov.release_lag < 0:
            start += 1
    return list(range(start, clock.period))
