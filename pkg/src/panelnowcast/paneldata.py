"""Mixed-frequency panel container, long-format CSV ingestion and lag windows.

Quarterly targets are stored as an ``N x T`` matrix. Each covariate is an
``N x (T * n_H)`` matrix at its own (higher) frequency, aligned so that the
first ``n_H`` columns fall inside the first quarter.

Only a *ragged edge* is tolerated: series may stop before the end of the
sample (the value is not published yet) and are padded with NaN there.
Gaps inside a series, or series that start late, are load errors.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Optional

import numpy as np
import pandas as pd

from .errors import (
    DataGapError,
    DimensionError,
    FrequencyError,
    InsufficientHistoryError,
    SchemaError,
    UnknownUnitError,
)

log = logging.getLogger(__name__)

REQUIRED_COLUMNS = ("unit", "date", "series", "frequency", "value")
MONTHS_PER_QUARTER = 3
# information cutoffs, in months into the target quarter
HORIZONS = {"2-month": 1, "1-month": 2, "EoQ": 3}


@dataclass(frozen=True)
class FrequencyRatio:
    high_per_low: int
    low_lags: int = 1

    def __post_init__(self):
        if self.high_per_low < 1 or self.low_lags < 1:
            raise ValueError("high_per_low and low_lags must be positive")

    @property
    def k_max(self) -> int:
        return self.high_per_low * self.low_lags


@dataclass(frozen=True)
class Covariate:
    name: str
    values: np.ndarray
    ratio: FrequencyRatio
    frequency: str = "M"
    release_lag: int = 0
    labels: tuple = ()

    def __post_init__(self):
        if self.release_lag < 0:
            raise ValueError("release_lag must be nonnegative")


@dataclass(frozen=True)
class NowcastClock:
    """Target period plus the information cutoff inside it.

    ``step`` counts elapsed sub-periods (months by default) of the target
    period; ``step == 0`` puts the cutoff at the end of the previous period,
    which makes the exercise a forecast.
    """

    period: int
    step: int = MONTHS_PER_QUARTER
    steps_per_period: int = MONTHS_PER_QUARTER

    def __post_init__(self):
        if not 0 <= self.step <= self.steps_per_period:
            raise ValueError(f"step must lie in 0..{self.steps_per_period}")

    @classmethod
    def at_horizon(cls, period: int, horizon: str) -> "NowcastClock":
        try:
            return cls(period, HORIZONS[horizon])
        except KeyError:
            raise ValueError(f"unknown horizon {horizon!r}; use one of {list(HORIZONS)}")

    @property
    def is_forecast(self) -> bool:
        return self.step == 0

    def hf_index(self, high_per_low: int) -> int:
        """Absolute index of the newest high-frequency slot at the cutoff."""
        inside = math.ceil(self.step * high_per_low / self.steps_per_period)
        return self.period * high_per_low + inside - 1

    def shifted(self, period: int) -> "NowcastClock":
        return replace(self, period=period)


@dataclass(frozen=True)
class PanelDataset:
    unit_ids: tuple
    time_index: tuple
    targets: np.ndarray
    covariates: Mapping[str, Covariate] = field(default_factory=dict)
    levels: Optional[np.ndarray] = None
    aggregate: Optional[np.ndarray] = None
    target_name: str = "y"
    level_name: Optional[str] = None
    aggregate_unit: Optional[str] = None

    def __post_init__(self):
        N, T = len(self.unit_ids), len(self.time_index)
        targets = np.asarray(self.targets, dtype=float)
        if targets.shape != (N, T):
            raise DimensionError(f"targets must be {N}x{T}, got {targets.shape}")
        object.__setattr__(self, "targets", targets)
        for cov in self.covariates.values():
            if cov.values.shape != (N, T * cov.ratio.high_per_low):
                raise DimensionError(
                    f"covariate {cov.name!r} must be {N}x{T * cov.ratio.high_per_low}")
        if self.levels is not None and np.shape(self.levels) != (N, T):
            raise DimensionError("levels must match the targets' shape")
        if self.aggregate is not None and np.shape(self.aggregate) != (T,):
            raise DimensionError("aggregate target must have one value per period")

    @property
    def N(self) -> int:
        return len(self.unit_ids)

    @property
    def T(self) -> int:
        return len(self.time_index)

    @property
    def K(self) -> int:
        return len(self.covariates)

    def unit_index(self, unit) -> int:
        try:
            return self.unit_ids.index(unit)
        except ValueError:
            raise UnknownUnitError(f"unknown unit {unit!r}") from None

    def period_index(self, label) -> int:
        try:
            return self.time_index.index(label)
        except ValueError:
            raise KeyError(f"period {label!r} not in the sample") from None

    def subset(self, units) -> "PanelDataset":
        idx = [self.unit_index(u) for u in units]
        covs = {k: replace(c, values=c.values[idx]) for k, c in self.covariates.items()}
        return replace(
            self,
            unit_ids=tuple(self.unit_ids[i] for i in idx),
            targets=self.targets[idx],
            covariates=covs,
            levels=None if self.levels is None else self.levels[idx],
        )

    def truncated(self, last_period: int) -> "PanelDataset":
        """Blank out (NaN) everything published after ``last_period``."""
        tgt = self.targets.copy()
        tgt[:, last_period + 1:] = np.nan
        covs = {}
        for k, c in self.covariates.items():
            v = c.values.copy()
            v[:, (last_period + 1) * c.ratio.high_per_low:] = np.nan
            covs[k] = replace(c, values=v)
        lv = None if self.levels is None else self.levels.copy()
        if lv is not None:
            lv[:, last_period + 1:] = np.nan
        agg = None if self.aggregate is None else self.aggregate.copy()
        if agg is not None:
            agg[last_period + 1:] = np.nan
        return replace(self, targets=tgt, covariates=covs, levels=lv, aggregate=agg)


# ---------------------------------------------------------------------------
# window extraction and aggregation


def extract_window(ds: PanelDataset, unit, covariate: str, clock: NowcastClock,
                   k_max: int) -> np.ndarray:
    """High-frequency lags ``x_{tau - j/n_H}``, ``j = 0..k_max-1``, newest first.

    Slots newer than the covariate's publication lag (or beyond the ragged
    edge) repeat the most recent published value.
    """
    if k_max < 1:
        raise ValueError("k_max must be positive")
    i = ds.unit_index(unit) if not isinstance(unit, (int, np.integer)) else int(unit)
    cov = ds.covariates[covariate]
    pos = clock.hf_index(cov.ratio.high_per_low)
    if pos - (k_max - 1) < 0:
        raise InsufficientHistoryError(
            f"{covariate!r}: window of {k_max} lags at period {clock.period} "
            f"step {clock.step} starts before the sample")
    series = cov.values[i]
    avail = pos - cov.release_lag
    while avail >= 0 and np.isnan(series[avail]):
        avail -= 1
    if avail < 0:
        raise InsufficientHistoryError(
            f"{covariate!r}: nothing published for unit {ds.unit_ids[i]!r} "
            f"by period {clock.period} step {clock.step}")
    idx = np.minimum(pos - np.arange(k_max), avail)
    return series[idx]


def _weights_array(w, n: int) -> np.ndarray:
    arr = np.asarray(getattr(w, "weights", w), dtype=float).ravel()
    if arr.shape != (n,):
        raise DimensionError(f"expected {n} weights, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("weights must be finite")
    return arr


def aggregate_series(ds: PanelDataset, w, unit_id: str = "aggregate") -> PanelDataset:
    """Single-unit dataset whose series are ``sum_i w_i * series_i``."""
    arr = _weights_array(w, ds.N)
    covs = {k: replace(c, values=(arr @ c.values)[None, :]) for k, c in ds.covariates.items()}
    return replace(
        ds,
        unit_ids=(unit_id,),
        targets=(arr @ ds.targets)[None, :],
        covariates=covs,
        levels=None if ds.levels is None else (arr @ ds.levels)[None, :],
    )


# ---------------------------------------------------------------------------
# CSV ingestion


def _quarter(label: str) -> pd.Period:
    return pd.Period(label, freq="Q")


def _parse_dates(dates: pd.Series, freq: str, where: str) -> pd.PeriodIndex:
    try:
        if freq == "Q":
            return pd.PeriodIndex([_quarter(d) for d in dates], freq="Q")
        if freq == "M":
            return pd.PeriodIndex(pd.to_datetime(dates, format="%Y-%m"), freq="M")
        if freq in ("W", "D"):
            return pd.PeriodIndex(pd.to_datetime(dates, format="%Y-%m-%d"), freq="D")
    except (ValueError, TypeError) as exc:
        raise SchemaError(f"{where}: unparseable date ({exc})") from None
    raise FrequencyError(f"{where}: unsupported frequency {freq!r}")


def _label(p: pd.Period, freq: str) -> str:
    if freq == "Q":
        return f"{p.year}-Q{p.quarter}"
    if freq == "M":
        return f"{p.year:04d}-{p.month:02d}"
    return p.strftime("%Y-%m-%d")


def _load_config(config) -> dict:
    if config is None:
        return {}
    if isinstance(config, (str, Path)):
        with open(config) as fh:
            return json.load(fh)
    return dict(config)


def _infer_roles(df: pd.DataFrame) -> dict:
    freqs = df.groupby("series")["frequency"].first()
    quarterly = sorted(freqs[freqs == "Q"].index)
    if len(quarterly) != 1:
        raise SchemaError("without a config exactly one quarterly series (the target) is needed")
    roles = {quarterly[0]: {"role": "target"}}
    for s in sorted(freqs.index):
        if s not in roles:
            roles[s] = {"role": "covariate"}
    return roles


def load_panel_csv(path, config=None, columns: Optional[Mapping[str, str]] = None) -> PanelDataset:
    """Read a long-format panel (``unit,date,series,frequency,value``).

    Parameters
    ----------
    path : file path of the CSV.
    config : dict, JSON path or None
        ``{"series": {name: {"role": "target"|"covariate"|"level",
        "release_lag": int, "low_lags": int}}, "aggregate_unit": id}``.
        Without it the single quarterly series is the target and everything
        else is a covariate.
    columns : optional mapping from the canonical column names to the
        names used in the file.
    """
    cfg = _load_config(config)
    columns = dict(columns or cfg.get("columns") or {})
    df = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    rename = {columns.get(c, c): c for c in REQUIRED_COLUMNS}
    missing = [src for src in rename if src not in df.columns]
    if missing:
        raise SchemaError(f"{path}: missing column(s) {missing}")
    df = df.rename(columns=rename)[list(REQUIRED_COLUMNS)].copy()
    df["_line"] = np.arange(len(df)) + 2
    bad = df["value"].str.strip() == ""
    if bad.any():
        row = df[bad].iloc[0]
        raise DataGapError(f"{path}:{row['_line']}: empty value for unit {row['unit']!r} "
                           f"series {row['series']!r} date {row['date']}")
    try:
        df["value"] = df["value"].astype(float)
    except ValueError as exc:
        raise SchemaError(f"{path}: non-numeric value ({exc})") from None

    roles = cfg.get("series") or _infer_roles(df)
    agg_unit = cfg.get("aggregate_unit")
    targets = [s for s, c in roles.items() if c.get("role") == "target"]
    if len(targets) != 1:
        raise SchemaError("exactly one series must have role 'target'")
    target = targets[0]
    level = next((s for s, c in roles.items() if c.get("role") == "level"), None)
    covs = [s for s, c in roles.items() if c.get("role") == "covariate"]
    unknown = sorted(set(df["series"]) - set(roles))
    if unknown:
        log.info("ignoring undeclared series %s", unknown)
    for s in [target] + covs + ([level] if level else []):
        if s not in set(df["series"]):
            raise SchemaError(f"{path}: declared series {s!r} not found")

    series_freq = {}
    for s, g in df.groupby("series"):
        f = set(g["frequency"])
        if len(f) != 1:
            raise FrequencyError(f"{path}: series {s!r} mixes frequencies {sorted(f)}")
        series_freq[s] = f.pop()
    for s in [target] + ([level] if level else []):
        if series_freq[s] != "Q":
            raise FrequencyError(f"series {s!r} must be quarterly")

    units = sorted(set(df.loc[df["unit"] != agg_unit, "unit"]))
    parsed = {}
    for s in [target] + covs + ([level] if level else []):
        sub = df[df["series"] == s]
        parsed[s] = sub.assign(period=_parse_dates(sub["date"], series_freq[s], f"{path} [{s}]"))

    quarters = []
    for s, sub in parsed.items():
        q = sub["period"] if series_freq[s] == "Q" else sub["period"].map(lambda p: p.asfreq("Q"))
        quarters.append(pd.PeriodIndex(q, freq="Q"))
    q_all = quarters[0].append(quarters[1:]) if len(quarters) > 1 else quarters[0]
    first, last = q_all.min(), q_all.max()
    qrange = pd.period_range(first, last, freq="Q")
    T = len(qrange)
    time_index = tuple(_label(q, "Q") for q in qrange)

    def quarterly_matrix(s, unit_list):
        out = np.full((len(unit_list), T), np.nan)
        sub = parsed[s]
        for k, u in enumerate(unit_list):
            g = sub[sub["unit"] == u].sort_values("period")
            if g.empty:
                raise DataGapError(f"series {s!r} has no data for unit {u!r}")
            if g["period"].duplicated().any():
                raise SchemaError(f"duplicate dates in series {s!r} unit {u!r}")
            pos = np.array([(p - first).n for p in g["period"]])
            _check_contiguous(pos, s, u, [_label(p, "Q") for p in g["period"]])
            out[k, pos] = g["value"].to_numpy()
        return out

    Y = quarterly_matrix(target, units)
    L = quarterly_matrix(level, units) if level else None
    agg = None
    if agg_unit is not None:
        if not (parsed[target]["unit"] == agg_unit).any():
            raise SchemaError(f"aggregate unit {agg_unit!r} has no target rows")
        agg = quarterly_matrix(target, [agg_unit])[0]

    cov_objs = {}
    for s in covs:
        cov_objs[s] = _covariate_matrix(parsed[s], s, series_freq[s], units, qrange,
                                        roles[s])

    return PanelDataset(
        unit_ids=tuple(units),
        time_index=time_index,
        targets=Y,
        covariates=cov_objs,
        levels=L,
        aggregate=agg,
        target_name=target,
        level_name=level,
        aggregate_unit=agg_unit,
    )


def _check_contiguous(pos, series, unit, labels):
    if pos[0] != 0:
        raise DataGapError(f"series {series!r} unit {unit!r} starts late ({labels[0]})")
    steps = np.diff(pos)
    if np.any(steps != 1):
        k = int(np.argmax(steps != 1))
        raise DataGapError(f"gap in series {series!r} unit {unit!r} after {labels[k]}")


def _covariate_matrix(sub, name, freq, units, qrange, spec) -> Covariate:
    first = qrange[0]
    T = len(qrange)
    if freq == "Q":
        n_h = 1
    elif freq == "M":
        n_h = MONTHS_PER_QUARTER
    else:
        counts = sub.groupby([sub["unit"], sub["period"].map(lambda p: p.asfreq("Q"))]).size()
        complete = counts.groupby(level=0).apply(lambda c: c.iloc[:-1] if len(c) > 1 else c)
        if complete.nunique() != 1:
            raise FrequencyError(
                f"series {name!r}: {freq} data must have the same number of observations "
                f"in every quarter (found {sorted(set(complete))})")
        n_h = int(complete.iloc[0])
    out = np.full((len(units), T * n_h), np.nan)
    labels = None
    for k, u in enumerate(units):
        g = sub[sub["unit"] == u].sort_values("period")
        if g.empty:
            raise DataGapError(f"series {name!r} has no data for unit {u!r}")
        if g["period"].duplicated().any():
            raise SchemaError(f"duplicate dates in series {name!r} unit {u!r}")
        lab = [_label(p, freq) for p in g["period"]]
        if freq in ("Q", "M"):
            start = first.asfreq(freq, how="start")
            pos = np.array([(p - start).n for p in g["period"]])
        else:
            q = g["period"].map(lambda p: p.asfreq("Q"))
            within = g.groupby(q).cumcount().to_numpy()
            pos = np.array([(qq - first).n for qq in q]) * n_h + within
            if np.any(within >= n_h):
                raise FrequencyError(f"series {name!r}: too many observations in a quarter")
            expect_step = 7 if freq == "W" else 1
            gaps = np.diff([p.ordinal for p in g["period"]])
            if freq == "W" and np.any(gaps != expect_step):
                raise FrequencyError(f"series {name!r} unit {u!r}: weekly spacing broken")
        _check_contiguous(pos, name, u, lab)
        out[k, pos] = g["value"].to_numpy()
        if labels is None or len(lab) > len(labels):
            labels = lab
    low_lags = int(spec.get("low_lags", 4 if n_h > 1 else 1))
    return Covariate(
        name=name,
        values=out,
        ratio=FrequencyRatio(n_h, low_lags),
        frequency=freq,
        release_lag=int(spec.get("release_lag", 0)),
        labels=tuple(labels),
    )


def panel_config(ds: PanelDataset) -> dict:
    """Config dict that reloads the CSV written by :func:`write_panel_csv`."""
    series = {ds.target_name: {"role": "target"}}
    for k, c in ds.covariates.items():
        series[k] = {"role": "covariate", "release_lag": c.release_lag,
                     "low_lags": c.ratio.low_lags}
    if ds.level_name:
        series[ds.level_name] = {"role": "level"}
    cfg = {"series": series}
    if ds.aggregate_unit is not None:
        cfg["aggregate_unit"] = ds.aggregate_unit
    return cfg


def _hf_labels(cov: Covariate, time_index) -> list:
    if cov.frequency == "Q":
        return list(time_index)
    if cov.frequency == "M":
        start = _quarter(time_index[0]).asfreq("M", how="start")
        return [_label(start + j, "M") for j in range(cov.values.shape[1])]
    if len(cov.labels) != cov.values.shape[1]:
        raise ValueError(f"covariate {cov.name!r} lacks date labels for writing")
    return list(cov.labels)


def write_panel_csv(ds: PanelDataset, path) -> None:
    """Write ``ds`` in long format; NaN (ragged-edge) cells are omitted."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(REQUIRED_COLUMNS)

        def rows(unit, name, freq, labels, values):
            for lab, v in zip(labels, values):
                if not np.isnan(v):
                    w.writerow([unit, lab, name, freq, repr(float(v))])

        for i, u in enumerate(ds.unit_ids):
            rows(u, ds.target_name, "Q", ds.time_index, ds.targets[i])
            if ds.levels is not None:
                rows(u, ds.level_name, "Q", ds.time_index, ds.levels[i])
            for name, cov in ds.covariates.items():
                rows(u, name, cov.frequency, _hf_labels(cov, ds.time_index), cov.values[i])
        if ds.aggregate is not None:
            rows(ds.aggregate_unit, ds.target_name, "Q", ds.time_index, ds.aggregate)
