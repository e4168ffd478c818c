"""Rolling real-time evaluation of aggregate nowcasts.

For every out-of-sample period and horizon the dataset is cut at the clock's
information set (later targets and later high-frequency observations are
blanked), tuning is re-selected and every model is refitted: an expanding
window that cannot peek past the cutoff.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence

import numpy as np

from .aggregation import combine_forecasts, weights_for_period
from .errors import ConfigError, DataError, NumericError
from .models import WEIGHTED_FAMILIES, ModelSpec, fit, nowcast
from .paneldata import NowcastClock, PanelDataset

log = logging.getLogger(__name__)

COMBINATION = "combination"


@dataclass(frozen=True)
class EvaluationWindow:
    first: object
    last: object
    scheme: str = "expanding"

    def indices(self, ds: PanelDataset) -> list:
        try:
            a, b = ds.period_index(self.first), ds.period_index(self.last)
        except KeyError as exc:
            raise ConfigError(f"evaluation window outside the sample: {exc}") from None
        if a > b:
            raise ConfigError("evaluation window must satisfy first <= last")
        if a < 1:
            raise DataError("the first out-of-sample period needs at least one prior period")
        if self.scheme != "expanding":
            raise ConfigError("only expanding windows are supported")
        return list(range(a, b + 1))


def information_set(ds: PanelDataset, clock: NowcastClock) -> PanelDataset:
    """Copy of ``ds`` holding only what is known at ``clock``."""
    t = clock.period
    tgt = ds.targets.copy()
    tgt[:, t:] = np.nan
    covs = {}
    for k, c in ds.covariates.items():
        v = c.values.copy()
        v[:, clock.hf_index(c.ratio.high_per_low) + 1:] = np.nan
        covs[k] = replace(c, values=v)
    lv = None if ds.levels is None else ds.levels.copy()
    if lv is not None:
        lv[:, t:] = np.nan
    agg = None if ds.aggregate is None else ds.aggregate.copy()
    if agg is not None:
        agg[t:] = np.nan
    return replace(ds, targets=tgt, covariates=covs, levels=lv, aggregate=agg)


def subset_units(ds: PanelDataset, units: Sequence) -> PanelDataset:
    """Restrict the panel to ``units`` (order as given); weights are recomputed on it."""
    return ds.subset(list(units))


def nowcast_period(ds: PanelDataset, models: Mapping[str, ModelSpec], schemes: Sequence[str],
                   clock: NowcastClock) -> dict:
    """Aggregate nowcasts ``{(model, scheme): value}`` at one clock."""
    info = information_set(ds, clock)
    weights = {s: weights_for_period(info, s, clock.period) for s in schemes}
    out = {}
    for name, spec in models.items():
        if spec.family in WEIGHTED_FAMILIES:
            for s, w in weights.items():
                b = fit(info, spec, clock, w)
                out[(name, s)] = nowcast(b, info, clock).aggregate
        else:
            b = fit(info, spec, clock)
            for s, w in weights.items():
                out[(name, s)] = nowcast(b, info, clock, w).aggregate
    return out


def realized_aggregate(ds: PanelDataset, scheme: str, t: int) -> float:
    """Outcome to score against: the published aggregate if present, else the
    scheme-weighted sum of unit outcomes."""
    if ds.aggregate is not None and not np.isnan(ds.aggregate[t]):
        return float(ds.aggregate[t])
    w = weights_for_period(ds, scheme, t)
    y = ds.targets[:, t]
    if np.any(np.isnan(y)):
        raise DataError(f"outcome for period {ds.time_index[t]!r} is not observed")
    return float(w.weights @ y)


@dataclass
class RmseReport:
    rows: list
    benchmark: str
    predictions: list = field(default_factory=list, repr=False)

    def get(self, model, scheme, horizon, sample_tag="full") -> dict:
        for r in self.rows:
            if (r["model"], r["weight_scheme"], r["horizon"], r["sample_tag"]) == \
                    (model, scheme, horizon, sample_tag):
                return r
        raise KeyError((model, scheme, horizon, sample_tag))

    def to_csv(self, path) -> None:
        cols = ["model", "weight_scheme", "horizon", "sample_tag", "rmse",
                "rmse_ratio_vs_benchmark"]
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(cols)
            for r in self.rows:
                out.writerow([r[c] if not isinstance(r[c], float) else repr(r[c]) for c in cols])

    def predictions_to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["period", "horizon", "model", "weight_scheme", "prediction", "actual"])
            for p in self.predictions:
                out.writerow([p["period"], p["horizon"], p["model"], p["weight_scheme"],
                              repr(p["prediction"]), repr(p["actual"])])


def _rmse(e) -> float:
    e = np.asarray(e, dtype=float)
    return math.sqrt(float(np.mean(e ** 2)))


def rolling_evaluate(ds: PanelDataset, models: Mapping[str, ModelSpec], schemes: Sequence[str],
                     horizons: Sequence[str], window: EvaluationWindow,
                     benchmark: Optional[str] = None,
                     samples: Optional[Mapping[str, tuple]] = None,
                     combine: bool = True) -> RmseReport:
    """Expanding-window evaluation; RMSE per (model, scheme, horizon, sample).

    ``samples`` maps a tag to ``(first_label, last_label)`` subsample cutoffs;
    the full window is always reported as ``"full"``. With two or more models
    an equal-weight combination row is added.
    """
    if not models:
        raise ConfigError("at least one model is required")
    benchmark = benchmark or next(iter(models))
    if benchmark not in models and benchmark != COMBINATION:
        raise ConfigError(f"benchmark {benchmark!r} is not one of the configured models")
    for name, spec in models.items():
        spec.validate_for(ds.N, weights=True)
    periods = window.indices(ds)
    tags = {"full": set(periods)}
    for tag, (a, b) in (samples or {}).items():
        try:
            lo, hi = ds.period_index(a), ds.period_index(b)
        except KeyError as exc:
            raise ConfigError(f"sample {tag!r}: {exc}") from None
        tags[tag] = {t for t in periods if lo <= t <= hi}

    names = list(models)
    use_comb = combine and len(names) >= 2
    preds = []
    for t in periods:
        for h in horizons:
            clock = NowcastClock.at_horizon(t, h)
            got = nowcast_period(ds, models, schemes, clock)
            for s in schemes:
                actual = realized_aggregate(ds, s, t)
                members = [got[(m, s)] for m in names]
                if use_comb:
                    members.append(float(combine_forecasts(np.array(members)[:, None])[0]))
                for m, v in zip(names + ([COMBINATION] if use_comb else []), members):
                    preds.append({"period": ds.time_index[t], "t": t, "horizon": h, "model": m,
                                  "weight_scheme": s, "prediction": float(v),
                                  "actual": actual})

    rows = []
    all_models = names + ([COMBINATION] if use_comb else [])
    for tag, keep in tags.items():
        if not keep:
            log.warning("sample %r has no out-of-sample periods", tag)
            continue
        for s in schemes:
            for h in horizons:
                rmse = {}
                for m in all_models:
                    e = [p["prediction"] - p["actual"] for p in preds
                         if p["model"] == m and p["weight_scheme"] == s and p["horizon"] == h
                         and p["t"] in keep]
                    rmse[m] = _rmse(e)
                if use_comb:
                    bound = float(np.mean([rmse[m] for m in names]))
                    if rmse[COMBINATION] > bound + 1e-12:
                        raise NumericError("combination RMSE exceeds the mean member RMSE")
                base = rmse[benchmark]
                for m in all_models:
                    ratio = 1.0 if m == benchmark else (rmse[m] / base if base > 0 else
                                                        float("inf"))
                    rows.append({"model": m, "weight_scheme": s, "horizon": h,
                                 "sample_tag": tag, "rmse": rmse[m],
                                 "rmse_ratio_vs_benchmark": ratio})
    return RmseReport(rows, benchmark, preds)
