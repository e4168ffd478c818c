import csv

import numpy as np
import pytest

from panelnowcast.errors import (
    DataGapError,
    DimensionError,
    FrequencyError,
    InsufficientHistoryError,
    SchemaError,
    UnknownUnitError,
)
from panelnowcast.paneldata import (
    Covariate,
    FrequencyRatio,
    NowcastClock,
    PanelDataset,
    aggregate_series,
    extract_window,
    load_panel_csv,
    panel_config,
    write_panel_csv,
)


def write_rows(path, rows, header=("unit", "date", "series", "frequency", "value")):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def basic_rows(units=("A", "B"), quarters=4):
    rows = []
    for u in units:
        for q in range(quarters):
            rows.append((u, f"2020-Q{q + 1}", "gdp", "Q", str(q + (u == "B"))))
        for m in range(3 * quarters):
            rows.append((u, f"2020-{m + 1:02d}", "ip", "M", str(0.1 * m)))
    return rows


def tiny_dataset():
    T = 4
    hf = np.arange(2 * T * 3, dtype=float).reshape(2, T * 3)
    cov = Covariate("ip", hf, FrequencyRatio(3, 1))
    return PanelDataset(("A", "B"), ("q1", "q2", "q3", "q4"),
                        np.array([[1.0, 2, 3, 4], [3, 1, 0, 2]]), {"ip": cov})


def test_load_counts(tmp_path):
    p = tmp_path / "p.csv"
    rows = basic_rows()
    assert len(rows) == 32
    write_rows(p, rows)
    ds = load_panel_csv(p)
    assert (ds.N, ds.T, ds.K) == (2, 4, 1)
    assert ds.covariates["ip"].ratio.high_per_low == 3
    assert ds.time_index == ("2020-Q1", "2020-Q2", "2020-Q3", "2020-Q4")
    np.testing.assert_array_equal(ds.targets[1], [1, 2, 3, 4])


def test_single_unit(tmp_path):
    p = tmp_path / "p.csv"
    write_rows(p, basic_rows(units=("A",)))
    assert load_panel_csv(p).N == 1


def test_missing_monthly_observation(tmp_path):
    p = tmp_path / "p.csv"
    rows = [r for r in basic_rows() if not (r[0] == "B" and r[1] == "2020-05")]
    write_rows(p, rows)
    with pytest.raises(DataGapError, match="'B'"):
        load_panel_csv(p)


def test_empty_value_reports_line(tmp_path):
    p = tmp_path / "p.csv"
    rows = basic_rows()
    rows[3] = rows[3][:4] + ("",)
    write_rows(p, rows)
    with pytest.raises(DataGapError, match=":5:"):
        load_panel_csv(p)


def test_schema_and_frequency_errors(tmp_path):
    p = tmp_path / "p.csv"
    write_rows(p, [r[:4] for r in basic_rows()], header=("unit", "date", "series", "frequency"))
    with pytest.raises(SchemaError):
        load_panel_csv(p)
    rows = basic_rows()
    rows[5] = rows[5][:3] + ("W",) + rows[5][4:]
    write_rows(p, rows)
    with pytest.raises(FrequencyError):
        load_panel_csv(p)
    write_rows(p, [("A", "2020-13", "ip", "M", "1")] + basic_rows()[:4])
    with pytest.raises(SchemaError):
        load_panel_csv(p)


def test_column_mapping(tmp_path):
    p = tmp_path / "p.csv"
    write_rows(p, basic_rows(), header=("country", "date", "series", "frequency", "value"))
    ds = load_panel_csv(p, columns={"unit": "country"})
    assert ds.unit_ids == ("A", "B")


def test_roundtrip_is_bit_exact(tmp_path, small_panel):
    p = tmp_path / "p.csv"
    write_panel_csv(small_panel, p)
    back = load_panel_csv(p, panel_config(small_panel))
    assert back.unit_ids == small_panel.unit_ids
    assert back.time_index == small_panel.time_index
    assert back.targets.tobytes() == small_panel.targets.tobytes()
    assert back.levels.tobytes() == small_panel.levels.tobytes()
    assert back.aggregate.tobytes() == small_panel.aggregate.tobytes()
    for k, c in small_panel.covariates.items():
        assert back.covariates[k].values.tobytes() == c.values.tobytes()
        assert back.covariates[k].ratio == c.ratio


def test_weekly_covariate(tmp_path):
    p = tmp_path / "p.csv"
    rows = [("A", f"2021-Q{q + 1}", "gdp", "Q", str(q)) for q in range(2)]
    start = np.datetime64("2021-01-04")
    for k in range(26):
        d = start + np.timedelta64(7 * k, "D")
        rows.append(("A", str(d), "claims", "W", str(k)))
    write_rows(p, rows)
    ds = load_panel_csv(p)
    assert ds.covariates["claims"].ratio.high_per_low == 13


def test_extract_window_examples():
    ds = tiny_dataset()
    clock = NowcastClock(2, 2)
    np.testing.assert_array_equal(extract_window(ds, "A", "ip", clock, 3), [7, 6, 5])
    stale = PanelDataset(ds.unit_ids, ds.time_index, ds.targets,
                         {"ip": Covariate("ip", ds.covariates["ip"].values, FrequencyRatio(3),
                                          release_lag=1)})
    np.testing.assert_array_equal(extract_window(stale, "A", "ip", clock, 3), [6, 6, 5])
    with pytest.raises(InsufficientHistoryError):
        extract_window(ds, "A", "ip", clock, 9)
    # period end, no lag: the last k_max observations
    np.testing.assert_array_equal(extract_window(ds, 1, "ip", NowcastClock(3, 3), 12),
                                  ds.covariates["ip"].values[1, ::-1])


def test_extract_window_ragged_edge():
    ds = tiny_dataset()
    v = ds.covariates["ip"].values.copy()
    v[0, 10:] = np.nan
    ragged = PanelDataset(ds.unit_ids, ds.time_index, ds.targets,
                          {"ip": Covariate("ip", v, FrequencyRatio(3))})
    np.testing.assert_array_equal(extract_window(ragged, "A", "ip", NowcastClock(3, 3), 4),
                                  [9, 9, 9, 8])


def test_aggregate_series_examples():
    ds = PanelDataset(("a", "b"), ("q1", "q2"), np.array([[1.0, 3.0], [3.0, 1.0]]))
    np.testing.assert_array_equal(aggregate_series(ds, [0.5, 0.5]).targets, [[2.0, 2.0]])
    np.testing.assert_array_equal(aggregate_series(ds, [1.0, 0.0]).targets, [[1.0, 3.0]])
    np.testing.assert_array_equal(aggregate_series(ds, [2.0, -1.0]).targets, [[-1.0, 5.0]])
    with pytest.raises(DimensionError):
        aggregate_series(ds, [1.0])


def test_aggregate_series_is_linear(rng):
    ds = tiny_dataset()
    w1, w2 = rng.standard_normal(2), rng.standard_normal(2)
    a, b, c = (aggregate_series(ds, w) for w in (w1, w2, w1 + w2))
    np.testing.assert_allclose(c.targets, a.targets + b.targets, rtol=1e-14)
    np.testing.assert_allclose(c.covariates["ip"].values,
                               a.covariates["ip"].values + b.covariates["ip"].values, rtol=1e-14)


def test_dataset_validation():
    with pytest.raises(DimensionError):
        PanelDataset(("a",), ("q1", "q2"), np.zeros((1, 3)))
    with pytest.raises(ValueError):
        FrequencyRatio(0)
    ds = tiny_dataset()
    with pytest.raises(UnknownUnitError):
        ds.unit_index("Z")
    sub = ds.subset(["B"])
    np.testing.assert_array_equal(sub.targets, ds.targets[1:])
    cut = ds.truncated(1)
    assert np.isnan(cut.targets[:, 2:]).all() and np.isnan(cut.covariates["ip"].values[:, 6:]).all()
