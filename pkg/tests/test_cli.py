import csv
import json
import subprocess
import sys

import pytest

from panelnowcast.cli import main
from panelnowcast.paneldata import panel_config, write_panel_csv
from panelnowcast.simulate import synthetic_mixed_panel

MODEL_P = {"family": "P", "gamma_grid": [1.0], "n_lambda": 8}
MODEL_TS = {"family": "TS", "gamma_grid": [1.0], "n_lambda": 8}


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    ds = synthetic_mixed_panel(N=4, T=32, K=2, seed=3)
    write_panel_csv(ds, d / "panel.csv")
    (d / "panel_cfg.json").write_text(json.dumps(panel_config(ds)))
    return d


def run(tmp_path, name, cfg, command, *extra):
    p = tmp_path / f"{name}.json"
    p.write_text(json.dumps(cfg))
    out = tmp_path / name
    code = main([command, "--config", str(p), "--out", str(out), "--threads", "1", *extra])
    return code, out


def base_cfg(data_dir, **kw):
    cfg = {"data": str(data_dir / "panel.csv"), "data_config": str(data_dir / "panel_cfg.json")}
    cfg.update(kw)
    return cfg


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_weights_command(tmp_path, data_dir):
    cfg = base_cfg(data_dir, periods=["2005-Q1", "2005-Q2"],
                   ratio_groups={"numerator": ["U01", "U02"], "denominator": ["U03", "U04"]})
    code, out = run(tmp_path, "w", cfg, "weights")
    assert code == 0
    rows = read_csv(out / "weights.csv")
    assert len(rows) == 4 * 2 * 4
    for s in ("W1", "W2", "W3", "W4"):
        tot = sum(float(r["weight"]) for r in rows if r["scheme"] == s and r["period"] == "2005-Q1")
        assert abs(tot - 1) < 1e-10
    assert len(read_csv(out / "weight_ratio.csv")) == 8
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "weights" and manifest["config"] == cfg


def test_nowcast_command(tmp_path, data_dir):
    before = (data_dir / "panel.csv").read_bytes()
    cfg = base_cfg(data_dir, weights=["W1"], horizons=["2-month", "EoQ"],
                   models={"pooled": MODEL_P,
                           "agg": {"family": "A", "penalty": {"gamma": 1.0, "lambda": 1e6}}})
    code, out = run(tmp_path, "n", cfg, "nowcast")
    assert code == 0
    rows = read_csv(out / "nowcasts.csv")
    pooled_units = [r for r in rows if r["model"] == "pooled" and r["unit"] != "aggregate"]
    assert len(pooled_units) == 4 * 2
    agg_rows = [r for r in rows if r["model"] == "agg"]
    assert {r["horizon"] for r in agg_rows} == {"2-month", "EoQ"}
    sel = read_csv(out / "selection.csv")
    huge = [r for r in sel if r["model"] == "agg"]
    assert huge and all(r[c] in ("0", "") for r in huge for c in r
                        if c not in ("model", "weight_scheme", "period", "horizon"))
    assert (out / "weights.csv").exists()
    assert (data_dir / "panel.csv").read_bytes() == before


def test_single_unit_ts_nowcast(tmp_path, data_dir):
    one = synthetic_mixed_panel(N=1, T=30, K=1, seed=1, with_aggregate=False)
    write_panel_csv(one, tmp_path / "one.csv")
    cfg = {"data": str(tmp_path / "one.csv"), "data_config": panel_config(one),
           "horizons": ["2-month", "1-month", "EoQ"], "models": {"ts": MODEL_TS}}
    code, out = run(tmp_path, "one", cfg, "nowcast")
    assert code == 0
    rows = read_csv(out / "nowcasts.csv")
    assert len(rows) == 3 and {r["horizon"] for r in rows} == {"2-month", "1-month", "EoQ"}


def test_evaluate_command(tmp_path, data_dir):
    cfg = base_cfg(data_dir, weights=["W3"], horizons=["EoQ"],
                   window={"first": "2006-Q3", "last": "2007-Q2"}, benchmark="pooled",
                   models={"pooled": MODEL_P, "ts": MODEL_TS},
                   samples={"early": ["2006-Q3", "2006-Q4"]})
    code, out = run(tmp_path, "e", cfg, "evaluate")
    assert code == 0
    rows = read_csv(out / "rmse_report.csv")
    assert {r["model"] for r in rows} == {"pooled", "ts", "combination"}
    assert {r["sample_tag"] for r in rows} == {"full", "early"}
    assert len(read_csv(out / "predictions.csv")) == 4 * 3


def test_evaluate_single_period_single_member(tmp_path, data_dir):
    cfg = base_cfg(data_dir, weights=["W1"], horizons=["EoQ"],
                   window={"first": "2007-Q1", "last": "2007-Q1"}, models={"ts": MODEL_TS})
    code, out = run(tmp_path, "e1", cfg, "evaluate")
    assert code == 0
    (row,) = read_csv(out / "rmse_report.csv")
    (pred,) = read_csv(out / "predictions.csv")
    assert float(row["rmse"]) == pytest.approx(abs(float(pred["prediction"]) -
                                                   float(pred["actual"])))


def test_exit_codes(tmp_path, data_dir, capsys):
    cfg = base_cfg(data_dir, units=["U01"], weights=["W1"], horizons=["EoQ"],
                   window={"first": "2007-Q1", "last": "2007-Q1"}, models={"p": MODEL_P})
    assert run(tmp_path, "p1", cfg, "evaluate")[0] == 2
    cfg = base_cfg(data_dir, weights=["W1"], horizons=["EoQ"], benchmark="missing",
                   window={"first": "2007-Q1", "last": "2007-Q1"}, models={"p": MODEL_P})
    assert run(tmp_path, "bench", cfg, "evaluate")[0] == 2
    assert run(tmp_path, "nodata", {"data": str(tmp_path / "none.csv")}, "weights")[0] == 3
    bad = tmp_path / "bad.csv"
    bad.write_text("unit,date,series,frequency,value\nA,2020-Q1,gdp,Q,\n")
    assert run(tmp_path, "gap", {"data": str(bad)}, "weights")[0] == 3
    assert main(["weights", "--config", str(tmp_path / "nope.json")]) == 2
    assert run(tmp_path, "hz", base_cfg(data_dir, horizons=["3-month"], models={"p": MODEL_P}),
               "nowcast")[0] == 2
    assert "error:" in capsys.readouterr().err


def test_numeric_error_exit_code(tmp_path):
    cfg = {"base": {"replications": 2, "N": 3, "T": 20, "p": 3, "folds": 50}}
    # 50 folds over 20 periods is impossible: every replication fails
    assert run(tmp_path, "mcfail", cfg, "mc-table")[0] == 4


def test_mc_table_is_deterministic(tmp_path):
    cfg = {"base": {"replications": 3, "n_lambda": 8},
           "grid": {"N": [4], "T": [30], "p": [5], "sigma": [0, 0.8], "design": ["gaussian"]}}
    code_a, a = run(tmp_path, "mc_a", cfg, "mc-table", "--seed", "7")
    code_b, b = run(tmp_path, "mc_b", cfg, "mc-table", "--seed", "7")
    assert code_a == code_b == 0
    for f in ("table1.csv", "diagnostics.csv"):
        assert (a / f).read_bytes() == (b / f).read_bytes()
    rows = read_csv(a / "table1.csv")
    assert [r["sigma"] for r in rows] == ["0", "0.8"]
    assert json.loads((a / "manifest.json").read_text())["seed"] == 7


def test_console_script_help():
    r = subprocess.run([sys.executable, "-m", "panelnowcast.cli", "--help"], capture_output=True,
                       text=True)
    assert r.returncode == 0
    for c in ("mc-table", "nowcast", "evaluate", "weights"):
        assert c in r.stdout
