"""Batch entry points.

    panelnowcast mc-table  --config grid.json [--seed N] [--threads N] [--out DIR]
    panelnowcast nowcast   --config run.json  ...
    panelnowcast evaluate  --config eval.json ...
    panelnowcast weights   --config w.json    ...

Structured settings live in the JSON config; flags only cover paths, seed,
worker count and verbosity. Every run writes ``manifest.json`` next to its
outputs. Exit codes: 0 ok, 2 configuration, 3 data, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .aggregation import group_share_ratio, weights_for_period, write_weights_csv
from .errors import ConfigError, DataError, PanelNowcastError
from .evaluation import EvaluationWindow, information_set, rolling_evaluate
from .models import ModelSpec, fit, nowcast
from .paneldata import HORIZONS, NowcastClock, load_panel_csv
from .simulate import DESIGNS, SIGMA_GRID, McResultTable, SimulationConfig, run_monte_carlo

log = logging.getLogger("panelnowcast")


def _read_config(path) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return cfg


def _write_manifest(out: Path, command: str, config: dict, seed, threads, outputs) -> None:
    manifest = {
        "command": command,
        "version": __version__,
        "seed": seed,
        "threads": threads,
        "config": config,
        "outputs": sorted(str(o) for o in outputs),
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)


def _require(cfg: dict, key: str):
    if key not in cfg:
        raise ConfigError(f"config is missing {key!r}")
    return cfg[key]


def _load_data(cfg: dict, base: Path):
    path = Path(_require(cfg, "data"))
    if not path.is_absolute():
        path = base / path
    if not path.exists():
        raise DataError(f"data file not found: {path}")
    dcfg = cfg.get("data_config")
    if isinstance(dcfg, str) and not Path(dcfg).is_absolute():
        dcfg = base / dcfg
    return load_panel_csv(path, dcfg)


def _models(cfg: dict) -> dict:
    models = _require(cfg, "models")
    if isinstance(models, list):
        models = {m.get("name", m["family"]): m for m in models}
    if not isinstance(models, dict) or not models:
        raise ConfigError("'models' must be a non-empty object or list")
    return {name: ModelSpec.from_dict(m) for name, m in models.items()}


def _horizons(cfg: dict) -> list:
    hs = cfg.get("horizons", list(HORIZONS))
    bad = [h for h in hs if h not in HORIZONS]
    if bad:
        raise ConfigError(f"unknown horizon(s) {bad}; use {list(HORIZONS)}")
    return list(hs)


# ---------------------------------------------------------------------------


def cmd_mc_table(cfg: dict, out: Path, seed=None, threads=1) -> list:
    base = dict(cfg.get("base", {}))
    if seed is not None:
        base["master_seed"] = seed
    base_cfg = SimulationConfig.from_dict(base)
    if "cells" in cfg:
        configs = [replace(base_cfg, **c) for c in cfg["cells"]]
    else:
        grid = cfg.get("grid", {})
        unknown = set(grid) - {"N", "T", "p", "sigma", "design"}
        if unknown:
            raise ConfigError(f"unknown grid axes {sorted(unknown)}")
        configs = [replace(base_cfg, N=n, T=t, p=p, sigma=s, design=d)
                   for d in grid.get("design", DESIGNS)
                   for p in grid.get("p", (50, 500))
                   for s in grid.get("sigma", SIGMA_GRID)
                   for n in grid.get("N", (10, 20))
                   for t in grid.get("T", (35, 100))]
    families = tuple(cfg.get("families", ("P", "TS", "AC", "A")))
    cells = []
    for k, c in enumerate(configs):
        log.info("cell %d/%d: %s", k + 1, len(configs), c)
        cells.append(run_monte_carlo(c, families=families, workers=threads))
    table = McResultTable(cells)
    table.write_table(out / "table1.csv", [f for f in ("TS", "AC", "A") if f in families])
    table.write_diagnostics(out / "diagnostics.csv")
    return [out / "table1.csv", out / "diagnostics.csv"]


def _target_periods(cfg: dict, ds) -> list:
    labels = cfg.get("periods")
    if labels is None:
        return [ds.T - 1]
    try:
        return [ds.period_index(p) for p in labels]
    except KeyError as exc:
        raise ConfigError(str(exc)) from None


def cmd_nowcast(cfg: dict, out: Path, base: Path) -> list:
    ds = _load_data(cfg, base)
    models = _models(cfg)
    horizons = _horizons(cfg)
    schemes = cfg.get("weights", [])
    periods = _target_periods(cfg, ds)
    for spec in models.values():
        spec.validate_for(ds.N, weights=True)
    now_path = out / "nowcasts.csv"
    sel_rows, outputs = [], [now_path]
    weight_sched = {s: [] for s in schemes}
    with open(now_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "weight_scheme", "unit", "period", "horizon", "prediction"])
        for t in periods:
            for h in horizons:
                clock = NowcastClock.at_horizon(t, h)
                info = information_set(ds, clock)
                weights = {s: weights_for_period(info, s, t) for s in schemes}
                if h == horizons[0]:
                    for s, w in weights.items():
                        weight_sched[s].append(w)
                for name, spec in models.items():
                    if spec.family in ("A", "AC"):
                        runs = [(s, w) for s, w in weights.items()]
                        if not runs:
                            raise ConfigError(f"model {name!r} ({spec.family}) needs at least "
                                              "one weight scheme")
                    else:
                        runs = [("", None)]
                    for s, w in runs:
                        b = fit(info, spec, clock, w)
                        sel_rows.append((name, s, ds.time_index[t], h, b.active_indicators()))
                        if spec.family in ("A", "AC"):
                            ns = nowcast(b, info, clock)
                            writer.writerow([name, s, "aggregate", ns.period, ns.horizon,
                                             repr(ns.aggregate)])
                        else:
                            ns = nowcast(b, info, clock)
                            for u, per, hz, p in ns.rows():
                                writer.writerow([name, "", u, per, hz, repr(p)])
                            for s2, w2 in weights.items():
                                agg = nowcast(b, info, clock, w2)
                                writer.writerow([name, s2, "aggregate", agg.period, agg.horizon,
                                                 repr(agg.aggregate)])
                        for msg in ns.warnings:
                            log.warning("%s: %s", name, msg)
    if schemes:
        write_weights_csv(weight_sched, ds.unit_ids, out / "weights.csv")
        outputs.append(out / "weights.csv")
    if cfg.get("selection_matrix", True) and sel_rows:
        cols = []
        for *_, ind in sel_rows:
            cols += [c for c in ind if c not in cols]
        with open(out / "selection.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["model", "weight_scheme", "period", "horizon"] + cols)
            for name, s, per, h, ind in sel_rows:
                w.writerow([name, s, per, h] + [ind.get(c, "") for c in cols])
        outputs.append(out / "selection.csv")
    return outputs


def cmd_evaluate(cfg: dict, out: Path, base: Path) -> list:
    ds = _load_data(cfg, base)
    if "units" in cfg:
        ds = ds.subset(cfg["units"])
    models = _models(cfg)
    win = _require(cfg, "window")
    window = EvaluationWindow(_require(win, "first"), _require(win, "last"))
    schemes = cfg.get("weights", ["W1"])
    report = rolling_evaluate(ds, models, schemes, _horizons(cfg), window,
                              benchmark=cfg.get("benchmark"),
                              samples={k: tuple(v) for k, v in cfg.get("samples", {}).items()},
                              combine=cfg.get("combine", True))
    report.to_csv(out / "rmse_report.csv")
    report.predictions_to_csv(out / "predictions.csv")
    return [out / "rmse_report.csv", out / "predictions.csv"]


def cmd_weights(cfg: dict, out: Path, base: Path) -> list:
    ds = _load_data(cfg, base)
    if "units" in cfg:
        ds = ds.subset(cfg["units"])
    schemes = cfg.get("weights", ["W1", "W2", "W3", "W4"])
    labels = cfg.get("periods")
    periods = list(range(1, ds.T)) if labels is None else \
        [ds.period_index(p) for p in labels]
    sched = {s: [weights_for_period(ds, s, t) for t in periods] for s in schemes}
    write_weights_csv(sched, ds.unit_ids, out / "weights.csv")
    outputs = [out / "weights.csv"]
    groups = cfg.get("ratio_groups")
    if groups:
        num = [ds.unit_index(u) for u in _require(groups, "numerator")]
        den = [ds.unit_index(u) for u in _require(groups, "denominator")]
        with open(out / "weight_ratio.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["scheme", "period", "ratio"])
            for s, vecs in sched.items():
                for wv in vecs:
                    w.writerow([s, wv.period, repr(group_share_ratio(wv, num, den))])
        outputs.append(out / "weight_ratio.csv")
    return outputs


COMMANDS = ("mc-table", "nowcast", "evaluate", "weights")


def _available_cores() -> int:
    if hasattr(os, "sched_getaffinity"):
        return len(os.sched_getaffinity(0))
    return os.cpu_count() or 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="panelnowcast",
                                description="Panel MIDAS nowcasting and aggregation tools.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, help="JSON configuration file")
        s.add_argument("--seed", type=int, default=None)
        s.add_argument("--threads", type=int, default=None,
                       help="worker processes (default: available cores)")
        s.add_argument("--out", default=".", help="output directory")
        s.add_argument("-v", "--verbose", action="count", default=0)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    threads = args.threads or _available_cores()
    try:
        cfg = _read_config(args.config)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        base = Path(args.config).resolve().parent
        seed = args.seed if args.seed is not None else cfg.get("seed")
        if args.command == "mc-table":
            outputs = cmd_mc_table(cfg, out, seed, threads)
        elif args.command == "nowcast":
            outputs = cmd_nowcast(cfg, out, base)
        elif args.command == "evaluate":
            outputs = cmd_evaluate(cfg, out, base)
        else:
            outputs = cmd_weights(cfg, out, base)
        _write_manifest(out, args.command, cfg, seed, threads, outputs)
    except PanelNowcastError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (KeyError, TypeError, ValueError) as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return ConfigError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
