"""Command-line front end: one subcommand per pipeline stage, CSV/JSON outputs."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .backtest import (
    StrategyConfig,
    curve_pricer,
    pair_prices,
    portfolio_metrics,
    run_buy_and_hold,
    run_pairs_strategy,
    write_metrics_csv,
)
from .basis import fit_panel_rows
from .errors import AfregError
from .estimator import (
    AfEstimatorConfig,
    af_estimate_step,
    empirical_curve,
    run_bimonthly_estimate,
    run_daily_forecast,
)
from .hmm import baum_welch, initial_model
from .market_data import PanelSchema, load_panel, to_forward_rates, write_panel
from .mispricing import (
    PAIR_STATES,
    STATE_INDEX,
    MispricingThresholds,
    PairState,
    estimate_pi,
    label_panel,
    pair_state,
)
from .state_space import fit_pipeline, model_document

log = logging.getLogger("afreg")

DEFAULTS = {
    "data": None,
    "rates_in_percent": False,
    "quote_kind": "forward",
    "mode": "daily",
    "estimator": {},
    "thresholds": [[0.1, 0.0], [1.0, 0.1], [2.0, 0.8]],
    "pair": [2.0, 10.0],
    "hmm": {"max_iter": 500, "tol": 1e-8, "emission_mix": 0.1},
    "strategy": {"initial_capital": 1_000_000.0, "trade_units": 1.0, "allow_short": True, "nonneg_value_floor": True},
    "benchmarks": [2.0, 10.0],
    "seed": 0,
    "out": "out",
}


def _merge(base: dict, extra: dict) -> dict:
    out = dict(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(args) -> dict:
    cfg = dict(DEFAULTS)
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            cfg = _merge(cfg, json.load(fh))
    if getattr(args, "data", None):
        cfg["data"] = args.data
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.out is not None:
        cfg["out"] = args.out
    if args.rates_in_percent:
        cfg["rates_in_percent"] = True
    if getattr(args, "mode", None):
        cfg["mode"] = args.mode
    if getattr(args, "pair", None):
        cfg["pair"] = args.pair
    return cfg


def estimator_config(cfg: dict) -> AfEstimatorConfig:
    est = dict(cfg["estimator"])
    basis = cfg.get("basis") or {}
    if "n_factors" in basis:
        est["n_default"] = basis["n_factors"]
    for key in ("tau", "exponents"):
        if key in basis:
            est[key] = basis[key]
    est.setdefault("seed", cfg["seed"])
    return AfEstimatorConfig.from_dict(est)


def _panel(cfg):
    if not cfg["data"]:
        raise AfregError("no input panel given (positional DATA or 'data' in the config)")
    schema = PanelSchema(cfg["quote_kind"], bool(cfg["rates_in_percent"]))
    return to_forward_rates(load_panel(cfg["data"], schema))


def _outdir(cfg) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(obj, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _fmt(x) -> str:
    return repr(float(x))


# ------------------------------------------------------------ commands


def cmd_ingest(args) -> int:
    cfg = load_config(args)
    panel = _panel(cfg)
    out = _outdir(cfg)
    write_panel(panel, out / "panel.csv")
    print(f"dates: {panel.n_dates} ({panel.dates[0]} .. {panel.dates[-1]})")
    print("maturities: " + " ".join(f"{m:g}" for m in panel.maturities))
    print(f"rates: min {panel.rates.min():.6g}  max {panel.rates.max():.6g}  mean {panel.rates.mean():.6g}")
    return 0


def cmd_fit(args) -> int:
    cfg = load_config(args)
    est = estimator_config(cfg)
    panel = _panel(cfg)
    result = fit_pipeline(panel, est.basis(), cfg["mode"], est.dt, est.window, refine=est.refine)
    out = _outdir(cfg)
    doc = model_document(result)
    doc["seed"] = cfg["seed"]
    _write_json(doc, out / "model.json")
    with open(out / "factors.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        d = result.spec.n_factors
        w.writerow(["date"] + [f"beta_{i + 1}" for i in range(d)])
        for rows, beta in zip(result.rows, result.smoothed.means):
            w.writerow([panel.dates[rows[-1]].isoformat()] + [_fmt(b) for b in beta])
    print(f"fitted {cfg['mode']} model, loglik {result.filtered.loglik:.6f}")
    return 0


def cmd_forecast(args) -> int:
    cfg = load_config(args)
    est = estimator_config(cfg)
    report = run_daily_forecast(_panel(cfg), est)
    out = _outdir(cfg)
    report.write_csv(out / "forecast_report.csv")
    report.write_errors_csv(out / "forecast_errors.csv")
    print(f"{len(report.dates)} one-day-ahead forecasts written")
    return 0


def cmd_estimate(args) -> int:
    cfg = load_config(args)
    est = estimator_config(cfg)
    report = run_bimonthly_estimate(_panel(cfg), est)
    out = _outdir(cfg)
    report.write_csv(out / "proportion_report.csv")
    for r in report.rows:
        print(f"{r.label:>6}  p={r.p_hat:.3f}  [{r.wilson_lo:.3f}, {r.wilson_hi:.3f}]  runs={r.runs}")
    return 0


def _model_outputs(panel, est):
    """Contemporaneous regularized and naive curve values for every row."""
    result = fit_pipeline(panel, est.basis(), "daily", est.dt, refine=est.refine)
    mats = result.maturities
    af = np.array([af_estimate_step(result, est, k, estimator="filtered").value(mats) for k in range(panel.n_dates)])
    naive = np.array([empirical_curve(result, est, k, estimator="filtered").value(mats) for k in range(panel.n_dates)])
    return result, af, naive


def _preset_tag(th: MispricingThresholds) -> str:
    return f"eps{th.epsilon:g}_delta{th.delta:g}"


def cmd_classify(args) -> int:
    cfg = load_config(args)
    est = estimator_config(cfg)
    panel = _panel(cfg)
    _, af, naive = _model_outputs(panel, est)
    out = _outdir(cfg)
    mats = [float(m) for m in panel.maturities]
    pair = tuple(float(x) for x in cfg["pair"])
    ia, ib = mats.index(pair[0]), mats.index(pair[1])
    warm = min(est.warmup, panel.n_dates - 1)
    dates = panel.dates[warm:]
    for eps, delta in cfg["thresholds"]:
        th = MispricingThresholds(eps, delta)
        tag = _preset_tag(th)
        labels = label_panel(panel.rates, af, naive, mats, th, warm)
        with open(out / f"labels_{tag}.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["date", "maturity", "label"])
            for d, row in zip(dates, labels):
                for m, lab in zip(mats, row):
                    w.writerow([d.isoformat(), f"{m:g}", lab.value])
        with open(out / f"pi_{tag}.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["maturity", "pi_hat", "sd", "wilson_lo", "wilson_hi"])
            for j, m in enumerate(mats):
                w.writerow([f"{m:g}"] + [_fmt(v) for v in estimate_pi([row[j] for row in labels])])
        with open(out / f"states_{tag}.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["date", "pair", "state"])
            for d, row in zip(dates, labels):
                w.writerow([d.isoformat(), f"{pair[0]:g}-{pair[1]:g}", pair_state(row[ia], row[ib]).value])
        print(f"{tag}: wrote labels, pi table and pair states")
    return 0


def _read_states(path):
    by_value = {s.value: s for s in PairState}
    dates, states, pair = [], [], None
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            dates.append(rec["date"])
            states.append(by_value[rec["state"]])
            pair = rec["pair"]
    if not states:
        raise AfregError(f"{path}: no states")
    a, b = (float(x) for x in pair.split("-"))
    return dates, states, (a, b)


def cmd_hmm(args) -> int:
    cfg = load_config(args)
    _, states, pair = _read_states(args.states)
    obs = [STATE_INDEX[s] for s in states]
    h = cfg["hmm"]
    init = initial_model(obs, 3, 3, h["emission_mix"])
    model, trace = baum_welch(obs, init, int(h["max_iter"]), float(h["tol"]))
    out = _outdir(cfg)
    doc = {"version": 1, "pair": list(pair), "symbols": [s.value for s in PAIR_STATES], "hmm": model.to_dict(), "seed": cfg["seed"]}
    _write_json(doc, out / "hmm.json")
    with open(out / "hmm_trace.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "loglik"])
        for i, ll in enumerate(trace):
            w.writerow([i, _fmt(ll)])
    monotone = all(b >= a - 1e-9 for a, b in zip(trace[:-1], trace[1:]))
    print(f"iterations: {len(trace) - 1}  loglik: {trace[-1]:.6f}  monotone: {monotone}")
    for name, M in (("transition", model.transition), ("emission", model.emission)):
        print(name)
        for row in M:
            print("  " + " ".join(f"{x:.4f}" for x in row) + f"   sum={row.sum():.12f}")
    return 0


def cmd_backtest(args) -> int:
    cfg = load_config(args)
    est = estimator_config(cfg)
    panel = _panel(cfg)
    dates, states, pair = _read_states(args.states)
    iso = [d.isoformat() for d in panel.dates]
    try:
        start = iso.index(dates[0])
    except ValueError:
        raise AfregError("state dates are not in the panel") from None
    if iso[start : start + len(dates)] != dates:
        raise AfregError("state dates do not line up with the panel")
    rows = slice(start, start + len(dates))
    spec = est.basis()
    under = panel.n_maturities < spec.n_factors
    betas = fit_panel_rows(spec, panel.maturities, panel.rates[rows], allow_underdetermined=under)
    sc = StrategyConfig(**cfg["strategy"])
    stamps = list(panel.dates[rows])
    prices = pair_prices(spec, betas, pair)
    ledgers = {"pairs": run_pairs_strategy(prices, states, sc, stamps, names=(f"{pair[0]:g}", f"{pair[1]:g}"))}
    pricer = curve_pricer(spec, betas)
    for T in cfg["benchmarks"]:
        ledgers[f"buy_hold_{float(T):g}"] = run_buy_and_hold(pricer, float(T), len(stamps), sc, est.dt, stamps)
    out = _outdir(cfg)
    metrics = []
    for name, ledger in ledgers.items():
        ledger.write_csv(out / f"ledger_{name}.csv")
        metrics.append(portfolio_metrics(ledger, name))
    write_metrics_csv(metrics, out / "metrics.csv")
    for m in metrics:
        print(f"{m.name:>14}  terminal {m.terminal_wealth:.2f}  active {m.prop_active:.3f}")
    return 0


COMMANDS = {
    "ingest": cmd_ingest,
    "fit": cmd_fit,
    "forecast": cmd_forecast,
    "estimate": cmd_estimate,
    "classify": cmd_classify,
    "hmm": cmd_hmm,
    "backtest": cmd_backtest,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("--rates-in-percent", action="store_true", help="input rates are in percent")

    p = argparse.ArgumentParser(prog="afreg", description="Arbitrage-free regularization of factor curve models.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("ingest", "forecast", "estimate", "classify"):
        sp = sub.add_parser(name, parents=[common])
        sp.add_argument("data", nargs="?")
        if name == "classify":
            sp.add_argument("--pair", type=float, nargs=2)
    sp = sub.add_parser("fit", parents=[common])
    sp.add_argument("data", nargs="?")
    sp.add_argument("--mode", choices=("daily", "bimonthly"))
    sp = sub.add_parser("hmm", parents=[common])
    sp.add_argument("states", help="pair-state CSV written by 'classify'")
    sp = sub.add_parser("backtest", parents=[common])
    sp.add_argument("data", nargs="?")
    sp.add_argument("--states", required=True, help="pair-state CSV written by 'classify'")
    return p


def _setup_logging():
    level = os.environ.get("AFREG_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (AfregError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
