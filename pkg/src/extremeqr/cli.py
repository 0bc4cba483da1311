"""Command-line driver: simulate, transform, fit, predict, benchmark.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
Every command accepts ``--config file.json`` whose keys mirror the long flag
names (dashes or underscores); explicit flags take precedence.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from collections import defaultdict
from dataclasses import replace
from pathlib import Path

import numpy as np

from ._roots import BracketError
from .angular_model import InfeasibleWeightsError, weights_from_pi, weights_to_json
from .baseline_quantile import ForestConfig, QuantileForest, fit_quantile_forest, forest_quantile
from .benchmark import (
    METHODS, BenchmarkConfig, bernstein_predict, fit_intermediate, run_benchmark,
    run_benchmark_dataset, write_plot_csv,
)
from .gpd_tail import return_level_tau
from .margins_eval import (
    frechet_transform, make_windows, pseudo_angles, select_threshold, write_reports_csv,
)
from .posterior_mcmc import McmcConfig, run_chain, write_chain_csv
from .scenario_sim import SPLIT_FRACTIONS, SeriesDataset, simulate_scenario, split_ranges
from .tail_network import (
    EmptyExceedanceError, EqrnConfig, TrainingDivergedError, extract_exceedances,
    load_checkpoint, predict_extreme_quantile, save_checkpoint, train,
)

log = logging.getLogger("extremeqr")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


NUMERIC_ERRORS = (TrainingDivergedError, BracketError, FloatingPointError,
                  np.linalg.LinAlgError, InfeasibleWeightsError, EmptyExceedanceError)


# --- I/O helpers ----------------------------------------------------------------

def _load_dataset(path) -> SeriesDataset:
    p = Path(path)
    if not p.is_file():
        raise DataError(f"input file not found: {p}")
    try:
        return SeriesDataset.from_csv(p)
    except (ValueError, KeyError) as exc:
        raise DataError(f"{p}: {exc}") from exc


def load_fires_csv(path, train_until=None, valid_until=None, fractions=SPLIT_FRACTIONS) -> SeriesDataset:
    """Aggregate long-format ``year, station, max_temp_c, fires`` rows per year.

    Each station's maximum temperature becomes a covariate column
    ``x_<station>``; the response is the total number of fires across stations.
    """
    p = Path(path)
    if not p.is_file():
        raise DataError(f"input file not found: {p}")
    temps: dict[int, dict[str, float]] = defaultdict(dict)
    fires: dict[int, float] = defaultdict(float)
    with open(p, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"year", "station", "max_temp_c", "fires"} - set(reader.fieldnames or [])
        if missing:
            raise DataError(f"{p}: missing columns {sorted(missing)}")
        for k, row in enumerate(reader, start=2):
            try:
                year = int(row["year"])
                temps[year][row["station"].strip()] = float(row["max_temp_c"])
                fires[year] += float(row["fires"])
            except ValueError as exc:
                raise DataError(f"{p}, line {k}: {exc}") from exc
    if not temps:
        raise DataError(f"{p}: no data rows")
    years = sorted(temps)
    stations = sorted({s for t in temps.values() for s in t})
    for y in years:
        gap = [s for s in stations if s not in temps[y]]
        if gap:
            raise DataError(f"{p}: year {y} has no record for stations {gap}")
    x = np.array([[temps[y][s] for s in stations] for y in years])
    yv = np.array([fires[y] for y in years])
    n = len(years)
    if train_until is None:
        split = split_ranges(n, fractions)
    else:
        a = sum(1 for y in years if y <= train_until)
        b = sum(1 for y in years if y <= (valid_until if valid_until is not None else train_until))
        if b < a:
            raise UsageError("--valid-until must not precede --train-until")
        split = {"train": (0, a), "valid": (a, b), "test": (b, n)}
    return SeriesDataset(x=x if len(stations) > 1 else x[:, 0], y=yv, split=split,
                         t=np.array(years), covariate_names=[f"x_{s}" for s in stations])


def _fmt(v) -> str:
    return repr(float(v))


def _write_predictions(path, t, y, tau, pred, q0=None):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t", "y", "tau", "prediction"] + (["q0hat"] if q0 is not None else []))
        for k in range(len(pred)):
            row = [str(t[k]), _fmt(y[k]), _fmt(tau), _fmt(pred[k])]
            if q0 is not None:
                row.append(_fmt(q0[k]))
            wr.writerow(row)


# --- commands -------------------------------------------------------------------

def cmd_simulate(a) -> int:
    ds = simulate_scenario(a.scenario, a.n, a.seed, tuple(a.fractions))
    out = Path(a.out or f"scenario{a.scenario}.csv")
    ds.to_csv(out)
    print(f"wrote {len(ds)} rows of scenario {a.scenario} to {out}")
    return EXIT_OK


def cmd_transform(a) -> int:
    if (a.data is None) == (a.fires is None):
        raise UsageError("give exactly one of --data or --fires")
    if a.fires is not None:
        ds = load_fires_csv(a.fires, a.train_until, a.valid_until, tuple(a.fractions))
        ds.to_csv(a.out)
        print(f"aggregated {len(ds)} years, {ds.x2d.shape[1]} stations -> {a.out}")
        return EXIT_OK
    ds = _load_dataset(a.data)
    xh = np.column_stack([frechet_transform(c) for c in ds.x2d.T])
    out = SeriesDataset(x=xh if xh.shape[1] > 1 else xh[:, 0], y=frechet_transform(ds.y),
                        split=ds.split, t=ds.t, covariate_names=ds.covariate_names)
    out.to_csv(a.out)
    print(f"unit-Frechet margins for {len(out)} rows -> {a.out}")
    return EXIT_OK


def _eqrn_config(a) -> EqrnConfig:
    return EqrnConfig(architecture=a.architecture, recurrent_state_dim=a.hidden,
                      dense_layers=tuple(a.dense), l2_lambda=a.l2, learning_rate=a.lr,
                      batch_size=a.batch, max_epochs=a.epochs, patience=a.patience, seed=a.seed)


def _features(ds: SeriesDataset, s: int, lead_x: bool, log_features: bool):
    if log_features:
        if np.any(ds.x2d <= 0) or np.any(ds.y <= 0):
            raise DataError("--log-features needs strictly positive data")
        ds = replace(ds, x=np.log(ds.x), y=np.log(ds.y))
    return make_windows(ds, s=s, lead_x=lead_x)


def _fit_eqrn(a, ds: SeriesDataset) -> int:
    feats = _features(ds, a.window, a.lead_x, a.log_features)
    inter = fit_intermediate(ds, feats, a.tau0, a.trees, a.seed)
    sets = {name: extract_exceedances(ds.y[inter.windows[name].target], inter.q0[name], inter.windows[name])
            for name in ("train", "valid")}
    tw = inter.windows["train"].features
    std = tw.std(axis=(0, 1))
    model = train(sets["train"], sets["valid"], a.tau0, _eqrn_config(a),
                  feature_stats=(tw.mean(axis=(0, 1)), np.where(std > 0, std, 1.0)))
    out = Path(a.out)
    save_checkpoint(model, out)
    inter.forest.to_files(str(out) + ".forest")
    meta = {"kind": "eqrn", "checkpoint": out.name, "forest": out.name + ".forest",
            "tau0": a.tau0, "window": a.window, "lead_x": bool(a.lead_x),
            "log_features": bool(a.log_features)}
    Path(str(out) + ".json").write_text(json.dumps(meta, indent=2, sort_keys=True), encoding="utf-8")
    with open(str(out) + ".log.csv", "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(["epoch", "train_loss", "valid_loss"])
        for e, tl, vl in model.training_log:
            wr.writerow([e, _fmt(tl), _fmt(vl)])
    best = min(v for _, _, v in model.training_log)
    print(f"eqrn: {len(sets['train'])} train / {len(sets['valid'])} valid exceedances, "
          f"{len(model.training_log) - 1} epochs, best validation deviance {best:.6f}")
    return EXIT_OK


def _fit_bernstein(a, ds: SeriesDataset) -> int:
    lo, hi = ds.split["train"][0], ds.split["valid"][1]
    x = ds.x2d.mean(axis=1)[lo:hi]
    y = ds.y[lo:hi]
    if a.margins == "frechet":
        xh, yh = x, y
    else:
        xh, yh = frechet_transform(x), frechet_transform(y)
    _, idx = select_threshold(xh, yh, a.level)
    angles = pseudo_angles(xh[idx], yh[idx])
    cfg = McmcConfig(chain_length=a.chain, burn_in=a.burnin, J=a.J, seed=a.seed,
                     prior_concentration=a.concentration)
    chain = run_chain(angles, cfg)
    out = Path(a.out)
    chain_path = str(out) + ".chain.csv"
    write_chain_csv(chain, chain_path)
    mean_w = weights_from_pi(chain.weights.mean(axis=0), a.J, tol=1e-8)
    meta = {
        "kind": "bernstein", "J": a.J, "chain": Path(chain_path).name, "margins": a.margins,
        "level": a.level, "n_angles": int(angles.size), "chain_length": a.chain, "burn_in": a.burnin,
        "seed": a.seed, "accept_rates": [float(r) for r in chain.accept_rates],
        "posterior_mean": json.loads(weights_to_json(mean_w)),
        "x_reference": [float(v) for v in x], "y_reference": [float(v) for v in y],
    }
    out.write_text(json.dumps(meta, indent=2, sort_keys=True), encoding="utf-8")
    rates = ", ".join(f"{r:.2f}" for r in chain.accept_rates)
    print(f"bernstein: {angles.size} angles, {len(chain)} kept draws, acceptance [{rates}]")
    return EXIT_OK


def cmd_fit(a) -> int:
    ds = _load_dataset(a.data)
    return _fit_eqrn(a, ds) if a.method == "eqrn" else _fit_bernstein(a, ds)


def _target_tau(a) -> float:
    if (a.tau is None) == (a.return_period is None):
        raise UsageError("give exactly one of --tau or --return-period")
    if a.return_period is not None:
        return return_level_tau(a.ny, a.return_period)
    if not 0.0 < a.tau < 1.0:
        raise UsageError("--tau must lie in (0, 1)")
    return a.tau


def _read_chain(path, J):
    p = Path(path)
    if not p.is_file():
        raise DataError(f"chain file not found: {p}")
    rows = np.loadtxt(p, delimiter=",", skiprows=1, ndmin=2)
    if rows.shape[1] != J + 1:
        raise DataError(f"{p}: expected {J + 1} columns")
    return rows[:, 2:]


def cmd_predict(a) -> int:
    tau = _target_tau(a)
    model_path = Path(a.model)
    if not model_path.is_file():
        raise DataError(f"model file not found: {model_path}")
    ds = _load_dataset(a.data)
    head = model_path.read_bytes()[:8]
    if head == b"EQRNCKP1":
        meta_path = Path(str(model_path) + ".json")
        if not meta_path.is_file():
            raise DataError(f"model metadata not found: {meta_path}")
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        if tau <= meta["tau0"]:
            raise UsageError(f"tau={tau} must exceed the model's intermediate level tau0={meta['tau0']}")
        model = load_checkpoint(model_path)
        forest = QuantileForest.from_files(model_path.parent / meta["forest"])
        feats = _features(ds, meta["window"], meta["lead_x"], meta["log_features"])
        if a.split != "all":
            feats = feats.in_range(*ds.split[a.split])
        q0 = forest_quantile(forest, feats.features.reshape(len(feats), -1), tau=meta["tau0"])
        pred = np.atleast_1d(predict_extreme_quantile(model, feats.features, q0, tau))
        t = feats.target
        _write_predictions(a.out, ds.t[t], ds.y[t], tau, pred, q0)
    else:
        try:
            meta = json.loads(model_path.read_text(encoding="utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise DataError(f"{model_path}: unrecognized model file") from exc
        if meta.get("kind") != "bernstein":
            raise DataError(f"{model_path}: unrecognized model file")
        pi = _read_chain(model_path.parent / meta["chain"], meta["J"])
        lo, hi = ds.split[a.split] if a.split != "all" else (0, len(ds))
        x_new = ds.x2d.mean(axis=1)[lo:hi]
        pred = _bernstein_from_draws(meta, pi, x_new, tau, a.grid)
        _write_predictions(a.out, ds.t[lo:hi], ds.y[lo:hi], tau, pred)
    print(f"wrote {len(pred)} predictions at tau={tau!r} to {a.out}")
    return EXIT_OK


def _bernstein_from_draws(meta, pi, x_new, tau, grid_size):
    from .angular_model import bernstein_conditional_quantile_bisect
    from .margins_eval import frechet_score, inverse_frechet

    x_ref = np.array(meta["x_reference"])
    y_ref = np.array(meta["y_reference"])
    frechet = meta["margins"] == "frechet"
    xq = np.asarray(x_new, dtype=float) if frechet else frechet_score(x_new, x_ref)
    if np.any(xq <= 0):
        raise DataError("unit-Frechet covariates must be positive")
    grid = np.geomspace(xq.min(), xq.max(), grid_size) if xq.max() > xq.min() else xq[:1]
    line = bernstein_conditional_quantile_bisect(meta["J"], pi[::10], tau, grid).mean(axis=0)
    yq = np.exp(np.interp(np.log(xq), np.log(grid), np.log(line))) if grid.size > 1 else np.full(xq.shape, line[0])
    return yq if frechet else inverse_frechet(yq, y_ref)


def cmd_benchmark(a) -> int:
    cfg = BenchmarkConfig(
        N=a.n, seed=a.seed, tau=a.tau, tau0=a.tau0, window=a.window, n_trees=a.trees,
        threshold_level=a.level,
        mcmc=McmcConfig(chain_length=a.chain, burn_in=a.burnin, J=a.J),
        eqrn=replace(EqrnConfig(), max_epochs=a.epochs),
    )
    methods = tuple(a.methods)
    if a.data is not None:
        ds = _load_dataset(a.data)
        results = [run_benchmark_dataset(ds, methods, cfg, name=Path(a.data).stem)]
    else:
        ids = [1, 2, 3, 4] if a.scenario == "all" else [int(a.scenario)]
        results = [run_benchmark(i, methods, cfg) for i in ids]
    reports = [r for res in results for r in res.reports]
    write_reports_csv(reports, a.out)
    write_plot_csv(results, a.plot_data, methods)
    for r in reports:
        print(f"scenario {r.scenario:>4} {r.method:<15} rmse={r.rmse:.4f} mae={r.mae:.4f} tau={r.tau} {r.status}")
    return EXIT_OK


# --- parser ---------------------------------------------------------------------

def _fractions(parser):
    parser.add_argument("--fractions", type=float, nargs=3, default=list(SPLIT_FRACTIONS),
                        metavar=("TRAIN", "VALID", "TEST"), help="time-ordered split fractions")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with default values for this command's flags")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="extremeqr", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    subs = {}

    p = sub.add_parser("simulate", parents=[common], help="simulate a benchmark scenario")
    p.add_argument("--scenario", type=int, choices=[1, 2, 3, 4])
    p.add_argument("--n", type=int, default=7000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    _fractions(p)
    subs["simulate"] = (p, cmd_simulate, ["scenario"])

    p = sub.add_parser("transform", parents=[common],
                       help="unit-Frechet margins, or aggregate a fires CSV into a dataset")
    p.add_argument("--data")
    p.add_argument("--fires")
    p.add_argument("--out")
    p.add_argument("--train-until", type=int)
    p.add_argument("--valid-until", type=int)
    _fractions(p)
    subs["transform"] = (p, cmd_transform, ["out"])

    p = sub.add_parser("fit", parents=[common], help="fit eqrn or bernstein")
    p.add_argument("method", choices=["eqrn", "bernstein"])
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tau0", type=float, default=0.9)
    p.add_argument("--window", type=int, default=10)
    p.add_argument("--trees", type=int, default=1000)
    p.add_argument("--lead-x", action="store_true", help="window rows carry the next covariate")
    p.add_argument("--log-features", action="store_true")
    p.add_argument("--architecture", choices=["recurrent", "feedforward"], default="recurrent")
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--dense", type=int, nargs="*", default=[])
    p.add_argument("--l2", type=float, default=1e-4)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch", type=int, default=256)
    p.add_argument("--epochs", type=int, default=500)
    p.add_argument("--patience", type=int, default=20)
    p.add_argument("--chain", type=int, default=10000)
    p.add_argument("--burnin", type=int, default=4000)
    p.add_argument("--J", type=int, default=8)
    p.add_argument("--level", type=float, default=0.98)
    p.add_argument("--concentration", type=float, default=1e-4)
    p.add_argument("--margins", choices=["empirical", "frechet"], default="empirical")
    subs["fit"] = (p, cmd_fit, ["data", "out"])

    p = sub.add_parser("predict", parents=[common], help="predict conditional tau-quantiles")
    p.add_argument("--model")
    p.add_argument("--data")
    p.add_argument("--out")
    p.add_argument("--tau", type=float)
    p.add_argument("--return-period", type=int)
    p.add_argument("--ny", type=int, default=1, help="observations per year")
    p.add_argument("--split", choices=["train", "valid", "test", "all"], default="test")
    p.add_argument("--grid", type=int, default=40)
    subs["predict"] = (p, cmd_predict, ["model", "data", "out"])

    p = sub.add_parser("benchmark", parents=[common], help="compare methods on scenarios or data")
    p.add_argument("--scenario", choices=["all", "1", "2", "3", "4"], default="all")
    p.add_argument("--data")
    p.add_argument("--methods", nargs="+", choices=list(METHODS), default=list(METHODS))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=7000)
    p.add_argument("--tau", type=float, default=0.995)
    p.add_argument("--tau0", type=float, default=0.9)
    p.add_argument("--window", type=int, default=10)
    p.add_argument("--trees", type=int, default=1000)
    p.add_argument("--level", type=float, default=0.98)
    p.add_argument("--chain", type=int, default=10000)
    p.add_argument("--burnin", type=int, default=4000)
    p.add_argument("--J", type=int, default=8)
    p.add_argument("--epochs", type=int, default=500)
    p.add_argument("--out", default="benchmark_reports.csv")
    p.add_argument("--plot-data", default="benchmark_plot.csv")
    subs["benchmark"] = (p, cmd_benchmark, [])
    return parser, subs


def _apply_config(sub_parser, path) -> None:
    p = Path(path)
    if not p.is_file():
        raise DataError(f"config file not found: {p}")
    try:
        cfg = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{p}: invalid JSON ({exc})") from exc
    if not isinstance(cfg, dict):
        raise UsageError(f"{p}: top level must be an object")
    actions = {a.dest: a for a in sub_parser._actions if a.dest not in ("help", "config")}
    defaults = {}
    for key, value in cfg.items():
        dest = key.replace("-", "_")
        if dest not in actions:
            raise UsageError(f"{p}: unknown key {key!r}")
        act = actions[dest]
        if act.type is not None and value is not None:
            try:
                value = [act.type(v) for v in value] if isinstance(value, list) else act.type(value)
            except (TypeError, ValueError) as exc:
                raise UsageError(f"{p}: bad value for {key!r}: {exc}") from exc
        if act.choices is not None and value is not None:
            vals = value if isinstance(value, list) else [value]
            if any(v not in act.choices for v in vals):
                raise UsageError(f"{p}: {key!r} must be one of {list(act.choices)}")
        defaults[dest] = value
    sub_parser.set_defaults(**defaults)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, subs = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    sub_parser, handler, required = subs[args.command]
    try:
        if args.config:
            _apply_config(sub_parser, args.config)
            try:
                args = parser.parse_args(argv)
            except SystemExit as exc:
                return int(exc.code or 0)
        missing = [f"--{r.replace('_', '-')}" for r in required if getattr(args, r) is None]
        if missing:
            raise UsageError(f"missing required option(s): {', '.join(missing)}")
        return handler(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NUMERIC_ERRORS as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
