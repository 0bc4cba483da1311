"""Benchmark harness comparing the neural tail model with Bernstein-MCMC.

For each scenario the harness simulates data (or takes a dataset), fits both
methods on the train/validation splits, predicts tau-quantiles on the test
split, and scores them against ground truth. The scale is always the response
scale of the data, for both methods.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .baseline_quantile import ForestConfig, fit_quantile_forest, forest_quantile
from .bev_models import conditional_quantile_bisect
from .margins_eval import (
    MetricReport, Windows, frechet_score, frechet_transform, inverse_frechet, mae,
    make_windows, pseudo_angles, rmse, select_threshold,
)
from .posterior_mcmc import McmcConfig, posterior_regression_line, run_chain
from .scenario_sim import (
    SPLIT_FRACTIONS, SeriesDataset, scenario_preset, simulate_scenario, true_scenario1_quantile,
)
from .tail_network import (
    EqrnConfig, extract_exceedances, forward_batch, predict_extreme_quantile, train,
)

__all__ = [
    "BenchmarkConfig", "BenchmarkResult", "run_benchmark", "run_benchmark_dataset",
    "write_plot_csv", "METHODS", "fit_intermediate", "bernstein_predict",
]

log = logging.getLogger(__name__)

METHODS = ("bernstein_mcmc", "eqrn")


@dataclass(frozen=True)
class BenchmarkConfig:
    N: int = 7000
    seed: int = 0
    tau: float = 0.995
    tau0: float = 0.9
    window: int = 10
    n_trees: int = 1000
    threshold_level: float = 0.98
    grid_size: int = 40
    fractions: tuple = SPLIT_FRACTIONS
    mcmc: McmcConfig = McmcConfig()
    eqrn: EqrnConfig = EqrnConfig()


@dataclass
class BenchmarkResult:
    scenario: str
    reports: list[MetricReport]
    t: np.ndarray
    truth: np.ndarray
    predictions: dict[str, np.ndarray] = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)


def _seeds(master: int, scenario) -> dict[str, int]:
    key = int(scenario) if str(scenario).isdigit() else 0
    state = np.random.SeedSequence([int(master), key]).generate_state(4)
    return dict(zip(("data", "forest", "eqrn", "mcmc"), (int(v) for v in state)))


# --- intermediate quantiles ---------------------------------------------------

@dataclass
class Intermediate:
    """Intermediate tau0-quantiles per split, aligned with the windows."""

    windows: dict[str, Windows]
    q0: dict[str, np.ndarray]
    forest: object


def _flat(w: Windows) -> np.ndarray:
    return w.features.reshape(len(w), -1)


def fit_intermediate(series: SeriesDataset, features: Windows, tau0: float,
                     n_trees: int, seed: int) -> Intermediate:
    """One forest per fitting split (out-of-bag predictions inside it); test uses the train forest."""
    parts = {name: features.in_range(*series.split[name]) for name in ("train", "valid", "test")}
    q0 = {}
    forest = None
    for k, name in enumerate(("train", "valid")):
        w = parts[name]
        f = fit_quantile_forest(_flat(w), series.y[w.target],
                                ForestConfig(n_trees=n_trees, seed=seed + k))
        q0[name] = forest_quantile(f, tau=tau0, mode="oob")
        if name == "train":
            forest = f
    q0["test"] = forest_quantile(forest, _flat(parts["test"]), tau=tau0)
    return Intermediate(windows=parts, q0=q0, forest=forest)


def _feature_windows(series: SeriesDataset, s: int, lead_x: bool, log_scale: bool) -> Windows:
    if log_scale:
        series = replace(series, x=np.log(series.x), y=np.log(series.y))
    return make_windows(series, s=s, lead_x=lead_x)


# --- methods -----------------------------------------------------------------

def _eqrn(series, inter: Intermediate, cfg: BenchmarkConfig, seed: int):
    y = series.y
    sets = {}
    for name in ("train", "valid"):
        w = inter.windows[name]
        sets[name] = extract_exceedances(y[w.target], inter.q0[name], w)
    model = train(sets["train"], sets["valid"], cfg.tau0, replace(cfg.eqrn, seed=seed),
                  feature_stats=_stats(inter.windows["train"].features))
    test = inter.windows["test"]
    pred = predict_extreme_quantile(model, test.features, inter.q0["test"], cfg.tau)
    _, xi = forward_batch(model, test.features)
    return pred, {"eqrn_median_xi": float(np.median(xi)), "eqrn_epochs": len(model.training_log) - 1,
                  "eqrn_n_exceedances": len(sets["train"])}


def _stats(features):
    mean = features.mean(axis=(0, 1))
    std = features.std(axis=(0, 1))
    return mean, np.where(std > 0, std, 1.0)


def bernstein_predict(x_fit, y_fit, x_new, cfg: BenchmarkConfig, seed: int,
                      frechet_margins: bool, thin: int = 10):
    """Posterior-mean regression line ``y_{tau|x}`` evaluated at ``x_new``.

    With ``frechet_margins`` the data are taken to be on unit-Frechet scale
    already; otherwise both margins are transformed empirically and the
    prediction is mapped back through the empirical quantile of ``y_fit``.
    """
    x_fit = np.asarray(x_fit, dtype=float)
    y_fit = np.asarray(y_fit, dtype=float)
    if frechet_margins:
        xh, yh = x_fit, y_fit
        xq = np.asarray(x_new, dtype=float)
    else:
        xh, yh = frechet_transform(x_fit), frechet_transform(y_fit)
        xq = frechet_score(x_new, x_fit)
    _, idx = select_threshold(xh, yh, cfg.threshold_level)
    angles = pseudo_angles(xh[idx], yh[idx])
    chain = run_chain(angles, replace(cfg.mcmc, seed=seed))
    grid = np.geomspace(xq.min(), xq.max(), cfg.grid_size) if xq.max() > xq.min() else xq[:1]
    band = posterior_regression_line(chain, cfg.tau, grid, thin=thin)
    if grid.size > 1:
        yq = np.exp(np.interp(np.log(xq), np.log(grid), np.log(band.mean)))
    else:
        yq = np.full(xq.shape, band.mean[0])
    pred = yq if frechet_margins else inverse_frechet(yq, y_fit)
    return pred, {"mcmc_accept": float(np.mean(chain.accept_rates)) if chain.accept_rates.size else 1.0,
                  "mcmc_n_angles": int(angles.size)}


def _bernstein(series, inter: Intermediate, cfg: BenchmarkConfig, seed: int, frechet_margins: bool):
    lo, hi = series.split["train"][0], series.split["valid"][1]
    x = series.x2d.mean(axis=1)
    test = inter.windows["test"]
    # the regression covariate is the last covariate row of each window
    shift = 0 if test.lead_x else 1
    return bernstein_predict(x[lo:hi], series.y[lo:hi], x[test.target - shift], cfg, seed, frechet_margins)


# --- harness -----------------------------------------------------------------

def _score(method, scenario, pred, truth, tau) -> MetricReport:
    return MetricReport(method=method, scenario=scenario, rmse=rmse(pred, truth), mae=mae(pred, truth),
                        tau=tau, n=int(np.size(truth)))


def _evaluate(series: SeriesDataset, scenario: str, truth_fn: Callable, methods, cfg: BenchmarkConfig,
              seeds: dict, lead_x: bool, log_scale: bool, frechet_margins: bool) -> BenchmarkResult:
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}; expected {METHODS}")
    if not cfg.tau0 < cfg.tau < 1:
        raise ValueError("need tau0 < tau < 1")
    feats = _feature_windows(series, cfg.window, lead_x, log_scale)
    test_t = feats.in_range(*series.split["test"]).target
    truth = truth_fn(test_t)
    result = BenchmarkResult(scenario=scenario, reports=[], t=test_t, truth=truth)

    inter = None
    for method in methods:
        try:
            if method == "eqrn":
                if inter is None:
                    inter = fit_intermediate(series, feats, cfg.tau0, cfg.n_trees, seeds["forest"])
                pred, diag = _eqrn(series, inter, cfg, seeds["eqrn"])
            else:
                parts = Intermediate(windows={"test": feats.in_range(*series.split["test"])}, q0={}, forest=None)
                pred, diag = _bernstein(series, parts, cfg, seeds["mcmc"], frechet_margins)
            if not np.all(np.isfinite(pred)):
                raise FloatingPointError("non-finite predictions")
            result.predictions[method] = pred
            result.diagnostics.update(diag)
            result.reports.append(_score(method, scenario, pred, truth, cfg.tau))
        except Exception as exc:  # one failing method must not sink the other
            log.warning("%s failed on scenario %s: %s", method, scenario, exc)
            result.diagnostics[f"{method}_error"] = f"{type(exc).__name__}: {exc}"
            result.reports.append(MetricReport(method=method, scenario=scenario, rmse=math.nan,
                                               mae=math.nan, tau=cfg.tau, n=int(np.size(truth)),
                                               status=f"failed: {type(exc).__name__}"))
    return result


def run_benchmark(scenario_id: int, methods=METHODS, config: BenchmarkConfig = BenchmarkConfig()) -> BenchmarkResult:
    """Simulate a scenario and score each method against the known conditional quantile."""
    preset = scenario_preset(scenario_id)
    seeds = _seeds(config.seed, preset.id)
    series = simulate_scenario(preset.id, config.N, seeds["data"], config.fractions)
    if preset.kind == "timeseries":
        def truth_fn(t):
            return true_scenario1_quantile(series.sigma_truth[t], config.tau)
        return _evaluate(series, str(preset.id), truth_fn, methods, config, seeds,
                         lead_x=False, log_scale=False, frechet_margins=False)

    def truth_fn(t):
        return conditional_quantile_bisect(preset.model, config.tau, series.x[t])
    return _evaluate(series, str(preset.id), truth_fn, methods, config, seeds,
                     lead_x=True, log_scale=True, frechet_margins=True)


def run_benchmark_dataset(series: SeriesDataset, methods=METHODS, config: BenchmarkConfig = BenchmarkConfig(),
                          name: str = "data") -> BenchmarkResult:
    """Score against observed responses on the test split (no known truth)."""
    seeds = _seeds(config.seed, 0)
    return _evaluate(series, name, lambda t: series.y[t], methods, config, seeds,
                     lead_x=True, log_scale=False, frechet_margins=False)


def write_plot_csv(results, path, methods=METHODS) -> None:
    """Long-format overlay data: scenario, t, truth, one column per method."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(["scenario", "t", "truth"] + list(methods))
        for res in results:
            for k, t in enumerate(res.t):
                row = [res.scenario, int(t), repr(float(res.truth[k]))]
                for m in methods:
                    p = res.predictions.get(m)
                    row.append(repr(float(p[k])) if p is not None else "")
                wr.writerow(row)
