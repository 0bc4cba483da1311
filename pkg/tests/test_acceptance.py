"""Acceptance criteria 1-10, each printing a single PASS/FAIL line."""

import math
import time

import numpy as np
import pytest
from scipy.special import roots_legendre
from scipy.stats import kstest, norm

from extremeqr.angular_model import (
    InfeasibleWeightsError, bernstein_conditional_cdf, bernstein_density, constraint_residuals,
    resolve_weights,
)
from extremeqr.benchmark import BenchmarkConfig, run_benchmark
from extremeqr.bev_models import (
    ColesTawn, HuslerReiss, Logistic, conditional_cdf, conditional_quantile, conditional_quantile_bisect,
    logistic_manifold_approx,
)
from extremeqr.gpd_tail import GpdParams, extrapolate_quantile, gpd_exceedance_prob, ogpd_loss, ogpd_loss_grad, reparam
from extremeqr.margins_eval import frechet_transform, pseudo_angles, select_threshold
from extremeqr.posterior_mcmc import McmcConfig, posterior_regression_line, run_chain
from extremeqr.scenario_sim import empirical_extremal_coefficient, sample_bev, simulate_scenario

from test_angular_model import generic_conditional_oracle
from test_posterior_mcmc import sample_j4, total_variation_vs_grid

pytestmark = pytest.mark.acceptance


# --- 1 ---------------------------------------------------------------------------------

def test_criterion_01_quantile_inversion(acceptance_line):
    start = time.perf_counter()
    models = [HuslerReiss(0.1), Logistic(0.9), ColesTawn(0.5, 100.0),
              HuslerReiss(1.5), Logistic(0.3), ColesTawn(2.0, 3.0)]
    worst = 0.0
    for m in models:
        for q in (0.5, 0.9, 0.99, 0.999):
            for x in (0.5, 1.0, 5.0, 50.0):
                y = conditional_quantile(m, q, x)
                worst = max(worst, abs(float(conditional_cdf(m, y, x)) - q))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-8 and elapsed < 5.0
    assert acceptance_line(1, ok, f"max |G(y_q|x)-q| = {worst:.2e}, {elapsed:.2f} s")


# --- 2 ---------------------------------------------------------------------------------

def test_criterion_02_logistic_manifold(acceptance_line):
    worst = 0.0
    decreasing = True
    for a in (0.3, 0.5, 0.7):
        for q in (0.9, 0.95):
            errs = []
            for x in (10.0, 100.0, 1000.0):
                exact = conditional_quantile(Logistic(a), q, x)
                errs.append(abs(float(logistic_manifold_approx(a, q, x)) / exact - 1))
            worst = max(worst, errs[1])
            decreasing &= errs[0] > errs[1] > errs[2]
    ok = worst <= 0.01 and decreasing
    assert acceptance_line(2, ok, f"max rel. error at x=100: {worst:.2e}, decreasing in x: {decreasing}")


# --- 3 ---------------------------------------------------------------------------------

def test_criterion_03_bernstein_constraints(acceptance_line):
    nodes, weights = roots_legendre(64)
    w01 = 0.5 * (nodes + 1)
    rng = np.random.default_rng(3)
    worst_moment = 0.0
    samples = {}
    for J in (4, 8, 12):
        count = 0
        while count < 200:
            try:
                w = resolve_weights(rng.normal(0, 1.5, J - 3), J)
            except InfeasibleWeightsError:
                continue
            dens = bernstein_density(w, w01)
            mass = 0.5 * np.sum(weights * dens)
            mean = 0.5 * np.sum(weights * w01 * dens)
            res = np.max(np.abs(constraint_residuals(w)))
            worst_moment = max(worst_moment, abs(mass - 1), abs(mean - 0.5), res)
            if count < 3:
                samples.setdefault(J, []).append(w)
            count += 1
    grid = [0.1, 0.7, 2.0, 15.0, 120.0]
    worst_cdf = 0.0
    for J, ws in samples.items():
        for w in ws:
            for x in grid:
                for y in grid:
                    worst_cdf = max(worst_cdf, abs(float(bernstein_conditional_cdf(w, y, x))
                                                   - generic_conditional_oracle(w, y, x)))
    ok = worst_moment <= 1e-6 and worst_cdf <= 1e-5
    assert acceptance_line(3, ok, f"moment residual {worst_moment:.2e}, conditional CDF vs quadrature {worst_cdf:.2e}")


# --- 4 ---------------------------------------------------------------------------------

def test_criterion_04_ogpd(acceptance_line):
    rng = np.random.default_rng(4)
    worst_fd = 0.0
    n = 0
    while n < 100:
        xi = rng.uniform(-0.4, 1.0)
        nu = rng.uniform(0.2, 5.0)
        z = rng.uniform(0.01, 5.0)
        if xi < 0 and xi * (xi + 1) * z / nu <= -0.9:
            continue
        h = 1e-6
        fd = np.array([
            (ogpd_loss(z, nu * (1 + h), xi) - ogpd_loss(z, nu * (1 - h), xi)) / (2 * h * nu),
            (ogpd_loss(z, nu, xi + h) - ogpd_loss(z, nu, xi - h)) / (2 * h),
        ])
        g = np.array(ogpd_loss_grad(z, nu, xi), dtype=float)
        worst_fd = max(worst_fd, float(np.max(np.abs(g - fd) / np.maximum(np.abs(fd), 1e-3))))
        n += 1

    worst_trip = 0.0
    for _ in range(1000):
        p = GpdParams(rng.uniform(0.1, 10), rng.uniform(-0.49, 1.5))
        tau0 = rng.uniform(0.5, 0.95)
        tau = tau0 + (1 - tau0) * rng.uniform(0.01, 0.999)
        q0 = rng.normal()
        y = extrapolate_quantile(q0, reparam(p), tau0, tau)
        worst_trip = max(worst_trip, abs(gpd_exceedance_prob(y, q0, p, tau0) - (1 - tau)))

    gap = 0.0
    for z in (0.2, 1.0, 4.0):
        for nu in (0.5, 2.0):
            for c in (1e-6, -1e-6):
                a, b = ogpd_loss(z, nu, c * 1.0001), ogpd_loss(z, nu, c * 0.9999)
                slope = ogpd_loss_grad(z, nu, c)[1]
                gap = max(gap, abs(a - b - slope * c * 2e-4))
    for c in (1e-6, -1e-6):
        lo = extrapolate_quantile(0.0, (np.array(1.0), np.array(c * 0.999999)), 0.9, 0.999)
        hi = extrapolate_quantile(0.0, (np.array(1.0), np.array(c * 1.000001)), 0.9, 0.999)
        gap = max(gap, abs(hi - lo))
    ok = worst_fd <= 1e-4 and worst_trip <= 1e-10 and gap <= 1e-9
    assert acceptance_line(4, ok, f"gradient rel. error {worst_fd:.2e}, round trip {worst_trip:.2e}, "
                                  f"branch gap {gap:.2e}")


# --- 5 ---------------------------------------------------------------------------------

def test_criterion_05_mcmc(acceptance_line):
    start = time.perf_counter()
    angles = sample_j4(0.3, 60, np.random.default_rng(3))
    ch = run_chain(angles, McmcConfig(J=4, seed=1, prior_concentration=1.0))
    tv = total_variation_vs_grid(ch.weights[:, 0], angles, 1.0)
    part_a = len(ch) == 6000 and tv <= 0.05

    model = Logistic(0.9)
    x, y = sample_bev(model, 50000, seed=5)
    _, idx = select_threshold(x, y, 0.98)
    w = pseudo_angles(x[idx], y[idx])
    chain = run_chain(w, McmcConfig(seed=5))
    xs = np.array([1.0, 2.0, 5.0, 10.0])
    est = posterior_regression_line(chain, 0.95, xs).mean
    truth = conditional_quantile_bisect(model, 0.95, xs)
    rel = est / truth - 1
    part_b = bool(np.all(np.abs(rel) <= 0.15))
    elapsed = time.perf_counter() - start
    ok = part_a and part_b and elapsed < 600
    assert acceptance_line(5, ok, f"(a) TV {tv:.3f} over {len(ch)} draws; (b) {w.size} angles, "
                                  f"rel. errors {np.array2string(rel, precision=3)}; {elapsed:.0f} s")


# --- 6 and 7 share one full benchmark run ----------------------------------------------

@pytest.fixture(scope="module")
def full_benchmark():
    results = {}
    times = {}
    for k in (1, 2, 3, 4):
        start = time.perf_counter()
        results[k] = run_benchmark(k, config=BenchmarkConfig())
        times[k] = time.perf_counter() - start
    return results, times


@pytest.mark.slow
def test_criterion_06_eqrn_scenario1(full_benchmark, acceptance_line):
    results, times = full_benchmark
    res = results[1]
    rep = {r.method: r for r in res.reports}["eqrn"]
    xi = res.diagnostics.get("eqrn_median_xi", math.nan)
    ok = (rep.status == "ok" and rep.mae <= 2.5 and rep.rmse <= 3.5 and abs(xi) <= 0.15
          and times[1] <= 900)
    assert acceptance_line(6, ok, f"RMSE {rep.rmse:.3f}, MAE {rep.mae:.3f}, median xi {xi:+.3f}, "
                                  f"{times[1]:.0f} s")


@pytest.mark.slow
def test_criterion_07_ordering(full_benchmark, acceptance_line):
    results, _ = full_benchmark
    parts = []
    ok = True
    for k, res in results.items():
        rep = {r.method: r for r in res.reports}
        e, b = rep["eqrn"], rep["bernstein_mcmc"]
        wins = e.status == b.status == "ok" and e.rmse < b.rmse and e.mae < b.mae
        ok &= wins
        parts.append(f"S{k} eqrn {e.rmse:.3g}/{e.mae:.3g} vs bernstein {b.rmse:.3g}/{b.mae:.3g} "
                     f"{'win' if wins else 'loss'}")
    assert acceptance_line(7, ok, "(rmse/mae) " + "; ".join(parts))


# --- 8 ---------------------------------------------------------------------------------

def test_criterion_08_margins(acceptance_line):
    rng = np.random.default_rng(8)
    n = 5000
    ds = simulate_scenario(1, n, seed=8)
    xh, yh = frechet_transform(ds.x), frechet_transform(ds.y)
    ks = max(kstest(v, lambda t: np.exp(-1 / t)).statistic for v in (xh, yh))
    _, idx = select_threshold(xh, yh, 0.98)
    count_ok = abs(idx.size - math.ceil(0.02 * n)) <= 1
    extra = [select_threshold(frechet_transform(rng.normal(size=m)), frechet_transform(rng.normal(size=m)), 0.98)[1].size
             - math.ceil(0.02 * m) for m in (100, 1234, 7000)]
    count_ok &= all(abs(d) <= 1 for d in extra)
    ok = ks <= 0.03 and count_ok
    assert acceptance_line(8, ok, f"KS {ks:.4f}, retained {idx.size} of {n} (target {math.ceil(0.02 * n)})")


# --- 9 ---------------------------------------------------------------------------------

def test_criterion_09_sampler(acceptance_line):
    n = 5000
    data = {k: simulate_scenario(k, n, seed=90 + k) for k in (2, 3, 4)}
    ec2 = empirical_extremal_coefficient(data[2].x, data[2].y)
    ec3 = empirical_extremal_coefficient(data[3].x, data[3].y)
    ks = max(kstest(np.exp(-1 / v), "uniform").statistic for d in data.values() for v in (d.x, d.y))
    ok = abs(ec2 - 2 * norm.cdf(0.1)) <= 0.1 and abs(ec3 - 2 ** 0.9) <= 0.1 and ks <= 0.03
    assert acceptance_line(9, ok, f"theta_2 {ec2:.3f} (target {2 * norm.cdf(0.1):.3f}), "
                                  f"theta_3 {ec3:.3f} (target {2 ** 0.9:.3f}), max KS {ks:.4f}")


# --- 10 --------------------------------------------------------------------------------

def test_criterion_10_cli_determinism(tmp_path, monkeypatch, acceptance_line):
    from extremeqr.cli import main

    monkeypatch.chdir(tmp_path)
    fires = tmp_path / "fires.csv"
    rng = np.random.default_rng(10)
    lines = ["year,station,max_temp_c,fires"]
    for year in range(1963, 2023):
        for st in ("a", "b"):
            lines.append(f"{year},{st},{38 + rng.normal(0, 3):.1f},{int(rng.poisson(20))}")
    fires.write_text("\n".join(lines) + "\n")
    fast_nn = ["--trees", "40", "--window", "5", "--hidden", "8", "--epochs", "10"]
    fast_mc = ["--chain", "1000", "--burnin", "300", "--J", "4", "--level", "0.95"]
    commands = [
        (["simulate", "--scenario", "1", "--n", "600", "--seed", "42", "--out", "d.csv"], ["d.csv"]),
        (["simulate", "--scenario", "4", "--n", "600", "--seed", "42", "--out", "e.csv"], ["e.csv"]),
        (["transform", "--data", "d.csv", "--out", "t.csv"], ["t.csv"]),
        (["transform", "--fires", str(fires), "--out", "f.csv"], ["f.csv"]),
        (["fit", "eqrn", "--data", "d.csv", "--out", "m.eqrn", "--seed", "1", *fast_nn],
         ["m.eqrn", "m.eqrn.forest", "m.eqrn.forest.json", "m.eqrn.json", "m.eqrn.log.csv"]),
        (["predict", "--model", "m.eqrn", "--data", "d.csv", "--tau", "0.995", "--out", "p.csv"], ["p.csv"]),
        (["fit", "bernstein", "--data", "d.csv", "--out", "b.json", "--seed", "1", *fast_mc],
         ["b.json", "b.json.chain.csv"]),
        (["predict", "--model", "b.json", "--data", "d.csv", "--return-period", "100", "--out", "q.csv"],
         ["q.csv"]),
        (["benchmark", "--scenario", "all", "--seed", "7", "--n", "800", "--trees", "40", "--window", "5",
          "--chain", "1000", "--burnin", "300", "--J", "4", "--epochs", "10"],
         ["benchmark_reports.csv", "benchmark_plot.csv"]),
    ]
    differing = []
    for args, outputs in commands:
        blobs = []
        for _ in range(2):
            code = main(args)
            assert code == 0, args
            blobs.append([(tmp_path / o).read_bytes() for o in outputs])
        if blobs[0] != blobs[1]:
            differing.append(args[0])
    ok = not differing
    assert acceptance_line(10, ok, f"{len(commands)} invocations byte-identical on rerun"
                                   + (f"; differing: {differing}" if differing else ""))
