import csv
import math

import numpy as np
import pytest

from extremeqr.angular_model import _basis, constraint_residuals, resolve_weights, weights_from_pi
from extremeqr.posterior_mcmc import (
    McmcConfig, PosteriorChain, angular_log_likelihood, log_prior, posterior_regression_line,
    run_chain, write_band_csv, write_chain_csv,
)


def sample_j4(t, n, rng):
    """Angles from the J=4 mixture with weights (t, 1-2t, t)."""
    comp = rng.choice(3, size=n, p=[t, 1 - 2 * t, t])
    a = np.array([1, 2, 3])[comp]
    return rng.beta(a, 4 - a)


def j4(t):
    return weights_from_pi([t, 1 - 2 * t, t], 4)


def grid_posterior_cdf(angles, c, grid):
    B = _basis(4, angles)
    ll = np.array([np.sum(np.log(B @ np.array([t, 1 - 2 * t, t]))) for t in grid])
    lp = ll + 2 * (c - 1) * np.log(grid) + (c - 1) * np.log1p(-2 * grid)
    p = np.exp(lp - lp.max())
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (p[1:] + p[:-1]) * np.diff(grid))])
    return cdf / cdf[-1]


def total_variation_vs_grid(draws, angles, c, n_bins=10):
    grid = np.linspace(0, 0.5, 20001)[1:-1]
    cdf = grid_posterior_cdf(angles, c, grid)
    edges = np.interp(np.linspace(0, 1, n_bins + 1), cdf, grid)
    edges[0], edges[-1] = 0.0, 0.5
    hist = np.histogram(draws, edges)[0] / draws.size
    return 0.5 * np.sum(np.abs(hist - 1.0 / n_bins))


# --- config -----------------------------------------------------------------------

def test_config_defaults_and_validation():
    c = McmcConfig()
    assert (c.chain_length, c.burn_in, c.target_accept, c.adapt_interval, c.prior_concentration, c.J) == \
        (10000, 4000, 0.44, 50, 1e-4, 8)
    for bad in (dict(burn_in=10, chain_length=10), dict(target_accept=1.0), dict(prior_concentration=0.0)):
        with pytest.raises(ValueError):
            McmcConfig(**bad)


# --- prior ---------------------------------------------------------------------------

def test_flat_prior_is_constant():
    vals = [log_prior(j4(t), 1.0) for t in (0.05, 0.2, 0.4)]
    assert vals[0] == vals[1] == vals[2]


def test_tiny_concentration_prior_is_u_shaped():
    # (c - 1) * sum log pi with pi = (t, 1-2t, t): derivative (c-1)(2/t - 2/(1-2t))
    c = 1e-4
    t = np.array([0.05, 0.1, 0.3, 0.45])
    lp = np.array([log_prior(j4(v), c) for v in t])
    deriv = (c - 1) * (2 / t - 2 / (1 - 2 * t))
    h = 1e-6
    fd = np.array([(log_prior(j4(v + h), c) - log_prior(j4(v - h), c)) / (2 * h) for v in t])
    assert np.allclose(fd, deriv, rtol=1e-5)
    assert fd[0] < 0 and fd[-1] > 0
    assert lp[0] > lp[1] and lp[-1] > lp[-2]


def test_constraint_violation_gives_minus_infinity():
    from extremeqr.angular_model import AngularWeights
    bad = AngularWeights(J=4, pi=np.array([0.5, 0.2, 0.3]), pi_logit=np.zeros(1))
    assert log_prior(bad, 1.0) == -math.inf


# --- likelihood ------------------------------------------------------------------------

def test_uniform_likelihood_is_zero():
    w = resolve_weights([], 2)
    assert angular_log_likelihood([0.1, 0.5, 0.77], w) == pytest.approx(0.0, abs=1e-14)


def test_single_central_angle_all_thirds():
    assert angular_log_likelihood([0.5], j4(1 / 3)) == pytest.approx(0.0, abs=1e-14)


def test_likelihood_prefers_mass_near_mode():
    angles = np.random.default_rng(0).beta(5, 5, 50)   # concentrated near 1/2
    assert angular_log_likelihood(angles, j4(0.05)) > angular_log_likelihood(angles, j4(0.45))


def test_likelihood_errors():
    with pytest.raises(ValueError):
        angular_log_likelihood([], j4(0.3))
    with pytest.raises(ValueError):
        angular_log_likelihood([0.0, 0.5], j4(0.3))


# --- sampler -----------------------------------------------------------------------------

def test_chain_requires_enough_angles():
    with pytest.raises(ValueError):
        run_chain([0.3, 0.6], McmcConfig(J=4))


def test_zero_information_acceptance_rates():
    angles = np.linspace(0.2, 0.8, 10)   # nearly uninformative; flat prior
    ch = run_chain(angles, McmcConfig(J=6, prior_concentration=1.0, chain_length=3000, burn_in=1500, seed=4))
    assert np.all((ch.accept_rates >= 0.1) & (ch.accept_rates <= 0.8))


def test_chain_is_deterministic_given_seed():
    angles = sample_j4(0.3, 40, np.random.default_rng(1))
    cfg = McmcConfig(J=5, chain_length=600, burn_in=200, seed=9)
    a, b = run_chain(angles, cfg), run_chain(angles, cfg)
    assert np.array_equal(a.weights, b.weights)
    assert np.array_equal(a.log_posterior_trace, b.log_posterior_trace)
    c = run_chain(angles, McmcConfig(J=5, chain_length=600, burn_in=200, seed=10))
    assert not np.array_equal(a.weights, c.weights)


def test_draws_are_valid_and_trace_finite():
    angles = sample_j4(0.3, 100, np.random.default_rng(2))
    ch = run_chain(angles, McmcConfig(J=8, chain_length=1500, burn_in=500, seed=1))
    assert len(ch) == 1000 and ch.weights.shape == (1000, 7)
    assert np.all(ch.weights > 0)
    res = np.array([constraint_residuals(d) for d in ch.draws[::50]])
    assert np.max(np.abs(res)) <= 1e-10
    assert np.all(np.isfinite(ch.log_posterior_trace[ch.burn_in:]))
    assert np.all((ch.accept_rates >= 0) & (ch.accept_rates <= 1))


def test_recovers_j4_mixture_weight():
    angles = sample_j4(0.45, 500, np.random.default_rng(11))
    ch = run_chain(angles, McmcConfig(J=4, seed=3))
    assert abs(ch.weights[:, 0].mean() - 0.45) <= 0.1


def test_one_free_weight_posterior_matches_grid():
    angles = sample_j4(0.3, 60, np.random.default_rng(3))
    ch = run_chain(angles, McmcConfig(J=4, seed=1, prior_concentration=1.0))
    assert len(ch) == 6000
    assert total_variation_vs_grid(ch.weights[:, 0], angles, 1.0) <= 0.05


# --- regression lines ---------------------------------------------------------------------

def _toy_chain():
    angles = sample_j4(0.3, 200, np.random.default_rng(5))
    return run_chain(angles, McmcConfig(J=6, chain_length=1200, burn_in=200, seed=2))


def test_band_ordering_and_finiteness():
    ch = _toy_chain()
    band = posterior_regression_line(ch, 0.9, [0.5, 1.0, 10.0])
    assert band.per_draw.shape == (100, 3)
    assert np.all(np.isfinite(band.mean))
    assert np.all(band.lower95 <= band.mean) and np.all(band.mean <= band.upper95)


def test_higher_level_dominates_per_draw():
    ch = _toy_chain()
    lo = posterior_regression_line(ch, 0.9, [0.5, 2.0, 20.0]).per_draw
    hi = posterior_regression_line(ch, 0.99, [0.5, 2.0, 20.0]).per_draw
    assert np.all(hi >= lo)


def test_single_draw_band_collapses():
    w = j4(0.3)
    ch = PosteriorChain(J=4, weights=w.pi[None, :], logits=w.pi_logit[None, :],
                        accept_rates=np.zeros(1), log_posterior_trace=np.zeros(1))
    band = posterior_regression_line(ch, 0.95, [1.0, 3.0])
    assert np.array_equal(band.lower95, band.mean) and np.array_equal(band.upper95, band.mean)


def test_csv_exports(tmp_path):
    ch = _toy_chain()
    write_chain_csv(ch, tmp_path / "chain.csv")
    rows = list(csv.reader(open(tmp_path / "chain.csv")))
    assert rows[0][:3] == ["iteration", "log_posterior", "pi_1_5"] and len(rows) == len(ch) + 1
    assert float(rows[1][2]) == ch.weights[0, 0]
    band = posterior_regression_line(ch, 0.9, [1.0, 2.0])
    write_band_csv(band, tmp_path / "band.csv")
    rows = list(csv.reader(open(tmp_path / "band.csv")))
    assert rows[0] == ["x", "mean", "lo", "hi"] and len(rows) == 3
