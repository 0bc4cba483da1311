import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import linprog

from extremeqr.baseline_quantile import (
    ForestConfig, OobUndefinedError, QuantileForest, fit_linear_qr, fit_quantile_forest,
    forest_quantile, pinball_loss,
)


def lp_quantile_regression(X, y, tau):
    """Oracle: the primal linear program min tau*1'u + (1-tau)*1'v, Zb + u - v = y."""
    n = len(y)
    Z = np.column_stack([np.ones(n), X])
    k = Z.shape[1]
    c = np.concatenate([np.zeros(k), tau * np.ones(n), (1 - tau) * np.ones(n)])
    A = np.hstack([Z, np.eye(n), -np.eye(n)])
    bounds = [(None, None)] * k + [(0, None)] * (2 * n)
    res = linprog(c, A_eq=A, b_eq=y, bounds=bounds, method="highs")
    return res.x[:k], res.fun


def empirical_quantile(y, tau):
    ys = np.sort(y)
    k = max(int(np.ceil(tau * len(ys) - 1e-12)), 1)
    return ys[k - 1]


# --- pinball / linear QR ---------------------------------------------------------------

def test_pinball_values():
    assert pinball_loss([1.0, -2.0], 0.9) == pytest.approx(0.9 + 0.2)


def test_median_regression_recovers_line():
    rng = np.random.default_rng(0)
    x = rng.uniform(-3, 3, 400)
    y = 1.5 - 2.0 * x + rng.laplace(0, 0.3, 400)
    m = fit_linear_qr(x[:, None], y, 0.5)
    assert m.beta_q == pytest.approx([1.5, -2.0], abs=0.08)


def test_intercept_only_equals_empirical_quantile():
    rng = np.random.default_rng(1)
    y = rng.normal(size=101)
    m = fit_linear_qr(np.zeros((101, 0)), y, 0.9)
    assert m.beta_q[0] == pytest.approx(empirical_quantile(y, 0.9), abs=1e-9)


@pytest.mark.parametrize("tau", [0.1, 0.5, 0.9])
def test_objective_matches_linear_program(tau):
    rng = np.random.default_rng(2)
    X = rng.normal(size=(60, 2))
    y = X @ [0.5, -1.0] + rng.standard_t(3, 60)
    m = fit_linear_qr(X, y, tau)
    _, opt = lp_quantile_regression(X, y, tau)
    ours = pinball_loss(y - m.predict(X), tau)
    assert ours == pytest.approx(opt, rel=1e-8, abs=1e-10)


def test_duplicated_rows_give_same_fit():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(40, 1))
    y = X[:, 0] + rng.normal(size=40)
    a = fit_linear_qr(X, y, 0.7)
    b = fit_linear_qr(np.vstack([X, X]), np.concatenate([y, y]), 0.7)
    la = pinball_loss(y - a.predict(X), 0.7)
    lb = pinball_loss(y - b.predict(X), 0.7)
    assert la == pytest.approx(lb, rel=1e-9)


@given(seed=st.integers(0, 1000), tau=st.sampled_from([0.25, 0.5, 0.8]))
def test_pinball_optimality_under_perturbation(seed, tau):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(30, 1))
    y = 2 * X[:, 0] + rng.normal(size=30)
    m = fit_linear_qr(X, y, tau)
    base = pinball_loss(y - m.predict(X), tau)
    for d in np.array([[1, 0], [-1, 0], [0, 1], [0, -1], [1, 1], [-1, 1]]) * 1e-3:
        Z = np.column_stack([np.ones(30), X])
        assert pinball_loss(y - Z @ (m.beta_q + d), tau) >= base - 1e-12


def test_rank_deficiency_and_size_errors():
    X = np.column_stack([np.arange(10.0), 2 * np.arange(10.0)])
    with pytest.raises(np.linalg.LinAlgError):
        fit_linear_qr(X, np.arange(10.0), 0.5)
    with pytest.raises(ValueError):
        fit_linear_qr(np.ones((2, 3)), np.ones(2), 0.5)


# --- forest ------------------------------------------------------------------------------

def oracle_weights(forest, X):
    """Brute-force co-membership weights: one loop per tree and query."""
    leaves = forest.apply(X)
    n = forest.y.size
    W = np.zeros((len(X), n))
    for b in range(forest.n_trees):
        counts = forest.inbag[:, b].astype(float)
        for i in range(len(X)):
            same = (forest.train_leaf[:, b] == leaves[i, b]) * counts
            W[i] += same / same.sum()
    return W / forest.n_trees


def test_single_leaf_forest_is_empirical_quantile():
    rng = np.random.default_rng(4)
    y = rng.normal(size=80)
    X = rng.normal(size=(80, 2))
    f = fit_quantile_forest(X, y, ForestConfig(n_trees=1, min_leaf=80, bootstrap=False))
    for tau in (0.0, 0.1, 0.5, 0.9, 1.0):
        expected = y.min() if tau == 0 else empirical_quantile(y, tau)
        assert forest_quantile(f, X[:3], tau) == pytest.approx([expected] * 3, abs=0)


def test_forest_matches_brute_force_weights():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(120, 3))
    y = X[:, 0] + rng.normal(size=120)
    f = fit_quantile_forest(X, y, ForestConfig(n_trees=7, min_leaf=5, seed=9))
    Xq = rng.normal(size=(6, 3))
    W = oracle_weights(f, Xq)
    order = np.argsort(y)
    for tau in (0.1, 0.5, 0.9):
        cum = np.cumsum(W[:, order], axis=1)
        expected = y[order][np.argmax(cum >= tau - 1e-12, axis=1)]
        assert forest_quantile(f, Xq, tau) == pytest.approx(expected, abs=0)


def test_constant_response_is_predicted_exactly():
    rng = np.random.default_rng(6)
    f = fit_quantile_forest(rng.normal(size=(60, 2)), np.full(60, 3.25), ForestConfig(n_trees=5))
    assert np.all(forest_quantile(f, rng.normal(size=(4, 2)), 0.9) == 3.25)


def test_step_function_is_resolved():
    rng = np.random.default_rng(7)
    x = rng.uniform(-1, 1, 600)
    y = (x > 0) * 10.0 + rng.uniform(0, 1, 600)
    f = fit_quantile_forest(x[:, None], y, ForestConfig(n_trees=50, seed=1))
    q = forest_quantile(f, np.array([[-0.5], [0.5]]), 0.5)
    assert q[0] == pytest.approx(0.5, abs=0.15) and q[1] == pytest.approx(10.5, abs=0.15)


def test_forest_is_deterministic_given_seed():
    rng = np.random.default_rng(8)
    X = rng.normal(size=(100, 2))
    y = rng.normal(size=100)
    a = fit_quantile_forest(X, y, ForestConfig(n_trees=20, seed=4))
    b = fit_quantile_forest(X, y, ForestConfig(n_trees=20, seed=4))
    assert np.array_equal(forest_quantile(a, X, 0.9), forest_quantile(b, X, 0.9))
    assert np.array_equal(a.inbag, b.inbag)


@given(seed=st.integers(0, 500))
def test_quantiles_are_monotone_in_tau(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(60, 2))
    f = fit_quantile_forest(X, rng.normal(size=60), ForestConfig(n_trees=5, seed=seed))
    q = forest_quantile(f, X[:10], np.linspace(0, 1, 11))
    assert np.all(np.diff(q, axis=1) >= 0)
    assert np.all(q[:, 0] >= f.y.min()) and np.all(q[:, -1] <= f.y.max())


def test_oob_coverage_near_nominal():
    rng = np.random.default_rng(9)
    X = rng.normal(size=(1500, 3))
    y = X[:, 0] + rng.normal(size=1500)
    f = fit_quantile_forest(X, y, ForestConfig(n_trees=200, seed=2))
    q = forest_quantile(f, tau=0.9, mode="oob")
    assert abs(np.mean(y > q) - 0.1) <= 3 * np.sqrt(0.09 / 1500) + 0.01


def test_oob_undefined_without_bootstrap():
    rng = np.random.default_rng(10)
    f = fit_quantile_forest(rng.normal(size=(60, 1)), rng.normal(size=60),
                            ForestConfig(n_trees=3, bootstrap=False))
    with pytest.raises(OobUndefinedError):
        forest_quantile(f, tau=0.5, mode="oob")


def test_input_validation():
    with pytest.raises(ValueError):
        fit_quantile_forest(np.zeros((10, 1)), np.zeros(10))
    rng = np.random.default_rng(0)
    f = fit_quantile_forest(rng.normal(size=(60, 1)), rng.normal(size=60), ForestConfig(n_trees=2))
    with pytest.raises(ValueError):
        forest_quantile(f, rng.normal(size=(2, 1)), 1.5)
    with pytest.raises(ValueError):
        forest_quantile(f, tau=0.5)


def test_persistence_roundtrip(tmp_path):
    rng = np.random.default_rng(11)
    X = rng.normal(size=(90, 2))
    f = fit_quantile_forest(X, rng.normal(size=90), ForestConfig(n_trees=40, seed=3))
    path = tmp_path / "f.forest"
    f.to_files(path)
    g = QuantileForest.from_files(path)
    Xq = rng.normal(size=(10, 2))
    assert np.array_equal(forest_quantile(f, Xq, [0.1, 0.9]), forest_quantile(g, Xq, [0.1, 0.9]))
    assert np.array_equal(forest_quantile(f, tau=0.5, mode="oob"), forest_quantile(g, tau=0.5, mode="oob"))
    g.to_files(tmp_path / "g.forest")
    assert (tmp_path / "g.forest").read_bytes() == path.read_bytes()


def test_objective_not_worse_than_least_squares():
    rng = np.random.default_rng(12)
    X = rng.normal(size=(80, 2))
    y = X @ [1.0, 2.0] + rng.standard_cauchy(80)
    m = fit_linear_qr(X, y, 0.75)
    Z = np.column_stack([np.ones(80), X])
    ls = np.linalg.lstsq(Z, y, rcond=None)[0]
    assert pinball_loss(y - m.predict(X), 0.75) <= pinball_loss(y - Z @ ls, 0.75)


@pytest.mark.slow
def test_scenario1_oob_coverage_full_size():
    from extremeqr.margins_eval import make_windows
    from extremeqr.scenario_sim import simulate_scenario1

    ds = simulate_scenario1(7000, seed=21)
    w = make_windows(ds, s=10)
    X = w.features.reshape(len(w), -1)
    y = ds.y[w.target]
    f = fit_quantile_forest(X, y, ForestConfig(n_trees=1000, seed=0))
    assert f.oob_mask().any(axis=1).mean() >= 0.99
    q = forest_quantile(f, tau=[0.9, 0.95], mode="oob")
    for j, tau0 in enumerate((0.9, 0.95)):
        assert abs(np.mean(y <= q[:, j]) - tau0) <= 0.03
