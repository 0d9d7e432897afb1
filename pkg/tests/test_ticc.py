import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linear_sum_assignment
from scipy.stats import multivariate_normal

from conftest import series_from
from hotrod.synthetic import block_toeplitz, random_toeplitz_precision, two_regime_series
from hotrod.ticc import (
    AdmmConvergenceError,
    ClusterModel,
    StackedWindows,
    TiccConfig,
    assign_dp,
    fit_toeplitz_glasso,
    gaussian_ll,
    is_block_toeplitz,
    path_objective,
    stack_windows,
    switch_count,
    ticc_fit,
)


def aligned_accuracy(pred, truth, K):
    conf = np.zeros((K, K))
    np.add.at(conf, (pred, truth), 1)
    r, c = linear_sum_assignment(-conf)
    return conf[r, c].sum() / len(pred)


def brute_force(ll, beta):
    T, K = ll.shape
    best = np.inf
    for seq in itertools.product(range(K), repeat=T):
        seq = np.array(seq)
        cost = -ll[np.arange(T), seq].sum() + beta * np.count_nonzero(np.diff(seq))
        best = min(best, cost)
    return best


def iid_windows(theta, n, m, w, seed):
    rng = np.random.default_rng(seed)
    X = rng.multivariate_normal(np.zeros(len(theta)), np.linalg.inv(theta), size=n)
    return StackedWindows(X, np.arange(n), m, w)


def blocks_equal(theta, m, w):
    for r in range(w):
        for c in range(w):
            ref = theta[0:m, (c - r) * m:(c - r + 1) * m] if c >= r else \
                theta[(r - c) * m:(r - c + 1) * m, 0:m]
            if not np.array_equal(theta[r * m:(r + 1) * m, c * m:(c + 1) * m], ref):
                return False
    return True


# ---- windows -----------------------------------------------------------------

def test_window_count_no_gaps():
    sw = stack_windows(series_from(np.arange(5.0)), 2)
    assert len(sw) == 4 and sw.X.shape == (4, 2)


def test_windows_skip_sentinel():
    mask = np.ones(5, bool)
    mask[2] = False
    sw = stack_windows(series_from(np.arange(5.0), mask), 2)
    assert sw.origins.tolist() == [0, 3]


def test_w1_windows_are_rows():
    vals = np.arange(12.0).reshape(6, 2)
    sw = stack_windows(series_from(vals, channels=("hr", "steps")), 1)
    assert np.array_equal(sw.X, vals)


def test_window_layout_is_time_major():
    vals = np.arange(8.0).reshape(4, 2)
    sw = stack_windows(series_from(vals, channels=("hr", "steps")), 2)
    assert sw.X[1].tolist() == [2, 3, 4, 5]


def test_no_valid_windows():
    with pytest.raises(ValueError, match="no valid windows"):
        stack_windows(series_from(np.arange(4.0), np.array([1, 0, 1, 0], bool)), 2)


# ---- log-likelihood ----------------------------------------------------------

def test_ll_standard_bivariate_at_mean():
    mdl = ClusterModel(np.eye(2), np.zeros(2), 2, 1)
    assert gaussian_ll(np.zeros(2), mdl) == pytest.approx(-np.log(2 * np.pi), abs=1e-12)


def test_ll_scalar_closed_form():
    mdl = ClusterModel(np.array([[2.0]]), np.zeros(1), 1, 1)
    expected = -1 + 0.5 * np.log(2) - 0.5 * np.log(2 * np.pi)
    assert gaussian_ll(np.array([1.0]), mdl) == pytest.approx(expected, abs=1e-12)


def test_ll_matches_scipy_density():
    rng = np.random.default_rng(0)
    theta = random_toeplitz_precision(2, 2, rng)
    mu = rng.normal(size=4)
    X = rng.normal(size=(10, 4))
    mdl = ClusterModel(theta, mu, 2, 2)
    ref = multivariate_normal(mu, np.linalg.inv(theta)).logpdf(X)
    assert np.allclose(gaussian_ll(X, mdl), ref, atol=1e-10)


def test_ll_rejects_non_pd():
    with pytest.raises(ValueError):
        gaussian_ll(np.zeros(2), ClusterModel(np.diag([1.0, -1.0]), np.zeros(2), 2, 1))


# ---- dynamic programming -----------------------------------------------------

def test_dp_beta0_is_argmax():
    ll = np.random.default_rng(1).normal(size=(30, 4))
    assert np.array_equal(assign_dp(ll, 0.0).labels, ll.argmax(axis=1))


def test_dp_matches_brute_force():
    ll = np.random.default_rng(2).normal(size=(8, 3))
    a = assign_dp(ll, 1.0)
    assert a.objective == pytest.approx(brute_force(ll, 1.0), abs=1e-10)
    assert a.objective == pytest.approx(path_objective(ll, a.labels, 1.0), abs=1e-10)


def test_dp_huge_beta_constant():
    ll = np.random.default_rng(3).normal(size=(12, 3))
    a = assign_dp(ll, 1e6)
    assert np.all(a.labels == ll.sum(axis=0).argmax())


def test_dp_ties_go_low():
    assert assign_dp(np.zeros((5, 3)), 1.0).labels.tolist() == [0] * 5


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(1, 3), st.floats(0, 5), st.integers(0, 10_000))
def test_dp_optimal_and_bounded(T, K, beta, seed):
    ll = np.random.default_rng(seed).normal(size=(T, K))
    a = assign_dp(ll, beta)
    assert a.objective <= brute_force(ll, beta) + 1e-9
    pointwise = path_objective(ll, ll.argmax(axis=1), 0.0)
    assert a.objective <= pointwise + beta * T + 1e-9


# ---- graphical lasso ---------------------------------------------------------

def test_glasso_recovers_precision():
    theta = block_toeplitz([np.array([[1.0, 0.3], [0.3, 1.0]]),
                            np.array([[0.2, 0.0], [-0.25, 0.1]])])
    assert np.linalg.eigvalsh(theta).min() > 0
    mdl = fit_toeplitz_glasso(iid_windows(theta, 5000, 2, 2, 0), lam=0.11)
    rel = np.linalg.norm(mdl.theta - theta) / np.linalg.norm(theta)
    assert rel <= 0.15


def test_glasso_large_lambda_diagonal():
    theta = random_toeplitz_precision(2, 3, np.random.default_rng(4))
    mdl = fit_toeplitz_glasso(iid_windows(theta, 500, 2, 3, 1), lam=1e3)
    off = mdl.theta - np.diag(np.diag(mdl.theta))
    assert np.max(np.abs(off)) <= 1e-4


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 3), st.integers(1, 4), st.floats(0, 0.5), st.integers(0, 10_000))
def test_glasso_output_invariants(m, w, lam, seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(40, m * w))
    mdl = fit_toeplitz_glasso(StackedWindows(X, np.arange(40), m, w), lam=lam)
    assert np.array_equal(mdl.theta, mdl.theta.T)
    np.linalg.cholesky(mdl.theta)
    assert blocks_equal(mdl.theta, m, w) and is_block_toeplitz(mdl.theta, m, w)
    assert np.allclose(mdl.mu, X.mean(axis=0))


def test_glasso_needs_two_windows():
    with pytest.raises(ValueError):
        fit_toeplitz_glasso(StackedWindows(np.zeros((1, 2)), np.arange(1), 2, 1))


def test_glasso_nonconvergence_reports_residuals():
    theta = random_toeplitz_precision(2, 2, np.random.default_rng(5))
    with pytest.raises(AdmmConvergenceError) as info:
        fit_toeplitz_glasso(iid_windows(theta, 200, 2, 2, 2), lam=0.11, max_iter=1)
    assert info.value.primal > 0 and info.value.n_iter == 1


def test_is_block_toeplitz_detects_break():
    t = random_toeplitz_precision(2, 3, np.random.default_rng(6))
    assert is_block_toeplitz(t, 2, 3)
    t[0, 2] += 0.1
    t[2, 0] += 0.1
    assert not is_block_toeplitz(t, 2, 3)


# ---- full clustering ---------------------------------------------------------

def test_ticc_recovers_precision_only_regimes():
    x, truth = two_regime_series(T=2000, seed=1, shift=0.0)
    res = ticc_fit([series_from(x, channels=("hr", "steps"))],
                   TiccConfig(K=2, w=5, beta=10.0, lam=0.01, seed=0))
    lab = res.minute_labels([series_from(x, channels=("hr", "steps"))])[0]
    keep = lab != res.missing_label
    assert aligned_accuracy(lab[keep], truth[keep], 2) >= 0.9


def test_ticc_single_cluster():
    x, _ = two_regime_series(T=300, seed=2)
    s = series_from(x, channels=("hr", "steps"))
    res = ticc_fit([s], TiccConfig(K=1))
    lab = res.minute_labels([s])[0]
    assert set(lab[:-4].tolist()) == {0} and np.all(lab[-4:] == 1)


def test_ticc_missing_minutes_get_reserved_label():
    x, _ = two_regime_series(T=600, seed=3)
    mask = np.ones_like(x, dtype=bool)
    mask[300:330] = False
    s = series_from(np.where(mask, x, -10.0), mask, channels=("hr", "steps"))
    res = ticc_fit([s], TiccConfig(K=2))
    lab = res.minute_labels([s])[0]
    assert np.all(lab[296:330] == 2)
    assert len(res.models) == 2


@pytest.fixture(scope="module")
def two_regime_day():
    x, truth = two_regime_series(T=1200, seed=4)
    return series_from(x, channels=("hr", "steps")), truth


def test_ticc_switches_non_increasing_in_beta(two_regime_day):
    s, _ = two_regime_day
    counts = [switch_count(ticc_fit([s], TiccConfig(K=2, beta=b)).assignments[0].labels)
              for b in (0.0, 1.0, 10.0, 100.0)]
    assert counts == sorted(counts, reverse=True)


def test_ticc_objective_trace_non_increasing(two_regime_day):
    s, _ = two_regime_day
    res = ticc_fit([s], TiccConfig(K=2, beta=10.0))
    assert not res.reseeds
    assert np.all(np.diff(res.objective_trace) <= 1e-8)


def test_ticc_seed_changes_labels_only_by_permutation(two_regime_day):
    s, _ = two_regime_day
    base = ticc_fit([s], TiccConfig(K=2, seed=0)).assignments[0].labels
    for seed in (1, 2, 3):
        other = ticc_fit([s], TiccConfig(K=2, seed=seed)).assignments[0].labels
        assert aligned_accuracy(other, base, 2) == 1.0


def test_ticc_models_are_valid(two_regime_day):
    s, _ = two_regime_day
    for mdl in ticc_fit([s], TiccConfig(K=2)).models:
        assert blocks_equal(mdl.theta, 2, 5)
        np.linalg.cholesky(mdl.theta)


def test_ticc_too_few_windows():
    with pytest.raises(ValueError):
        ticc_fit([series_from(np.random.default_rng(0).normal(size=(20, 2)),
                              channels=("hr", "steps"))], TiccConfig(K=3))


def test_config_validation():
    with pytest.raises(ValueError):
        TiccConfig(K=0)
    with pytest.raises(ValueError):
        TiccConfig(beta=-1)
