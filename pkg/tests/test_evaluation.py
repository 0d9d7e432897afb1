import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.metrics import f1_score

from hotrod.evaluation import (
    RfConfig,
    cross_validate,
    default_grid,
    macro_f1,
    rf_train,
)


def blobs(n=200, sep=6.0, seed=0, d=2):
    rng = np.random.default_rng(seed)
    y = np.r_[np.zeros(n // 2, int), np.ones(n - n // 2, int)]
    X = rng.normal(size=(n, d))
    X[:, 0] += sep * y
    return X, y


# ---- macro-F1 ----------------------------------------------------------------

def test_macro_f1_examples():
    assert macro_f1([0, 1, 0, 1], [0, 1, 0, 1]) == 1.0
    assert macro_f1([0, 1, 0, 1], [1, 1, 1, 1]) == pytest.approx(1 / 3, abs=1e-15)
    assert macro_f1([0, 1, 1, 0], [0, 1, 0, 0]) == pytest.approx((2 / 3 + 4 / 5) / 2, abs=1e-15)


def test_macro_f1_empty():
    with pytest.raises(ValueError):
        macro_f1([], [])


@settings(max_examples=60)
@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)), min_size=1, max_size=40))
def test_macro_f1_matches_sklearn_and_is_symmetric(pairs):
    t, p = map(np.array, zip(*pairs))
    ours = macro_f1(t, p)
    ref = f1_score(t, p, average="macro", labels=[0, 1], zero_division=0)
    assert ours == pytest.approx(ref, abs=1e-12)
    assert macro_f1(1 - t, 1 - p) == pytest.approx(ours, abs=1e-12)
    assert 0 <= ours <= 1


# ---- forest ------------------------------------------------------------------

def test_grid_size():
    grid = default_grid()
    assert len(grid) == 54 and all(c.in_grid() for c in grid)
    assert len({(c.n_estimators, c.criterion, c.max_depth, c.min_samples_split)
                for c in grid}) == 54


def test_separable_training_accuracy():
    X, y = blobs()
    forest = rf_train(X, y, RfConfig(n_estimators=10, seed=1))
    assert np.mean(forest.predict(X) == y) >= 0.99


def test_stump_has_two_leaves():
    X, y = blobs(seed=2)
    forest = rf_train(X, y, RfConfig(n_estimators=1, max_depth=1))
    grid = np.random.default_rng(0).normal(scale=5, size=(500, 2))
    assert len(np.unique(forest.predict_proba(grid)[:, 1])) <= 2


def test_forest_deterministic():
    X, y = blobs(seed=3, sep=1.0)
    a = rf_train(X, y, RfConfig(n_estimators=20, seed=4)).predict_proba(X)
    b = rf_train(X, y, RfConfig(n_estimators=20, seed=4)).predict_proba(X)
    assert np.array_equal(a, b)


def test_forest_rejects_single_class():
    with pytest.raises(ValueError):
        rf_train(np.zeros((5, 2)), np.zeros(5, int))


def test_column_permutation_keeps_accuracy():
    X, y = blobs(seed=5, sep=4.0, d=4)
    perm = np.array([2, 0, 3, 1])
    acc = np.mean(rf_train(X, y, RfConfig(seed=0)).predict(X) == y)
    acc_p = np.mean(rf_train(X[:, perm], y, RfConfig(seed=0)).predict(X[:, perm]) == y)
    assert abs(acc - acc_p) <= 0.05


def test_rf_config_validation():
    with pytest.raises(ValueError):
        RfConfig(criterion="mse")
    assert not RfConfig(n_estimators=7).in_grid()


# ---- cross-validation --------------------------------------------------------

@pytest.fixture(scope="module")
def small_grid():
    return [RfConfig(n_estimators=n, max_depth=d) for n in (10, 20) for d in (4, 6)]


def test_cv_separable(small_grid):
    X, y = blobs(n=60, seed=6)
    rep = cross_validate(X, y, small_grid, seed=0)
    assert rep.mean_f1 >= 0.95 and len(rep.fold_f1) == 5


def test_cv_folds_partition(small_grid):
    X, y = blobs(n=43, seed=7, sep=2.0)
    rep = cross_validate(X, y, small_grid, seed=1)
    idx = np.concatenate(rep.test_indices)
    assert sorted(idx.tolist()) == list(range(43))


def test_cv_deterministic(small_grid):
    X, y = blobs(n=40, seed=8, sep=1.0)
    a = cross_validate(X, y, small_grid, seed=2).to_dict()
    b = cross_validate(X, y, small_grid, seed=2).to_dict()
    assert a == b


def test_cv_insufficient_samples():
    with pytest.raises(ValueError, match="insufficient samples"):
        cross_validate(np.zeros((9, 2)), np.r_[np.zeros(5), np.ones(4)].astype(int))


@pytest.mark.filterwarnings("ignore:The least populated class")
def test_cv_stratification_failure(small_grid):
    y = np.r_[np.zeros(20), np.ones(3)].astype(int)
    with pytest.raises(ValueError, match="stratification failed"):
        cross_validate(np.random.default_rng(0).normal(size=(23, 2)), y, small_grid)
