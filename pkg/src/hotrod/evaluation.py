"""Random forest, macro-F1 and nested cross-validated grid search."""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np
from sklearn import config_context
from sklearn.model_selection import StratifiedKFold
from sklearn.tree import DecisionTreeClassifier

N_ESTIMATORS = (10, 20, 30)
CRITERIA = ("gini", "entropy")
MAX_DEPTHS = (4, 5, 6)
MIN_SAMPLES_SPLITS = (2, 3, 5)
MIN_CV_SAMPLES = 10


@dataclass(frozen=True)
class RfConfig:
    n_estimators: int = 10
    criterion: str = "gini"
    max_depth: int = 4
    min_samples_split: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.criterion not in CRITERIA:
            raise ValueError(f"criterion must be one of {CRITERIA}")
        if self.n_estimators < 1 or self.max_depth < 1 or self.min_samples_split < 2:
            raise ValueError("need n_estimators >= 1, max_depth >= 1, min_samples_split >= 2")

    def in_grid(self) -> bool:
        return (self.n_estimators in N_ESTIMATORS and self.max_depth in MAX_DEPTHS
                and self.min_samples_split in MIN_SAMPLES_SPLITS)

    def to_dict(self) -> dict:
        return asdict(self)


def default_grid(seed: int = 0) -> list[RfConfig]:
    """All 3 x 2 x 3 x 3 = 54 hyperparameter combinations."""
    return [RfConfig(n, c, d, s, seed)
            for n, c, d, s in itertools.product(N_ESTIMATORS, CRITERIA, MAX_DEPTHS,
                                                MIN_SAMPLES_SPLITS)]


def tree_seed(seed: int, index: int) -> int:
    """Per-tree RNG stream; depends only on (seed, index), never on scheduling."""
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1)[0])


class RandomForest:
    """Bagged CART trees, each splitting over sqrt(n_features) random candidates."""

    def __init__(self, cfg: RfConfig):
        self.cfg = cfg
        self.trees: list[DecisionTreeClassifier] = []
        self.classes_ = np.zeros(0)

    def fit(self, X, y) -> "RandomForest":
        X = np.asarray(X, dtype=float)
        y = np.asarray(y)
        self.classes_, codes = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("need at least two classes")
        if np.bincount(codes).min() < 2:
            raise ValueError("need at least 2 samples per class")
        if not np.all(np.isfinite(X)):
            raise ValueError("features must be finite")
        self.trees = []
        # inputs are validated once above; per-tree sklearn checks dominate small fits
        with config_context(assume_finite=True, skip_parameter_validation=True):
            self._grow(X, codes)
        return self

    def _grow(self, X, codes):
        n = len(X)
        for i in range(self.cfg.n_estimators):
            s = tree_seed(self.cfg.seed, i)
            boot = np.random.default_rng(s).integers(0, n, size=n)
            tree = DecisionTreeClassifier(criterion=self.cfg.criterion,
                                          max_depth=self.cfg.max_depth,
                                          min_samples_split=self.cfg.min_samples_split,
                                          max_features="sqrt", random_state=s % 2**31)
            tree.fit(X[boot], codes[boot])
            self.trees.append(tree)

    def per_tree_proba(self, X, n_trees: int | None = None) -> np.ndarray:
        """Class probabilities of each of the first ``n_trees`` trees, (trees, n, classes)."""
        X = np.asarray(X, dtype=float)
        trees = self.trees[:n_trees]
        out = np.zeros((len(trees), len(X), len(self.classes_)))
        with config_context(assume_finite=True, skip_parameter_validation=True):
            for t, tree in enumerate(trees):
                # a bootstrap can miss a class entirely
                out[t][:, tree.classes_] = tree.predict_proba(X)
        return out

    def tree_proba(self, X, n_trees: int | None = None) -> np.ndarray:
        """Summed class probabilities of the first ``n_trees`` trees."""
        return self.per_tree_proba(X, n_trees).sum(axis=0)

    def predict_proba(self, X, n_trees: int | None = None) -> np.ndarray:
        p = self.tree_proba(X, n_trees)
        return p / p.sum(axis=1, keepdims=True)

    def predict(self, X, n_trees: int | None = None) -> np.ndarray:
        # argmax picks the lower class on ties
        return self.classes_[np.argmax(self.tree_proba(X, n_trees), axis=1)]


def rf_train(X, y, cfg: RfConfig = RfConfig()) -> RandomForest:
    return RandomForest(cfg).fit(X, y)


def macro_f1(y_true, y_pred, labels: Sequence | None = None) -> float:
    """Unweighted mean of per-class F1; a class never predicted nor present scores 0."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if len(y_true) == 0:
        raise ValueError("empty input")
    if y_true.shape != y_pred.shape:
        raise ValueError("y_true and y_pred lengths differ")
    if labels is None:
        labels = np.union1d(np.union1d(y_true, y_pred), [0, 1])
    scores = []
    for c in labels:
        tp = np.count_nonzero((y_pred == c) & (y_true == c))
        fp = np.count_nonzero((y_pred == c) & (y_true != c))
        fn = np.count_nonzero((y_pred != c) & (y_true == c))
        denom = 2 * tp + fp + fn
        scores.append(2 * tp / denom if denom else 0.0)
    return float(np.mean(scores))


@dataclass
class CvReport:
    feature_set: str
    fold_f1: list[float]
    best_configs: list[RfConfig]
    inner_f1: list[float] = field(default_factory=list)
    test_indices: list[list[int]] = field(default_factory=list)

    @property
    def mean_f1(self) -> float:
        return float(np.mean(self.fold_f1))

    def to_dict(self) -> dict:
        return {
            "feature_set": self.feature_set,
            "fold_f1": list(self.fold_f1),
            "mean_f1": self.mean_f1,
            "best_configs": [c.to_dict() for c in self.best_configs],
            "inner_f1": list(self.inner_f1),
        }


def _check_folds(y, splits):
    for tr, te in splits:
        if len(np.unique(y[te])) < 2 or np.bincount(y[tr]).min() < 2:
            raise ValueError("stratification failed: a fold holds fewer than two classes")


def _grid_scores(X, y, grid: Sequence[RfConfig], splits) -> np.ndarray:
    """Mean macro-F1 of every config over ``splits``.

    Configs that differ only in n_estimators share one forest: trees are
    seeded by index, so a 10-tree forest is the first 10 trees of a 30-tree one.
    """
    scores = np.zeros(len(grid))
    groups: dict[tuple, list[int]] = {}
    for i, c in enumerate(grid):
        groups.setdefault((c.criterion, c.max_depth, c.min_samples_split, c.seed), []).append(i)
    for members in groups.values():
        biggest = max(members, key=lambda i: grid[i].n_estimators)
        for tr, te in splits:
            forest = rf_train(X[tr], y[tr], grid[biggest])
            votes = np.cumsum(forest.per_tree_proba(X[te]), axis=0)
            for i in members:
                pred = forest.classes_[np.argmax(votes[grid[i].n_estimators - 1], axis=1)]
                scores[i] += macro_f1(y[te], pred, labels=[0, 1])
    return scores / len(splits)


def cross_validate(X, y, grid: Sequence[RfConfig] | None = None, seed: int = 0,
                   feature_set: str = "", n_splits: int = 5,
                   inner_splits: int = 3) -> CvReport:
    """Stratified outer CV; the config for each outer fold is chosen by inner CV on its training part."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=np.int64)
    if len(X) < MIN_CV_SAMPLES:
        raise ValueError(f"insufficient samples: {len(X)} < {MIN_CV_SAMPLES}")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be binary 0/1")
    grid = list(default_grid(seed) if grid is None else grid)
    if not grid:
        raise ValueError("empty grid")
    outer = list(StratifiedKFold(n_splits, shuffle=True, random_state=seed).split(X, y))
    _check_folds(y, outer)
    report = CvReport(feature_set, [], [])
    for tr, te in outer:
        inner = [(tr[a], tr[b]) for a, b in
                 StratifiedKFold(inner_splits, shuffle=True, random_state=seed).split(X[tr], y[tr])]
        _check_folds(y, inner)
        scores = _grid_scores(X, y, grid, inner)
        best = int(np.argmax(scores))  # first config in grid order on ties
        forest = rf_train(X[tr], y[tr], grid[best])
        report.fold_f1.append(macro_f1(y[te], forest.predict(X[te]), labels=[0, 1]))
        report.best_configs.append(grid[best])
        report.inner_f1.append(float(scores[best]))
        report.test_indices.append(te.tolist())
    return report


def with_seed(grid: Sequence[RfConfig], seed: int) -> list[RfConfig]:
    return [replace(c, seed=seed) for c in grid]
