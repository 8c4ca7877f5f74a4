"""Probabilistic tree-ensemble classifiers: Random Forest and GBDT.

Both are self-contained and deterministic: the ensemble seed spawns one
child seed per tree index, so tree training is order-independent and may
run on several threads with an identical result.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import _tree
from .data import Dataset

RANDOM_FOREST = "random_forest"
GBDT = "gbdt"

_GBDT_LAM = 1e-16  # hessian-sum guard for saturated leaves


class LearnerError(ValueError):
    """Raised for invalid ensemble parameters or unusable training data."""


@dataclass(frozen=True)
class TreeParams:
    max_depth: int = 16
    min_samples_leaf: int = 1
    feature_subsample: str | int = "all"  # "all" | "sqrt" | fixed count
    split_criterion: str = "gini"  # "gini" | "logloss"

    def __post_init__(self) -> None:
        if self.max_depth < 1:
            raise LearnerError("max_depth must be >= 1")
        if self.min_samples_leaf < 1:
            raise LearnerError("min_samples_leaf must be >= 1")
        if isinstance(self.feature_subsample, str):
            if self.feature_subsample not in ("all", "sqrt"):
                raise LearnerError(
                    f"feature_subsample must be 'all', 'sqrt' or a count, "
                    f"got {self.feature_subsample!r}")
        elif self.feature_subsample < 1:
            raise LearnerError("feature_subsample count must be >= 1")
        if self.split_criterion not in ("gini", "logloss"):
            raise LearnerError(f"unknown split criterion {self.split_criterion!r}")

    def resolve_mtry(self, d: int) -> int:
        if self.feature_subsample == "all":
            return d
        if self.feature_subsample == "sqrt":
            return max(1, int(np.sqrt(d)))
        return min(int(self.feature_subsample), d)


@dataclass(frozen=True)
class EnsembleParams:
    kind: str
    n_trees: int = 100
    tree: TreeParams = field(default_factory=TreeParams)
    learning_rate: float = 0.1  # gbdt only
    bootstrap: bool = True  # random forest only
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in (RANDOM_FOREST, GBDT):
            raise LearnerError(f"unknown ensemble kind {self.kind!r}")
        if self.n_trees < 1:
            raise LearnerError("n_trees must be >= 1")
        if self.kind == GBDT and not 0.0 < self.learning_rate <= 1.0:
            raise LearnerError("learning_rate must be in (0, 1] for gbdt")


def random_forest_params(n_trees: int = 100, max_depth: int = 16,
                         min_samples_leaf: int = 1,
                         feature_subsample: str | int = "sqrt",
                         bootstrap: bool = True, seed: int = 0) -> EnsembleParams:
    """Random-forest defaults: bagged Gini trees with sqrt feature subsampling."""
    tree = TreeParams(max_depth=max_depth, min_samples_leaf=min_samples_leaf,
                      feature_subsample=feature_subsample, split_criterion="gini")
    return EnsembleParams(kind=RANDOM_FOREST, n_trees=n_trees, tree=tree,
                          bootstrap=bootstrap, seed=seed)


def gbdt_params(n_trees: int = 100, learning_rate: float = 0.1,
                max_depth: int = 3, min_samples_leaf: int = 1,
                feature_subsample: str | int = "all",
                seed: int = 0) -> EnsembleParams:
    """GBDT defaults: stagewise depth-3 trees on logistic loss, all features."""
    tree = TreeParams(max_depth=max_depth, min_samples_leaf=min_samples_leaf,
                      feature_subsample=feature_subsample,
                      split_criterion="logloss")
    return EnsembleParams(kind=GBDT, n_trees=n_trees,
                          learning_rate=learning_rate, seed=seed)


@dataclass
class Tree:
    """Flat node arrays; ``feature[i] == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)


@dataclass
class TrainedModel:
    kind: str
    trees: list[Tree]
    n_features: int
    n_rows: int
    seed: int
    learning_rate: float = 1.0
    base_score: float = 0.0  # gbdt log-odds offset
    train_losses: list[float] = field(default_factory=list)  # gbdt, per stage

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return predict_proba(self, X)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return np.exp(-np.logaddexp(0.0, -z))


def _logistic_loss(F: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(np.logaddexp(0.0, F) - y * F))


def _n_workers(n_tasks: int) -> int:
    return max(1, min(n_tasks, os.cpu_count() or 1))


def fit(params: EnsembleParams, train: Dataset) -> TrainedModel:
    """Train an ensemble. Deterministic under (params, train)."""
    n = train.n_rows
    if n == 0:
        raise LearnerError("training set is empty")
    X = np.ascontiguousarray(train.X)
    y = train.y.astype(np.float64)
    d = train.n_features
    mtry = params.tree.resolve_mtry(d)
    tree_seeds = _tree_seed_pairs(params.seed, params.n_trees)

    if params.kind == RANDOM_FOREST:
        return _fit_forest(params, X, y, mtry, tree_seeds)
    return _fit_gbdt(params, X, y, mtry, tree_seeds)


def _tree_seed_pairs(seed: int, n_trees: int) -> np.ndarray:
    # one (bootstrap, growth) seed pair per tree index
    return np.random.SeedSequence(int(seed)).generate_state(
        2 * n_trees, np.uint64).reshape(n_trees, 2)


def _fit_forest(params: EnsembleParams, X: np.ndarray, y: np.ndarray,
                mtry: int, tree_seeds: np.ndarray) -> TrainedModel:
    n = X.shape[0]
    ones = np.ones(n)
    tp = params.tree

    def build(i: int) -> Tree:
        boot_seed, grow_seed = tree_seeds[i]
        if params.bootstrap:
            rows = _tree.bootstrap_rows(n, boot_seed)
        else:
            rows = np.arange(n)
        parts = _tree.build_tree(X, y, ones, rows, tp.max_depth,
                                 tp.min_samples_leaf, mtry, 0.0, grow_seed)
        return Tree(*parts[:5])

    if params.n_trees > 1 and _n_workers(params.n_trees) > 1:
        with ThreadPoolExecutor(_n_workers(params.n_trees)) as pool:
            trees = list(pool.map(build, range(params.n_trees)))
    else:
        trees = [build(i) for i in range(params.n_trees)]
    return TrainedModel(kind=RANDOM_FOREST, trees=trees, n_features=X.shape[1],
                        n_rows=n, seed=params.seed)


def _fit_gbdt(params: EnsembleParams, X: np.ndarray, y: np.ndarray,
              mtry: int, tree_seeds: np.ndarray) -> TrainedModel:
    n = X.shape[0]
    p_bar = float(y.mean())
    if p_bar in (0.0, 1.0):
        raise LearnerError("gbdt needs both classes in the training data")
    base = float(np.log(p_bar / (1.0 - p_bar)))
    F = np.full(n, base)
    rows = np.arange(n)
    tp = params.tree
    trees: list[Tree] = []
    losses = [_logistic_loss(F, y)]
    for i in range(params.n_trees):
        p = _sigmoid(F)
        grad = y - p
        hess = p * (1.0 - p)
        parts = _tree.build_tree(X, grad, hess, rows, tp.max_depth,
                                 tp.min_samples_leaf, mtry, _GBDT_LAM,
                                 tree_seeds[i, 1])
        tree = Tree(*parts[:5])
        leaf_of = parts[5]
        F += params.learning_rate * tree.value[leaf_of]
        trees.append(tree)
        losses.append(_logistic_loss(F, y))
    return TrainedModel(kind=GBDT, trees=trees, n_features=X.shape[1], n_rows=n,
                        seed=params.seed, learning_rate=params.learning_rate,
                        base_score=base, train_losses=losses)


def predict_proba(model: TrainedModel, X: np.ndarray) -> np.ndarray:
    """Per-row positive-class scores in [0, 1]."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise LearnerError(
            f"feature matrix has arity {X.shape[1] if X.ndim == 2 else '?'}, "
            f"model was trained on {model.n_features}")
    acc = np.zeros(X.shape[0])
    for tree in model.trees:
        _tree.accumulate_tree(X, tree.feature, tree.threshold, tree.left,
                              tree.right, tree.value, acc)
    if model.kind == RANDOM_FOREST:
        return acc / len(model.trees)
    return _sigmoid(model.base_score + model.learning_rate * acc)


def dump_model(model: TrainedModel) -> str:
    """Debug dump of the fitted trees as JSON (not a stable format)."""
    payload = {
        "kind": model.kind,
        "n_features": model.n_features,
        "n_rows": model.n_rows,
        "seed": model.seed,
        "learning_rate": model.learning_rate,
        "base_score": model.base_score,
        "trees": [
            {
                "feature": t.feature.tolist(),
                "threshold": t.threshold.tolist(),
                "left": t.left.tolist(),
                "right": t.right.tolist(),
                "value": t.value.tolist(),
            }
            for t in model.trees
        ],
    }
    return json.dumps(payload, indent=2, sort_keys=True)
