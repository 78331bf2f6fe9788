"""Downstream-task utility: an in-house random forest plus task metrics.

Trees use axis-aligned splits with Gini impurity (classification) or variance
(regression), midpoint thresholds, and deterministic tie-breaking by lowest
feature index then lowest threshold.  Determinism per seed is exact: each tree
draws its bootstrap sample and per-node feature subsets from its own spawned
generator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dataset import FeatureSet, TaskKind, split_train_valid
from enum import Enum


class MetricKind(Enum):
    F1_MACRO = "f1_macro"
    PRECISION_MACRO = "precision_macro"
    RECALL_MACRO = "recall_macro"
    ONE_MINUS_RAE = "one_minus_rae"
    ONE_MINUS_MAE = "one_minus_mae"
    ONE_MINUS_MSE = "one_minus_mse"
    ONE_MINUS_RMSE = "one_minus_rmse"

    @property
    def task(self) -> TaskKind:
        if self in (MetricKind.F1_MACRO, MetricKind.PRECISION_MACRO, MetricKind.RECALL_MACRO):
            return TaskKind.CLASSIFICATION
        return TaskKind.REGRESSION

    @staticmethod
    def parse(text: str) -> "MetricKind":
        for kind in MetricKind:
            if kind.value == text:
                return kind
        raise ValueError(f"unknown metric {text!r}")


def default_metric(task: TaskKind) -> MetricKind:
    return MetricKind.F1_MACRO if task is TaskKind.CLASSIFICATION else MetricKind.ONE_MINUS_RAE


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 10
    max_depth: int = 8
    min_leaf: int = 2
    seed: int = 0
    bootstrap: bool = True
    max_features: int | None = None  # None: ceil(sqrt(N)) clf / ceil(N/3) reg


@dataclass
class _Node:
    value: float = 0.0
    feature: int = -1
    threshold: float = 0.0
    left: "_Node | None" = None
    right: "_Node | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.left is None


@dataclass
class RandomForest:
    trees: list[_Node]
    task: TaskKind
    n_classes: int
    n_features: int
    importances_raw: np.ndarray
    cfg: ForestConfig


def _gini(counts: np.ndarray) -> float:
    n = counts.sum()
    if n == 0:
        return 0.0
    p = counts / n
    return float(1.0 - np.sum(p * p))


def _variance(y: np.ndarray) -> float:
    return float(np.var(y)) if y.size else 0.0


class _TreeBuilder:
    def __init__(self, x: np.ndarray, y: np.ndarray, task: TaskKind, n_classes: int,
                 cfg: ForestConfig, rng: np.random.Generator, importances: np.ndarray) -> None:
        self.x = x
        self.y = y
        self.task = task
        self.n_classes = n_classes
        self.cfg = cfg
        self.rng = rng
        self.importances = importances
        self.n_total = y.size
        n_feat = x.shape[1]
        if cfg.max_features is not None:
            self.m_feats = min(cfg.max_features, n_feat)
        elif task is TaskKind.CLASSIFICATION:
            self.m_feats = min(math.ceil(math.sqrt(n_feat)), n_feat)
        else:
            self.m_feats = min(math.ceil(n_feat / 3), n_feat)

    def build(self, rows: np.ndarray, depth: int) -> _Node:
        y_node = self.y[rows]
        node_imp = self._impurity(y_node)
        if depth >= self.cfg.max_depth or rows.size < 2 * self.cfg.min_leaf or node_imp == 0.0:
            return _Node(value=self._leaf_value(y_node))
        feats = np.sort(self.rng.choice(self.x.shape[1], size=self.m_feats, replace=False))
        best = self._best_split(rows, y_node, feats)
        if best is None:
            return _Node(value=self._leaf_value(y_node))
        feature, threshold, score = best
        mask = self.x[rows, feature] <= threshold
        left_rows = rows[mask]
        right_rows = rows[~mask]
        if left_rows.size < self.cfg.min_leaf or right_rows.size < self.cfg.min_leaf:
            return _Node(value=self._leaf_value(y_node))
        self.importances[feature] += (rows.size / self.n_total) * (node_imp - score)
        return _Node(
            value=self._leaf_value(y_node),
            feature=feature,
            threshold=threshold,
            left=self.build(left_rows, depth + 1),
            right=self.build(right_rows, depth + 1),
        )

    def _impurity(self, y_node: np.ndarray) -> float:
        if self.task is TaskKind.CLASSIFICATION:
            return _gini(np.bincount(y_node.astype(np.int64), minlength=self.n_classes))
        return _variance(y_node)

    def _leaf_value(self, y_node: np.ndarray) -> float:
        if self.task is TaskKind.CLASSIFICATION:
            return float(np.argmax(np.bincount(y_node.astype(np.int64),
                                               minlength=self.n_classes)))
        return float(np.mean(y_node))

    def _best_split(self, rows: np.ndarray, y_node: np.ndarray, feats: np.ndarray):
        """Scan candidate features in ascending index order; within a feature,
        thresholds ascend, and only a strictly better weighted impurity
        replaces the incumbent (ties keep the earlier candidate)."""
        n = rows.size
        min_leaf = self.cfg.min_leaf
        best = None
        for feature in feats:
            x = self.x[rows, feature]
            order = np.argsort(x, kind="stable")
            xs = x[order]
            ys = y_node[order]
            # split after position i puts i+1 rows left; both sides >= min_leaf
            lo, hi = min_leaf - 1, n - min_leaf - 1
            if hi < lo:
                continue
            valid = (xs[:-1] < xs[1:])[lo:hi + 1]
            if not valid.any():
                continue
            if self.task is TaskKind.CLASSIFICATION:
                onehot = ys[:, None] == np.arange(self.n_classes)[None, :]
                cum = np.cumsum(onehot, axis=0)[lo:hi + 1].astype(np.float64)
                n_left = np.arange(lo + 1, hi + 2, dtype=np.float64)
                n_right = n - n_left
                total = np.bincount(ys.astype(np.int64),
                                    minlength=self.n_classes).astype(np.float64)
                gini_l = 1.0 - np.sum((cum / n_left[:, None]) ** 2, axis=1)
                gini_r = 1.0 - np.sum(((total - cum) / n_right[:, None]) ** 2, axis=1)
                scores = (n_left * gini_l + n_right * gini_r) / n
            else:
                c1 = np.cumsum(ys)[lo:hi + 1]
                c2 = np.cumsum(ys * ys)[lo:hi + 1]
                s1 = float(np.sum(ys))
                s2 = float(np.sum(ys * ys))
                n_left = np.arange(lo + 1, hi + 2, dtype=np.float64)
                n_right = n - n_left
                sse_l = c2 - c1 * c1 / n_left
                sse_r = (s2 - c2) - (s1 - c1) ** 2 / n_right
                scores = (sse_l + sse_r) / n
            scores = np.where(valid, scores, np.inf)
            pos = int(np.argmin(scores))
            score = float(scores[pos])
            if not np.isfinite(score):
                continue
            if best is None or score < best[2]:
                i = lo + pos
                threshold = (xs[i] + xs[i + 1]) / 2.0
                best = (int(feature), float(threshold), score)
        return best


def fit_forest(train: FeatureSet, cfg: ForestConfig) -> RandomForest:
    """Bootstrap-sampled trees with per-node feature subsampling."""
    x = train.values
    task = train.target.kind
    if task is TaskKind.CLASSIFICATION:
        y = np.asarray(train.target.values, dtype=np.int64)
        n_classes = int(y.max()) + 1
        if np.unique(y).size < 2:
            raise ValueError("classification training target has a single class")
    else:
        y = np.asarray(train.target.values, dtype=np.float64)
        n_classes = 0
    m = x.shape[0]
    importances = np.zeros(x.shape[1], dtype=np.float64)
    trees = []
    for ss in np.random.SeedSequence(cfg.seed).spawn(cfg.n_trees):
        rng = np.random.default_rng(ss)
        rows = rng.integers(0, m, size=m) if cfg.bootstrap else np.arange(m)
        builder = _TreeBuilder(x, y, task, n_classes, cfg, rng, importances)
        builder.n_total = rows.size
        trees.append(builder.build(rows, depth=0))
    return RandomForest(trees, task, n_classes, x.shape[1], importances, cfg)


def _predict_tree(node: _Node, x: np.ndarray) -> np.ndarray:
    out = np.empty(x.shape[0], dtype=np.float64)
    stack = [(node, np.arange(x.shape[0]))]
    while stack:
        nd, idx = stack.pop()
        if nd.is_leaf:
            out[idx] = nd.value
            continue
        mask = x[idx, nd.feature] <= nd.threshold
        stack.append((nd.left, idx[mask]))
        stack.append((nd.right, idx[~mask]))
    return out


def predict(forest: RandomForest, x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != forest.n_features:
        raise ValueError(f"expected {forest.n_features} features, got {x.shape[1]}")
    per_tree = np.stack([_predict_tree(t, x) for t in forest.trees])
    if forest.task is TaskKind.CLASSIFICATION:
        votes = per_tree.astype(np.int64)
        out = np.empty(x.shape[0], dtype=np.int64)
        for i in range(x.shape[0]):
            out[i] = np.argmax(np.bincount(votes[:, i], minlength=forest.n_classes))
        return out
    return per_tree.mean(axis=0)


def feature_importances(forest: RandomForest) -> np.ndarray:
    """Impurity-decrease importances normalized to sum to 1 (uniform when all
    trees are stumps with no splits)."""
    total = forest.importances_raw.sum()
    if total <= 0.0:
        return np.full(forest.n_features, 1.0 / forest.n_features)
    return forest.importances_raw / total


def metric_only(
    y_true: np.ndarray,
    y_pred: np.ndarray,
    metric: MetricKind,
    train_mean: float | None = None,
) -> float:
    """Pure metric arithmetic, exposed for direct testing."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.shape != y_pred.shape or y_true.size < 1:
        raise ValueError("predictions must match the target length")
    if metric.task is TaskKind.REGRESSION:
        yt = y_true.astype(np.float64)
        yp = y_pred.astype(np.float64)
        err = np.abs(yt - yp)
        if metric is MetricKind.ONE_MINUS_MAE:
            return 1.0 - float(np.mean(err))
        if metric is MetricKind.ONE_MINUS_MSE:
            return 1.0 - float(np.mean(err * err))
        if metric is MetricKind.ONE_MINUS_RMSE:
            return 1.0 - math.sqrt(float(np.mean(err * err)))
        if train_mean is None:
            raise ValueError("one_minus_rae needs the training-target mean")
        denom = float(np.sum(np.abs(yt - train_mean)))
        num = float(np.sum(err))
        if denom == 0.0:
            return 1.0 if num == 0.0 else 0.0
        return 1.0 - num / denom
    labels = np.unique(np.concatenate([y_true, y_pred])).astype(np.int64)
    precisions, recalls, f1s = [], [], []
    for label in labels:
        tp = int(np.sum((y_pred == label) & (y_true == label)))
        fp = int(np.sum((y_pred == label) & (y_true != label)))
        fn = int(np.sum((y_pred != label) & (y_true == label)))
        p = tp / (tp + fp) if tp + fp > 0 else 0.0
        r = tp / (tp + fn) if tp + fn > 0 else 0.0
        f = 2 * p * r / (p + r) if p + r > 0 else 0.0
        precisions.append(p)
        recalls.append(r)
        f1s.append(f)
    if metric is MetricKind.PRECISION_MACRO:
        return float(np.mean(precisions))
    if metric is MetricKind.RECALL_MACRO:
        return float(np.mean(recalls))
    return float(np.mean(f1s))


def downstream_score(
    fs: FeatureSet,
    split_seed: int,
    metric: MetricKind,
    cfg: ForestConfig,
    ratio: float = 0.8,
) -> float:
    """Hold-out score: split, fit the forest on train, score validation."""
    if metric.task is not fs.target.kind:
        raise ValueError(f"metric {metric.value} incompatible with {fs.target.kind.value} target")
    train, valid = split_train_valid(fs, ratio, split_seed)
    forest = fit_forest(train, cfg)
    y_pred = predict(forest, valid.values)
    train_mean = float(np.mean(np.asarray(train.target.values, dtype=np.float64)))
    return metric_only(valid.target.values, y_pred, metric, train_mean=train_mean)
