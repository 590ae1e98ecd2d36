"""
CART decision trees and a bagged random forest for binary labels.

Trees are stored as flat node arrays (feature, threshold, children, leaf
value) so that prediction is a vectorized walk and serialization is a
handful of lists. A sample goes left when ``x[feature] <= threshold``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any

import numpy as np

from app.core.errors import InputError, ModelFormatError, ShapeError
from app.core.seeding import derive_rng
from app.schemas.config import ForestConfig


logger = logging.getLogger(__name__)


LEAF = -1


@dataclass(frozen=True)
class DecisionTree:
    """
    One fitted tree.

    For node ``k``: ``feature[k] == -1`` marks a leaf whose score is
    ``value[k]`` (fraction of positive training samples that reached it).
    """
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def node_count(self) -> int:
        return int(self.feature.shape[0])

    @property
    def leaf_count(self) -> int:
        return int(np.sum(self.feature == LEAF))

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Index of the leaf each row lands in."""
        node = np.zeros(x.shape[0], dtype=np.int64)
        active = self.feature[node] != LEAF
        while active.any():
            rows = np.nonzero(active)[0]
            current = node[rows]
            go_left = x[rows, self.feature[current]] <= self.threshold[current]
            node[rows] = np.where(go_left, self.left[current], self.right[current])
            active = self.feature[node] != LEAF
        return node

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.value[self.apply(x)]

    def to_dict(self) -> dict[str, list]:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict[str, list]) -> "DecisionTree":
        try:
            tree = cls(
                feature=np.array(data["feature"], dtype=np.int64),
                threshold=np.array(data["threshold"], dtype=np.float64),
                left=np.array(data["left"], dtype=np.int64),
                right=np.array(data["right"], dtype=np.int64),
                value=np.array(data["value"], dtype=np.float64),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ModelFormatError(f"malformed tree: {exc}") from None
        n = tree.node_count
        if n == 0 or any(arr.shape != (n,) for arr in (tree.threshold, tree.left, tree.right, tree.value)):
            raise ModelFormatError("tree node arrays are empty or of unequal length")
        inner = tree.feature != LEAF
        children = np.concatenate([tree.left[inner], tree.right[inner]])
        if children.size and (children.min() <= 0 or children.max() >= n):
            raise ModelFormatError("tree child index out of range")
        return tree


@dataclass(frozen=True)
class RandomForest:
    """Bagged trees; the score is the mean of per-tree leaf fractions."""
    trees: tuple[DecisionTree, ...]
    width: int

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.width:
            raise ShapeError(f"expected {self.width} input features, got {x.shape[1]}")
        total = np.zeros(x.shape[0])
        for tree in self.trees:
            total += tree.predict(x)
        return total / len(self.trees)

    def to_dict(self) -> dict[str, Any]:
        return {"width": self.width, "trees": [tree.to_dict() for tree in self.trees]}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RandomForest":
        try:
            width = int(data["width"])
            trees = tuple(DecisionTree.from_dict(tree) for tree in data["trees"])
        except (KeyError, TypeError) as exc:
            raise ModelFormatError(f"malformed forest: {exc}") from None
        if not trees:
            raise ModelFormatError("forest has no trees")
        return cls(trees=trees, width=width)


def gini(positive_fraction: np.ndarray | float) -> np.ndarray | float:
    """Gini impurity of a binary node: 2p(1 - p)."""
    return 2.0 * positive_fraction * (1.0 - positive_fraction)


def _best_split_on_feature(
    values: np.ndarray,
    y: np.ndarray,
    min_leaf: int,
) -> tuple[float, float] | None:
    """Lowest weighted Gini over midpoint thresholds of one feature, or None."""
    n = values.shape[0]
    order = np.argsort(values, kind="stable")
    v = values[order]
    positives = np.cumsum(y[order])
    total_positive = positives[-1]

    n_left = np.arange(1, n)
    n_right = n - n_left
    valid = (v[1:] > v[:-1]) & (n_left >= min_leaf) & (n_right >= min_leaf)
    if not valid.any():
        return None

    pos_left = positives[:-1]
    p_left = pos_left / n_left
    p_right = (total_positive - pos_left) / n_right
    impurity = (n_left * gini(p_left) + n_right * gini(p_right)) / n
    impurity = np.where(valid, impurity, np.inf)

    i = int(np.argmin(impurity))
    low, high = v[i], v[i + 1]
    threshold = low + (high - low) / 2.0
    if threshold >= high:
        threshold = low
    return float(impurity[i]), float(threshold)


def fit_tree(
    x: np.ndarray,
    y: np.ndarray,
    config: ForestConfig,
    rng: np.random.Generator,
) -> DecisionTree:
    """
    Grow one CART tree with Gini splits.

    At every node ``config.candidate_count(width)`` features are drawn at
    random; when all of them are constant on the node, further features are
    tried in the same random order until enough non-constant ones were seen.
    A node becomes a leaf at max depth, when it is pure, when it is too small
    to give both children ``min_leaf`` samples, or when no split exists.

    Args:
        x: Feature matrix (n, d).
        y: Binary labels (n,).
        config: Depth, leaf size and candidate count.
        rng: Generator for the feature draws.

    Returns:
        DecisionTree: The fitted tree.
    """
    n, width = x.shape
    y = np.asarray(y, dtype=np.float64)
    candidates = config.candidate_count(width)

    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    value: list[float] = []

    def new_node(indices: np.ndarray) -> int:
        feature.append(LEAF)
        threshold.append(0.0)
        left.append(LEAF)
        right.append(LEAF)
        value.append(float(y[indices].mean()))
        return len(feature) - 1

    stack = [(new_node(np.arange(n)), np.arange(n), 0)]
    while stack:
        node, indices, depth = stack.pop()
        p = value[node]
        if depth >= config.max_depth or p in (0.0, 1.0) or indices.size < 2 * config.min_leaf:
            continue

        parent_impurity = gini(p)
        best: tuple[float, int, float] | None = None
        seen_varying = 0
        for f in rng.permutation(width):
            column = x[indices, f]
            if column.min() == column.max():
                continue
            seen_varying += 1
            found = _best_split_on_feature(column, y[indices], config.min_leaf)
            if found is not None and found[0] <= parent_impurity:
                if best is None or found[0] < best[0]:
                    best = (found[0], int(f), found[1])
            if seen_varying >= candidates:
                break
        if best is None:
            continue

        _, split_feature, split_threshold = best
        goes_left = x[indices, split_feature] <= split_threshold
        left_indices = indices[goes_left]
        right_indices = indices[~goes_left]
        feature[node] = split_feature
        threshold[node] = split_threshold
        left[node] = new_node(left_indices)
        right[node] = new_node(right_indices)
        stack.append((right[node], right_indices, depth + 1))
        stack.append((left[node], left_indices, depth + 1))

    return DecisionTree(
        feature=np.array(feature, dtype=np.int64),
        threshold=np.array(threshold, dtype=np.float64),
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        value=np.array(value, dtype=np.float64),
    )


def fit_forest(x: np.ndarray, y: np.ndarray, config: ForestConfig, seed: int) -> RandomForest:
    """
    Train ``config.tree_count`` trees on bootstrap samples.

    Tree ``t`` draws its bootstrap sample and feature choices from the named
    stream ``("tree", t)`` under ``seed``.

    Raises:
        InputError: If there is no training data.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = x.shape[0]
    if n == 0:
        raise InputError("cannot train on an empty slice")

    trees = []
    for t in range(config.tree_count):
        rng = derive_rng(seed, "tree", t)
        sample = rng.integers(0, n, size=n) if config.bootstrap else np.arange(n)
        trees.append(fit_tree(x[sample], y[sample], config, rng))

    nodes = sum(tree.node_count for tree in trees)
    logger.debug(f"Fitted {len(trees)} trees with {nodes} nodes in total")
    return RandomForest(trees=tuple(trees), width=x.shape[1])
