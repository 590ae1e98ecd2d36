"""
Tests for CART trees and the bagged forest.
"""

import numpy as np
import pytest

from app.core.errors import InputError, ModelFormatError, ShapeError
from app.schemas.config import ForestConfig
from app.services.evaluation import auc
from app.services.forest import LEAF, DecisionTree, RandomForest, fit_forest, fit_tree, gini


def _walk(tree: DecisionTree, row: np.ndarray) -> float:
    node = 0
    while tree.feature[node] != LEAF:
        if row[tree.feature[node]] <= tree.threshold[node]:
            node = tree.left[node]
        else:
            node = tree.right[node]
    return float(tree.value[node])


def _xor_data(rng, n: int = 200):
    x = rng.uniform(-1, 1, size=(n, 2))
    y = ((x[:, 0] > 0) ^ (x[:, 1] > 0)).astype(float)
    return x, y


class TestGini:
    """Test suite for the impurity measure."""

    def test_values(self):
        """Test pure and balanced nodes."""
        assert gini(0.0) == 0.0
        assert gini(1.0) == 0.0
        assert gini(0.5) == 0.5


class TestFitTree:
    """Test suite for single trees."""

    def test_pure_node_is_leaf(self, rng):
        """Test that a single-class sample gives one leaf."""
        tree = fit_tree(rng.normal(size=(20, 3)), np.ones(20), ForestConfig(), rng)

        assert tree.node_count == 1
        assert tree.predict(rng.normal(size=(5, 3))).tolist() == [1.0] * 5

    def test_depth_one_matches_exhaustive_split(self):
        """Test a stump against every candidate threshold on 1-D data."""
        x = np.arange(10, dtype=float)[:, np.newaxis]
        y = np.array([0, 0, 1, 0, 0, 1, 1, 1, 0, 1], dtype=float)
        config = ForestConfig(tree_count=1, max_depth=1, min_leaf=1, bootstrap=False)
        forest = fit_forest(x, y, config, seed=3)

        best = None
        for cut in range(1, 10):
            left, right = y[:cut], y[cut:]
            impurity = (len(left) * gini(left.mean()) + len(right) * gini(right.mean())) / len(y)
            if best is None or impurity < best[0]:
                best = (impurity, cut, left.mean(), right.mean())
        _, cut, left_value, right_value = best

        scores = forest.predict(x)
        assert set(np.unique(scores)) == {left_value, right_value}
        assert scores[:cut].tolist() == [left_value] * cut
        assert scores[cut:].tolist() == [right_value] * (10 - cut)
        assert forest.trees[0].threshold[0] == cut - 0.5

    def test_constant_features_skipped(self, rng):
        """Test that a split is found behind constant columns."""
        x = np.column_stack([np.zeros(30), np.ones(30), np.arange(30.0)])
        y = (np.arange(30) >= 15).astype(float)
        config = ForestConfig(tree_count=1, features_per_split=1, min_leaf=1, bootstrap=False)
        tree = fit_tree(x, y, config, rng)

        assert tree.feature[0] == 2
        assert tree.predict(x).tolist() == y.tolist()

    def test_min_leaf_respected(self, rng):
        """Test that no leaf holds fewer training samples than min_leaf."""
        x, y = _xor_data(rng, 120)
        tree = fit_tree(x, y, ForestConfig(min_leaf=5, features_per_split=2), rng)
        leaves, counts = np.unique(tree.apply(x), return_counts=True)

        assert counts.min() >= 5
        assert all(tree.feature[leaf] == LEAF for leaf in leaves)

    def test_max_depth_respected(self, rng):
        """Test that a depth-2 tree has at most four leaves."""
        x, y = _xor_data(rng)
        tree = fit_tree(x, y, ForestConfig(max_depth=2, min_leaf=1), rng)

        assert tree.leaf_count <= 4


class TestRandomForest:
    """Test suite for fit_forest and prediction."""

    def test_xor_separated(self, rng):
        """Test that the forest separates XOR-patterned data."""
        x, y = _xor_data(rng)
        forest = fit_forest(x, y, ForestConfig(tree_count=20, min_leaf=1, max_depth=8), seed=11)

        assert auc(forest.predict(x), y) > 0.9

    def test_score_is_mean_of_tree_walks(self, rng):
        """Test the forest score against a per-row walk of every tree."""
        x, y = _xor_data(rng, 80)
        forest = fit_forest(x, y, ForestConfig(tree_count=7, max_depth=4), seed=5)
        sample = rng.uniform(-1, 1, size=(25, 2))

        expected = [np.mean([_walk(tree, row) for tree in forest.trees]) for row in sample]
        np.testing.assert_allclose(forest.predict(sample), expected, rtol=1e-12)

    def test_deterministic(self, rng):
        """Test that equal seeds give equal forests."""
        x, y = _xor_data(rng, 60)
        config = ForestConfig(tree_count=5)

        first = fit_forest(x, y, config, seed=1).to_dict()
        assert first == fit_forest(x, y, config, seed=1).to_dict()

    def test_width_mismatch(self, rng):
        """Test that scoring rows of the wrong width fails."""
        x, y = _xor_data(rng, 40)
        forest = fit_forest(x, y, ForestConfig(tree_count=2), seed=0)
        with pytest.raises(ShapeError):
            forest.predict(np.zeros((3, 5)))

    def test_empty_training_set(self):
        """Test that an empty slice is rejected."""
        with pytest.raises(InputError):
            fit_forest(np.zeros((0, 2)), np.zeros(0), ForestConfig(), seed=0)

    def test_dict_round_trip(self, rng):
        """Test that a restored forest scores identically."""
        x, y = _xor_data(rng, 60)
        forest = fit_forest(x, y, ForestConfig(tree_count=3), seed=2)
        restored = RandomForest.from_dict(forest.to_dict())

        np.testing.assert_array_equal(restored.predict(x), forest.predict(x))

    def test_corrupt_tree_rejected(self):
        """Test that a child index outside the node arrays is refused."""
        data = {"width": 1, "trees": [{
            "feature": [0, -1, -1],
            "threshold": [0.5, 0.0, 0.0],
            "left": [1, -1, -1],
            "right": [7, -1, -1],
            "value": [0.5, 0.0, 1.0],
        }]}
        with pytest.raises(ModelFormatError):
            RandomForest.from_dict(data)
