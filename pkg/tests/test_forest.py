import json

import numpy as np
import pytest

from upliftfs.data import Dataset, DataValidationError
from upliftfs.forest import ForestConfig, StandardForest, Tree, fit, gini, shrink_to_features


def make_dataset(x, y, w=None):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    return Dataset(
        features=x,
        feature_names=[f"x{j}" for j in range(x.shape[1])],
        treatment=np.tile([1, 0], n)[:n] if w is None else np.asarray(w),
        outcome=np.asarray(y),
    )


def oracle_cart(x, y, n_classes, max_depth, min_leaf):
    """Independent greedy CART: exhaustive midpoint thresholds, features
    ascending, strict improvement, first winner kept."""

    def gini_counts(counts, total):
        return 1.0 - sum((c / total) ** 2 for c in counts)

    def grow(idx, depth):
        labels = y[idx]
        counts = [int((labels == c).sum()) for c in range(n_classes)]
        node = {"leaf": True, "value": [c / len(idx) for c in counts], "n": len(idx)}
        if depth >= max_depth or len(idx) < 2 * min_leaf or max(counts) == len(idx):
            return node
        parent = gini_counts(counts, len(idx))
        best = None
        for j in range(x.shape[1]):
            col = x[idx, j]
            vals = np.unique(col)
            for a, b in zip(vals[:-1], vals[1:]):
                threshold = 0.5 * (a + b)
                left_mask = col <= threshold
                nl, nr = int(left_mask.sum()), int((~left_mask).sum())
                if nl < min_leaf or nr < min_leaf:
                    continue
                gl = gini_counts(
                    [int((labels[left_mask] == c).sum()) for c in range(n_classes)], nl
                )
                gr = gini_counts(
                    [int((labels[~left_mask] == c).sum()) for c in range(n_classes)], nr
                )
                decrease = parent - (nl * gl + nr * gr) / len(idx)
                if decrease > 0.0 and (best is None or decrease > best[0]):
                    best = (decrease, j, threshold)
        if best is None:
            return node
        _, j, threshold = best
        left_mask = x[idx, j] <= threshold
        return {
            "leaf": False,
            "feature": j,
            "threshold": threshold,
            "n": len(idx),
            "left": grow(idx[left_mask], depth + 1),
            "right": grow(idx[~left_mask], depth + 1),
        }

    return grow(np.arange(x.shape[0]), 0)


def assert_tree_matches_oracle(tree: Tree, oracle: dict, node: int = 0):
    if oracle["leaf"]:
        assert tree.feature[node] == -1
        assert np.allclose(tree.value[node], oracle["value"], atol=1e-12)
    else:
        assert tree.feature[node] == oracle["feature"]
        assert tree.threshold[node] == oracle["threshold"]
        assert_tree_matches_oracle(tree, oracle["left"], int(tree.left[node]))
        assert_tree_matches_oracle(tree, oracle["right"], int(tree.right[node]))
    assert tree.n_node[node] == oracle["n"]


class TestGini:
    def test_frozen_values(self):
        assert gini(np.array([1.0, 0.0])) == 0.0
        assert gini(np.array([0.5, 0.5])) == 0.5
        assert gini(np.array([0.25, 0.75])) == pytest.approx(0.375, abs=1e-15)

    def test_validation(self):
        with pytest.raises(ValueError):
            gini(np.array([0.5, 0.4]))
        with pytest.raises(ValueError):
            gini(np.array([-0.1, 1.1]))


class TestConfig:
    @pytest.mark.parametrize(
        "kwargs",
        [
            {"n_trees": 0},
            {"max_depth": 0},
            {"min_samples_leaf": 0},
            {"max_features_per_split": 0},
            {"seed": -1},
        ],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            ForestConfig(**kwargs)

    def test_fewer_features_rule(self):
        cfg = ForestConfig(max_features_per_split=3)
        assert shrink_to_features(cfg, 2).max_features_per_split == 2
        assert shrink_to_features(cfg, 3) is cfg
        assert shrink_to_features(cfg, 10) is cfg


class TestFit:
    def test_pure_data_single_leaf(self):
        rng = np.random.default_rng(0)
        d = make_dataset(rng.normal(size=(50, 2)), np.ones(50, dtype=int))
        f = fit(d, ForestConfig(n_trees=3, min_samples_leaf=5, seed=1))
        for tree in f.trees:
            assert tree.n_nodes == 1 and tree.feature[0] == -1
        assert np.array_equal(f.predict_proba(np.zeros(2)), [0.0, 1.0])

    def test_deterministic(self):
        rng = np.random.default_rng(1)
        d = make_dataset(rng.normal(size=(200, 3)), rng.integers(0, 2, 200))
        cfg = ForestConfig(n_trees=4, min_samples_leaf=10, seed=5)
        assert fit(d, cfg).to_dict() == fit(d, cfg).to_dict()

    def test_separable_signal_recovered(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=1000)
        d = make_dataset(x, (x > 0).astype(int))
        f = fit(
            d,
            ForestConfig(
                n_trees=5, max_depth=2, min_samples_leaf=50, max_features_per_split=1, seed=3
            ),
        )
        proba = f.predict_proba(d.features)
        accuracy = ((proba[:, 1] > 0.5).astype(int) == d.outcome).mean()
        assert accuracy >= 0.95
        for tree in f.trees:
            assert tree.feature[0] == 0
            assert abs(tree.threshold[0]) < 0.2

    def test_depth_respected(self):
        rng = np.random.default_rng(3)
        d = make_dataset(rng.normal(size=(500, 3)), rng.integers(0, 2, 500))
        f = fit(d, ForestConfig(n_trees=3, max_depth=3, min_samples_leaf=2, seed=0))
        for tree in f.trees:
            assert tree.depth() <= 3

    def test_matches_cart_oracle_on_small_instances(self):
        for seed in range(6):
            rng = np.random.default_rng(seed)
            n = int(rng.integers(20, 51))
            x = np.round(rng.normal(size=(n, 3)), 3)
            # de-duplicate rows so oracle and forest see identical orderings
            x = np.unique(x, axis=0)
            y = rng.integers(0, 2, size=x.shape[0])
            d = make_dataset(x, y)
            cfg = ForestConfig(
                n_trees=1,
                max_depth=4,
                min_samples_leaf=3,
                max_features_per_split=3,
                seed=seed,
                bootstrap=False,
            )
            f = fit(d, cfg)
            oracle = oracle_cart(d.features, d.outcome, d.n_classes, 4, 3)
            assert_tree_matches_oracle(f.trees[0], oracle)

    def test_multiclass(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=600)
        y = np.digitize(x, [-0.5, 0.5])  # 3 classes by range
        d = make_dataset(x, y)
        f = fit(d, ForestConfig(n_trees=5, min_samples_leaf=20, seed=1))
        proba = f.predict_proba(d.features)
        assert proba.shape == (600, 3)
        assert np.allclose(proba.sum(axis=1), 1.0, atol=1e-9)
        accuracy = (np.argmax(proba, axis=1) == y).mean()
        assert accuracy > 0.9


class TestPredict:
    def manual_forest(self, values):
        trees = [
            Tree(
                feature=np.array([-1]),
                threshold=np.array([0.0]),
                left=np.array([-1]),
                right=np.array([-1]),
                value=np.array([v], dtype=float),
                n_node=np.array([1]),
                importance=np.zeros(2),
            )
            for v in values
        ]
        return StandardForest(trees, ForestConfig(n_trees=len(values)), 2, 2)

    def test_two_tree_average(self):
        f = self.manual_forest([[1.0, 0.0], [0.0, 1.0]])
        assert np.allclose(f.predict_proba(np.zeros(2)), [0.5, 0.5], atol=1e-15)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(5)
        d = make_dataset(rng.normal(size=(300, 2)), rng.integers(0, 2, 300))
        f = fit(d, ForestConfig(n_trees=3, min_samples_leaf=10, seed=2))
        proba = f.predict_proba(rng.normal(size=(40, 2)))
        assert np.allclose(proba.sum(axis=1), 1.0, atol=1e-9)

    def test_dimension_mismatch(self):
        f = self.manual_forest([[1.0, 0.0]])
        with pytest.raises(DataValidationError, match="feature columns"):
            f.predict_proba(np.zeros(3))


class TestImportance:
    def test_no_split_forest_is_zero_vector(self):
        rng = np.random.default_rng(6)
        d = make_dataset(rng.normal(size=(30, 2)), rng.integers(0, 2, 30))
        f = fit(d, ForestConfig(n_trees=2, min_samples_leaf=30, seed=0))
        assert np.array_equal(f.mdi_importance(), np.zeros(2))

    def test_single_signal_feature_dominates(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(2000, 5))
        y = (x[:, 3] > 0).astype(int)
        d = make_dataset(x, y)
        f = fit(d, ForestConfig(n_trees=10, min_samples_leaf=50, seed=4))
        imp = f.mdi_importance()
        assert imp[3] > 0.8
        assert imp.sum() == pytest.approx(1.0, abs=1e-9)
        assert (imp >= 0).all()


class TestSerialization:
    def test_json_roundtrip_preserves_predictions(self):
        rng = np.random.default_rng(8)
        d = make_dataset(rng.normal(size=(400, 3)), rng.integers(0, 2, 400))
        f = fit(d, ForestConfig(n_trees=4, min_samples_leaf=20, seed=9))
        restored = StandardForest.from_dict(json.loads(json.dumps(f.to_dict())))
        probe = rng.normal(size=(25, 3))
        assert np.array_equal(f.predict_proba(probe), restored.predict_proba(probe))
        assert np.array_equal(f.mdi_importance(), restored.mdi_importance())
        assert restored.config == f.config

    def test_rejects_wrong_payload(self):
        with pytest.raises(ValueError, match="version-1"):
            StandardForest.from_dict({"format_version": 2, "model": "standard_forest"})
