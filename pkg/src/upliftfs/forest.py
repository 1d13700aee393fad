"""From-scratch random-forest classifier.

CART trees with Gini impurity, with-replacement bootstrap per tree, random
feature subsets per node, and mean-decrease-in-impurity feature importance.
Serves as the base learner for the two-model uplift estimator and as the
outcome-only benchmark importance.

Determinism contract: tree t draws every random choice from a generator
derived from (config seed, t), nodes are built in preorder (left before
right), candidate features are visited in ascending index order, and ties
in impurity decrease keep the first candidate. Results therefore never
depend on scheduling.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import Dataset, DataValidationError, derived_rng


@dataclass(frozen=True)
class ForestConfig:
    """Shared forest hyperparameters.

    `bootstrap=False` trains every tree on the full sample; with a single
    tree and all features per split this makes the fit a deterministic
    greedy CART, which the tests compare against an independent oracle.
    """

    n_trees: int = 10
    max_depth: int = 10
    min_samples_leaf: int = 100
    max_features_per_split: int = 3
    seed: int = 0
    bootstrap: bool = True

    def __post_init__(self) -> None:
        if self.n_trees < 1:
            raise ValueError("n_trees must be at least 1")
        if self.max_depth < 1:
            raise ValueError("max_depth must be at least 1")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be at least 1")
        if self.max_features_per_split < 1:
            raise ValueError("max_features_per_split must be at least 1")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    def effective_max_features(self, m: int) -> int:
        """Never ask for more features than the data offers."""
        return min(self.max_features_per_split, m)


def gini(class_proportions: np.ndarray) -> float:
    """Gini impurity 1 - sum(p^2) of a class-proportion vector."""
    p = np.asarray(class_proportions, dtype=np.float64)
    if p.ndim != 1 or p.size < 1:
        raise ValueError("class proportions must form a non-empty vector")
    if abs(p.sum() - 1.0) > 1e-6 or (p < 0).any():
        raise ValueError("class proportions must be non-negative and sum to 1")
    return float(1.0 - (p * p).sum())


def _gini_from_counts(counts: np.ndarray, total: float) -> float:
    p = counts / total
    return float(1.0 - (p * p).sum())


@dataclass
class Tree:
    """Flat binary tree; row i describes node i, root at 0.

    `feature[i] == -1` marks a leaf; `value[i]` holds the leaf class
    proportions (zeros for internal nodes). `n_node[i]` counts the tree's
    training rows reaching the node.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_node: np.ndarray
    importance: np.ndarray

    @property
    def n_nodes(self) -> int:
        return int(self.feature.shape[0])

    def depth(self) -> int:
        def walk(i: int) -> int:
            if self.feature[i] < 0:
                return 0
            return 1 + max(walk(int(self.left[i])), walk(int(self.right[i])))

        return walk(0)

    def predict_rows(self, x: np.ndarray) -> np.ndarray:
        out = np.empty((x.shape[0], self.value.shape[1]))
        stack = [(0, np.arange(x.shape[0]))]
        while stack:
            node, rows = stack.pop()
            if rows.size == 0:
                continue
            j = int(self.feature[node])
            if j < 0:
                out[rows] = self.value[node]
                continue
            goes_left = x[rows, j] <= self.threshold[node]
            stack.append((int(self.left[node]), rows[goes_left]))
            stack.append((int(self.right[node]), rows[~goes_left]))
        return out


class _TreeBuilder:
    """Grows one CART tree on (x, y); collects nodes in preorder."""

    def __init__(self, x, y, n_classes, max_depth, min_leaf, max_features, rng):
        self.x = x
        self.y = y
        self.n_classes = n_classes
        self.max_depth = max_depth
        self.min_leaf = min_leaf
        self.max_features = max_features
        self.rng = rng
        self.n_total = x.shape[0]
        self.nodes: list[dict] = []
        self.importance = np.zeros(x.shape[1])

    def build(self) -> Tree:
        rows = np.arange(self.n_total)
        self._grow(rows, depth=0)
        n = len(self.nodes)
        tree = Tree(
            feature=np.array([nd["feature"] for nd in self.nodes], dtype=np.int64),
            threshold=np.array([nd["threshold"] for nd in self.nodes]),
            left=np.array([nd["left"] for nd in self.nodes], dtype=np.int64),
            right=np.array([nd["right"] for nd in self.nodes], dtype=np.int64),
            value=np.vstack([nd["value"] for nd in self.nodes]) if n else np.zeros((0, 2)),
            n_node=np.array([nd["n"] for nd in self.nodes], dtype=np.int64),
            importance=self.importance,
        )
        return tree

    def _grow(self, rows: np.ndarray, depth: int) -> int:
        index = len(self.nodes)
        counts = np.bincount(self.y[rows], minlength=self.n_classes)
        node = {
            "feature": -1,
            "threshold": 0.0,
            "left": -1,
            "right": -1,
            "value": counts / rows.size,
            "n": rows.size,
        }
        self.nodes.append(node)

        can_split = (
            depth < self.max_depth
            and rows.size >= 2 * self.min_leaf
            and counts.max() < rows.size  # impure
        )
        if can_split:
            found = self._best_split(rows, counts)
            if found is not None:
                j, threshold, decrease = found
                self.importance[j] += (rows.size / self.n_total) * decrease
                goes_left = self.x[rows, j] <= threshold
                node["feature"] = j
                node["threshold"] = threshold
                node["value"] = np.zeros(self.n_classes)
                node["left"] = self._grow(rows[goes_left], depth + 1)
                node["right"] = self._grow(rows[~goes_left], depth + 1)
        return index

    def _candidate_features(self) -> np.ndarray:
        m = self.x.shape[1]
        chosen = self.rng.choice(m, size=min(self.max_features, m), replace=False)
        return np.sort(chosen)

    def _best_split(self, rows, counts):
        n = rows.size
        parent_gini = _gini_from_counts(counts, n)
        y_node = self.y[rows]
        best = None
        for j in self._candidate_features():
            xs = self.x[rows, j]
            order = np.argsort(xs, kind="stable")
            xo = xs[order]
            yo = y_node[order]

            sizes = np.arange(1, n)
            feasible = (sizes >= self.min_leaf) & (sizes <= n - self.min_leaf)
            feasible &= xo[1:] != xo[:-1]  # only between distinct values
            positions = np.flatnonzero(feasible) + 1
            if positions.size == 0:
                continue

            cum = np.cumsum(yo[:, None] == np.arange(self.n_classes)[None, :], axis=0)
            left_counts = cum[positions - 1]
            right_counts = counts[None, :] - left_counts
            left_n = positions.astype(np.float64)
            right_n = n - left_n
            gini_left = 1.0 - ((left_counts / left_n[:, None]) ** 2).sum(axis=1)
            gini_right = 1.0 - ((right_counts / right_n[:, None]) ** 2).sum(axis=1)
            decrease = parent_gini - (left_n * gini_left + right_n * gini_right) / n

            k = int(np.argmax(decrease))
            if decrease[k] > 0.0 and (best is None or decrease[k] > best[2]):
                p = positions[k]
                best = (j, 0.5 * (xo[p - 1] + xo[p]), float(decrease[k]))
        return best


class StandardForest:
    """Fitted forest: immutable trees plus the config that produced them."""

    def __init__(self, trees: list[Tree], config: ForestConfig, n_classes: int, m: int):
        self.trees = trees
        self.config = config
        self.n_classes = n_classes
        self.m = m

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        """Mean of per-tree leaf class proportions; one row per input row."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        mat = x[None, :] if single else x
        if mat.ndim != 2 or mat.shape[1] != self.m:
            raise DataValidationError(f"expected {self.m} feature columns, got {mat.shape}")
        acc = np.zeros((mat.shape[0], self.n_classes))
        for tree in self.trees:
            acc += tree.predict_rows(mat)
        acc /= len(self.trees)
        return acc[0] if single else acc

    def mdi_importance(self) -> np.ndarray:
        """Impurity-decrease importance, averaged over trees, normalized to
        sum 1 (all zeros when no tree ever split)."""
        raw = np.mean([tree.importance for tree in self.trees], axis=0)
        total = raw.sum()
        return raw / total if total > 0 else raw

    def to_dict(self) -> dict:
        return {
            "format_version": 1,
            "model": "standard_forest",
            "n_classes": self.n_classes,
            "m": self.m,
            "config": {
                "n_trees": self.config.n_trees,
                "max_depth": self.config.max_depth,
                "min_samples_leaf": self.config.min_samples_leaf,
                "max_features_per_split": self.config.max_features_per_split,
                "seed": self.config.seed,
                "bootstrap": self.config.bootstrap,
            },
            "trees": [
                {
                    "feature": t.feature.tolist(),
                    "threshold": [float(v) for v in t.threshold],
                    "left": t.left.tolist(),
                    "right": t.right.tolist(),
                    "value": [[float(v) for v in row] for row in t.value],
                    "n_node": t.n_node.tolist(),
                    "importance": [float(v) for v in t.importance],
                }
                for t in self.trees
            ],
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "StandardForest":
        if payload.get("format_version") != 1 or payload.get("model") != "standard_forest":
            raise ValueError("not a version-1 standard_forest payload")
        trees = [
            Tree(
                feature=np.array(t["feature"], dtype=np.int64),
                threshold=np.array(t["threshold"]),
                left=np.array(t["left"], dtype=np.int64),
                right=np.array(t["right"], dtype=np.int64),
                value=np.array(t["value"]),
                n_node=np.array(t["n_node"], dtype=np.int64),
                importance=np.array(t["importance"]),
            )
            for t in payload["trees"]
        ]
        return cls(trees, ForestConfig(**payload["config"]), payload["n_classes"], payload["m"])


def fit(d: Dataset, cfg: ForestConfig) -> StandardForest:
    """Train a forest predicting the outcome from the features.

    The treatment column plays no role here; arm-specific models are built
    by fitting on arm subsets.
    """
    n_classes = d.n_classes
    trees = []
    for t in range(cfg.n_trees):
        rng = derived_rng(cfg.seed, t)
        if cfg.bootstrap:
            sample = rng.integers(0, d.n, size=d.n)
        else:
            sample = np.arange(d.n)
        builder = _TreeBuilder(
            x=d.features[sample],
            y=d.outcome[sample],
            n_classes=n_classes,
            max_depth=cfg.max_depth,
            min_leaf=cfg.min_samples_leaf,
            max_features=cfg.effective_max_features(d.m),
            rng=rng,
        )
        trees.append(builder.build())
    return StandardForest(trees, cfg, n_classes, d.m)


def shrink_to_features(cfg: ForestConfig, m: int) -> ForestConfig:
    """Apply the fewer-features rule: cap max_features_per_split at m."""
    capped = cfg.effective_max_features(m)
    if capped == cfg.max_features_per_split:
        return cfg
    return replace(cfg, max_features_per_split=capped)


__all__ = [
    "ForestConfig",
    "StandardForest",
    "Tree",
    "fit",
    "gini",
    "shrink_to_features",
]
