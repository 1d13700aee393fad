"""Random forest that splits on treatment-effect divergence.

Each candidate split is scored by the gain

    D(P_left : Q_left) + D(P_right : Q_right) - D(P : Q)

where P/Q are the treatment/control class distributions and D is one of the
kl/ed/chi divergences. The child sum is unweighted, so a split that merely
copies the parent distributions into both children would "gain" D(P : Q);
a split is therefore accepted only when its gain exceeds D(P : Q) + 1e-12,
i.e. it must create genuine extra heterogeneity. Leaves carry per-arm class
distributions and predict their difference in conversion probability.

Candidate thresholds per node and feature: every distinct value when there
are at most 20, otherwise 20 interior quantiles. The stored threshold is
the largest feature value routed left, and rows with x <= threshold go
left. Determinism follows the same contract as the standard forest:
per-tree derived seeds, preorder growth, ascending feature order,
first-winner ties.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import Dataset, DataValidationError, derived_rng
from .filters import DIVERGENCE_KINDS, divergence, divergence_rows, smoothed_proportions

_MAX_EXHAUSTIVE_THRESHOLDS = 20
_NET_GAIN_EPS = 1e-12


@dataclass(frozen=True)
class UpliftForestConfig:
    """Uplift-forest hyperparameters; min_samples_leaf binds per arm."""

    kind: str = "kl"
    n_trees: int = 10
    max_depth: int = 10
    min_samples_leaf: int = 100
    max_features_per_split: int = 3
    seed: int = 0
    bootstrap: bool = True

    def __post_init__(self) -> None:
        if self.kind not in DIVERGENCE_KINDS:
            raise ValueError(f"unknown divergence '{self.kind}', expected {DIVERGENCE_KINDS}")
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
        return min(self.max_features_per_split, m)


def split_gain(
    kind: str,
    parent: tuple[np.ndarray, np.ndarray],
    left: tuple[np.ndarray, np.ndarray],
    right: tuple[np.ndarray, np.ndarray],
) -> float:
    """Divergence gain of a split from already-smoothed (P, Q) pairs."""
    return (
        divergence(kind, left[0], left[1])
        + divergence(kind, right[0], right[1])
        - divergence(kind, parent[0], parent[1])
    )


@dataclass
class UpliftTree:
    """Flat binary tree; every node stores its per-arm class distributions.

    `feature[i] == -1` marks a leaf. `gain[i]` is the recorded divergence
    gain of the split at internal node i (0 at leaves). `uplift[i]` is
    p[i, 1] - q[i, 1], the node's treated-minus-control conversion gap.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    gain: np.ndarray
    n_node: np.ndarray
    treat_n: np.ndarray
    control_n: np.ndarray
    p: np.ndarray
    q: np.ndarray
    uplift: np.ndarray
    importance: np.ndarray
    weighted_importance: np.ndarray

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
        out = np.empty(x.shape[0])
        stack = [(0, np.arange(x.shape[0]))]
        while stack:
            node, rows = stack.pop()
            if rows.size == 0:
                continue
            j = int(self.feature[node])
            if j < 0:
                out[rows] = self.uplift[node]
                continue
            goes_left = x[rows, j] <= self.threshold[node]
            stack.append((int(self.left[node]), rows[goes_left]))
            stack.append((int(self.right[node]), rows[~goes_left]))
        return out


class _UpliftTreeBuilder:
    def __init__(self, x, w, y, n_classes, cfg: UpliftForestConfig, max_features, rng):
        self.x = x
        self.n_classes = n_classes
        self.kind = cfg.kind
        self.max_depth = cfg.max_depth
        self.min_leaf = cfg.min_samples_leaf
        self.max_features = max_features
        self.rng = rng
        self.n_total = x.shape[0]
        # joint (arm, class) key lets one cumsum track all four count kinds
        self.key = w * n_classes + y
        self.nodes: list[dict] = []
        self.importance = np.zeros(x.shape[1])
        self.weighted_importance = np.zeros(x.shape[1])

    def build(self) -> UpliftTree:
        self._grow(np.arange(self.n_total), depth=0)
        return UpliftTree(
            feature=np.array([nd["feature"] for nd in self.nodes], dtype=np.int64),
            threshold=np.array([nd["threshold"] for nd in self.nodes]),
            left=np.array([nd["left"] for nd in self.nodes], dtype=np.int64),
            right=np.array([nd["right"] for nd in self.nodes], dtype=np.int64),
            gain=np.array([nd["gain"] for nd in self.nodes]),
            n_node=np.array([nd["n"] for nd in self.nodes], dtype=np.int64),
            treat_n=np.array([nd["treat_n"] for nd in self.nodes], dtype=np.int64),
            control_n=np.array([nd["control_n"] for nd in self.nodes], dtype=np.int64),
            p=np.vstack([nd["p"] for nd in self.nodes]),
            q=np.vstack([nd["q"] for nd in self.nodes]),
            uplift=np.array([nd["uplift"] for nd in self.nodes]),
            importance=self.importance,
            weighted_importance=self.weighted_importance,
        )

    def _arm_class_counts(self, rows) -> np.ndarray:
        counts = np.bincount(self.key[rows], minlength=2 * self.n_classes)
        return counts.reshape(2, self.n_classes)  # [control, treat]

    def _grow(self, rows: np.ndarray, depth: int) -> int:
        index = len(self.nodes)
        counts = self._arm_class_counts(rows)
        control_counts, treat_counts = counts[0], counts[1]
        p = smoothed_proportions(treat_counts)
        q = smoothed_proportions(control_counts)
        node = {
            "feature": -1,
            "threshold": 0.0,
            "left": -1,
            "right": -1,
            "gain": 0.0,
            "n": rows.size,
            "treat_n": int(treat_counts.sum()),
            "control_n": int(control_counts.sum()),
            "p": p,
            "q": q,
            "uplift": float(p[1] - q[1]),
        }
        self.nodes.append(node)

        can_split = (
            depth < self.max_depth
            and node["treat_n"] >= 2 * self.min_leaf
            and node["control_n"] >= 2 * self.min_leaf
        )
        if can_split:
            parent_div = float(divergence_rows(self.kind, p[None, :], q[None, :])[0])
            found = self._best_split(rows, counts, parent_div)
            if found is not None:
                j, threshold, gain = found
                node["feature"] = j
                node["threshold"] = threshold
                node["gain"] = gain
                self.importance[j] += gain
                self.weighted_importance[j] += (rows.size / self.n_total) * gain
                goes_left = self.x[rows, j] <= threshold
                node["left"] = self._grow(rows[goes_left], depth + 1)
                node["right"] = self._grow(rows[~goes_left], depth + 1)
        return index

    def _candidate_features(self) -> np.ndarray:
        m = self.x.shape[1]
        chosen = self.rng.choice(m, size=min(self.max_features, m), replace=False)
        return np.sort(chosen)

    def _split_positions(self, xo: np.ndarray) -> np.ndarray:
        """Left-child sizes to evaluate, from sorted node feature values."""
        distinct = np.unique(xo)
        if distinct.size <= _MAX_EXHAUSTIVE_THRESHOLDS:
            thresholds = distinct[:-1]
        else:
            grid = np.arange(1, _MAX_EXHAUSTIVE_THRESHOLDS + 1) / (
                _MAX_EXHAUSTIVE_THRESHOLDS + 1
            )
            thresholds = np.unique(np.quantile(xo, grid))
        positions = np.unique(np.searchsorted(xo, thresholds, side="right"))
        return positions[(positions >= 1) & (positions <= xo.size - 1)]

    def _best_split(self, rows, counts, parent_div):
        n = rows.size
        totals = counts.reshape(-1)  # (2C,) control block then treat block
        best = None
        for j in self._candidate_features():
            xs = self.x[rows, j]
            order = np.argsort(xs, kind="stable")
            xo = xs[order]
            positions = self._split_positions(xo)
            if positions.size == 0:
                continue
            keyo = self.key[rows][order]
            cum = np.cumsum(keyo[:, None] == np.arange(2 * self.n_classes)[None, :], axis=0)
            left = cum[positions - 1]
            right = totals[None, :] - left
            left = left.reshape(-1, 2, self.n_classes)
            right = right.reshape(-1, 2, self.n_classes)

            feasible = (
                (left[:, 0].sum(axis=1) >= self.min_leaf)
                & (left[:, 1].sum(axis=1) >= self.min_leaf)
                & (right[:, 0].sum(axis=1) >= self.min_leaf)
                & (right[:, 1].sum(axis=1) >= self.min_leaf)
            )
            if not feasible.any():
                continue
            positions = positions[feasible]
            left = left[feasible]
            right = right[feasible]

            child_sum = divergence_rows(
                self.kind, smoothed_proportions(left[:, 1]), smoothed_proportions(left[:, 0])
            ) + divergence_rows(
                self.kind, smoothed_proportions(right[:, 1]), smoothed_proportions(right[:, 0])
            )
            k = int(np.argmax(child_sum))
            gain = float(child_sum[k]) - parent_div
            accept = gain > parent_div + _NET_GAIN_EPS
            if accept and (best is None or gain > best[2]):
                best = (int(j), float(xo[positions[k] - 1]), gain)
        return best


class UpliftForest:
    """Fitted uplift forest; predictions average per-tree leaf uplifts."""

    def __init__(self, trees: list[UpliftTree], config: UpliftForestConfig, n_classes: int, m: int):
        self.trees = trees
        self.config = config
        self.n_classes = n_classes
        self.m = m

    def predict_uplift(self, x: np.ndarray) -> np.ndarray | float:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        mat = x[None, :] if single else x
        if mat.ndim != 2 or mat.shape[1] != self.m:
            raise DataValidationError(f"expected {self.m} feature columns, got {mat.shape}")
        acc = np.zeros(mat.shape[0])
        for tree in self.trees:
            acc += tree.predict_rows(mat)
        acc /= len(self.trees)
        return float(acc[0]) if single else acc

    def embedded_importance(self, weighted: bool = False) -> np.ndarray:
        """Per-feature sum of recorded split gains over all trees,
        normalized to sum 1. `weighted=True` scales each gain by the
        fraction of the tree's sample reaching the node."""
        source = "weighted_importance" if weighted else "importance"
        raw = np.sum([getattr(tree, source) for tree in self.trees], axis=0)
        total = raw.sum()
        return raw / total if total > 0 else raw

    def to_dict(self) -> dict:
        return {
            "format_version": 1,
            "model": "uplift_forest",
            "n_classes": self.n_classes,
            "m": self.m,
            "config": {
                "kind": self.config.kind,
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
                    "gain": [float(v) for v in t.gain],
                    "n_node": t.n_node.tolist(),
                    "treat_n": t.treat_n.tolist(),
                    "control_n": t.control_n.tolist(),
                    "p": [[float(v) for v in row] for row in t.p],
                    "q": [[float(v) for v in row] for row in t.q],
                    "uplift": [float(v) for v in t.uplift],
                    "importance": [float(v) for v in t.importance],
                    "weighted_importance": [float(v) for v in t.weighted_importance],
                }
                for t in self.trees
            ],
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "UpliftForest":
        if payload.get("format_version") != 1 or payload.get("model") != "uplift_forest":
            raise ValueError("not a version-1 uplift_forest payload")
        trees = [
            UpliftTree(
                feature=np.array(t["feature"], dtype=np.int64),
                threshold=np.array(t["threshold"]),
                left=np.array(t["left"], dtype=np.int64),
                right=np.array(t["right"], dtype=np.int64),
                gain=np.array(t["gain"]),
                n_node=np.array(t["n_node"], dtype=np.int64),
                treat_n=np.array(t["treat_n"], dtype=np.int64),
                control_n=np.array(t["control_n"], dtype=np.int64),
                p=np.array(t["p"]),
                q=np.array(t["q"]),
                uplift=np.array(t["uplift"]),
                importance=np.array(t["importance"]),
                weighted_importance=np.array(t["weighted_importance"]),
            )
            for t in payload["trees"]
        ]
        return cls(trees, UpliftForestConfig(**payload["config"]), payload["n_classes"], payload["m"])


def fit(d: Dataset, cfg: UpliftForestConfig) -> UpliftForest:
    """Train an uplift forest on arm-stratified bootstrap resamples.

    Stratification keeps both arms represented in every tree; draws happen
    treated arm first, then control, from the tree's derived generator.
    """
    d.require_both_arms()
    treated = np.flatnonzero(d.treatment == 1)
    control = np.flatnonzero(d.treatment == 0)
    n_classes = d.n_classes
    trees = []
    for t in range(cfg.n_trees):
        rng = derived_rng(cfg.seed, t)
        if cfg.bootstrap:
            sample = np.concatenate(
                [
                    treated[rng.integers(0, treated.size, size=treated.size)],
                    control[rng.integers(0, control.size, size=control.size)],
                ]
            )
        else:
            sample = np.arange(d.n)
        builder = _UpliftTreeBuilder(
            x=d.features[sample],
            w=d.treatment[sample],
            y=d.outcome[sample],
            n_classes=n_classes,
            cfg=cfg,
            max_features=cfg.effective_max_features(d.m),
            rng=rng,
        )
        trees.append(builder.build())
    return UpliftForest(trees, cfg, n_classes, d.m)


def shrink_to_features(cfg: UpliftForestConfig, m: int) -> UpliftForestConfig:
    """Apply the fewer-features rule: cap max_features_per_split at m."""
    capped = cfg.effective_max_features(m)
    if capped == cfg.max_features_per_split:
        return cfg
    return replace(cfg, max_features_per_split=capped)
