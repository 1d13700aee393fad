"""Tabular data model for randomized-experiment data: validation, CSV
ingestion and seeded train/test splitting."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np


class DataValidationError(ValueError):
    """Raised when input data violates the documented contract."""


def _as_readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Dataset:
    """Immutable feature matrix with treatment indicator and class outcome.

    Parameters
    ----------
    features : ndarray of shape (n, m)
        Real-valued feature matrix; every entry must be finite.
    feature_names : list of str
        Unique column names, one per feature.
    treatment : ndarray of shape (n,)
        Arm indicator, 1 for treatment and 0 for control.
    outcome : ndarray of shape (n,)
        Class labels encoded 0..C-1; the binary conversion case uses {0, 1}.
    """

    features: np.ndarray
    feature_names: list[str]
    treatment: np.ndarray
    outcome: np.ndarray

    def __post_init__(self) -> None:
        features = np.asarray(self.features, dtype=np.float64)
        treatment = np.asarray(self.treatment, dtype=np.int64)
        outcome = np.asarray(self.outcome, dtype=np.int64)
        names = list(self.feature_names)

        if features.ndim != 2:
            raise DataValidationError("features must be a 2-d matrix")
        n, m = features.shape
        if n < 1 or m < 1:
            raise DataValidationError(f"need n >= 1 and m >= 1, got shape {features.shape}")
        if len(names) != m:
            raise DataValidationError(f"{len(names)} feature names for {m} feature columns")
        if len(set(names)) != len(names):
            dupes = sorted({x for x in names if names.count(x) > 1})
            raise DataValidationError(f"duplicate feature names: {dupes}")
        if treatment.shape != (n,) or outcome.shape != (n,):
            raise DataValidationError("treatment and outcome must be length-n vectors")
        if not np.isfinite(features).all():
            bad = np.argwhere(~np.isfinite(features))[0]
            raise DataValidationError(
                f"non-finite feature value at row {bad[0]}, column '{names[bad[1]]}'"
            )
        if not np.isin(treatment, (0, 1)).all():
            raise DataValidationError("treatment values must be 0 or 1")
        if outcome.min() < 0:
            raise DataValidationError("outcome classes must be encoded 0..C-1")

        object.__setattr__(self, "features", _as_readonly(features))
        object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "treatment", _as_readonly(treatment))
        object.__setattr__(self, "outcome", _as_readonly(outcome))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def m(self) -> int:
        return self.features.shape[1]

    @property
    def n_classes(self) -> int:
        return max(2, int(self.outcome.max()) + 1)

    def has_both_arms(self) -> bool:
        return bool((self.treatment == 1).any() and (self.treatment == 0).any())

    def require_both_arms(self) -> None:
        """Scoring operations need at least one row in each arm."""
        if not self.has_both_arms():
            raise DataValidationError("dataset must contain both treatment and control rows")

    def subset(self, rows: np.ndarray) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(
            features=self.features[rows],
            feature_names=self.feature_names,
            treatment=self.treatment[rows],
            outcome=self.outcome[rows],
        )

    def select_features(self, indices: list[int] | np.ndarray) -> "Dataset":
        idx = list(indices)
        return Dataset(
            features=self.features[:, idx],
            feature_names=[self.feature_names[j] for j in idx],
            treatment=self.treatment,
            outcome=self.outcome,
        )


@dataclass(frozen=True)
class SplitPair:
    """Row-disjoint train/test partition of a Dataset, reproducible from seed."""

    train: Dataset
    test: Dataset
    seed: int


@dataclass(frozen=True)
class FeatureRanking:
    """Per-feature importance scores with a deterministic descending order.

    ``order[j]`` is the index of the j-th best feature; ties are broken by
    ascending feature index so rankings are reproducible.
    """

    scores: np.ndarray
    order: np.ndarray
    method_name: str
    diagnostics: list[dict] = field(default_factory=list)

    @classmethod
    def from_scores(
        cls, scores: np.ndarray, method_name: str, diagnostics: list[dict] | None = None
    ) -> "FeatureRanking":
        scores = np.asarray(scores, dtype=np.float64)
        if scores.ndim != 1 or scores.size == 0:
            raise ValueError("scores must be a non-empty 1-d vector")
        order = np.array(sorted(range(scores.size), key=lambda j: (-scores[j], j)), dtype=np.int64)
        return cls(
            scores=_as_readonly(scores),
            order=_as_readonly(order),
            method_name=method_name,
            diagnostics=list(diagnostics) if diagnostics else [],
        )

    def top(self, k: int) -> list[int]:
        if not 1 <= k <= self.order.size:
            raise ValueError(f"k must be in 1..{self.order.size}, got {k}")
        return [int(j) for j in self.order[:k]]


def load_csv(path: str, treatment_col: str, outcome_col: str) -> Dataset:
    """Load a UTF-8, comma-separated file with one header row into a Dataset.

    All columns other than `treatment_col` and `outcome_col` become features,
    preserving file column and row order. Treatment and outcome cells must be
    the integer literals 0 or 1; feature cells must parse as finite reals.
    Any malformed cell aborts ingestion with an error naming the offending
    file line (header = line 1) and column.
    """
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataValidationError(f"cannot open '{path}': {exc}") from exc

    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataValidationError(f"'{path}' is empty") from None

        header = [h.strip() for h in header]
        if len(set(header)) != len(header):
            dupes = sorted({h for h in header if header.count(h) > 1})
            raise DataValidationError(f"duplicate columns in header: {dupes}")
        for col in (treatment_col, outcome_col):
            if col not in header:
                raise DataValidationError(f"column '{col}' not found in header {header}")
        if treatment_col == outcome_col:
            raise DataValidationError("treatment and outcome must be different columns")

        w_pos = header.index(treatment_col)
        y_pos = header.index(outcome_col)
        feature_pos = [i for i in range(len(header)) if i not in (w_pos, y_pos)]
        feature_names = [header[i] for i in feature_pos]
        if not feature_names:
            raise DataValidationError("file has no feature columns")

        rows: list[list[float]] = []
        treatment: list[int] = []
        outcome: list[int] = []
        for line_no, record in enumerate(reader, start=2):
            if len(record) != len(header):
                raise DataValidationError(
                    f"row {line_no} has {len(record)} cells, expected {len(header)}"
                )

            def parse(pos: int) -> float:
                cell = record[pos].strip()
                try:
                    value = float(cell)
                except ValueError:
                    raise DataValidationError(
                        f"non-numeric value '{cell}' at row {line_no}, column '{header[pos]}'"
                    ) from None
                if not math.isfinite(value):
                    raise DataValidationError(
                        f"non-finite value '{cell}' at row {line_no}, column '{header[pos]}'"
                    )
                return value

            w = parse(w_pos)
            if w not in (0.0, 1.0):
                raise DataValidationError(f"treatment value outside {{0,1}} at row {line_no}")
            y = parse(y_pos)
            if y not in (0.0, 1.0):
                raise DataValidationError(f"outcome value outside {{0,1}} at row {line_no}")
            rows.append([parse(i) for i in feature_pos])
            treatment.append(int(w))
            outcome.append(int(y))

    if not rows:
        raise DataValidationError(f"'{path}' contains a header but no data rows")
    return Dataset(
        features=np.array(rows, dtype=np.float64),
        feature_names=feature_names,
        treatment=np.array(treatment, dtype=np.int64),
        outcome=np.array(outcome, dtype=np.int64),
    )


def split_indices(n: int, test_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Return sorted (train_rows, test_rows) for a uniform seeded partition.

    The test half gets round(n * test_fraction) rows, clamped to [1, n-1].
    """
    if n < 2:
        raise DataValidationError(f"need at least 2 rows to split, got {n}")
    if not 0.0 < test_fraction < 1.0:
        raise DataValidationError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    n_test = int(math.floor(n * test_fraction + 0.5))
    n_test = min(max(n_test, 1), n - 1)
    perm = np.random.default_rng(np.random.SeedSequence(seed)).permutation(n)
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


def train_test_split(d: Dataset, test_fraction: float, seed: int) -> SplitPair:
    """Partition rows into a train/test SplitPair driven only by the seed.

    Emits a warning when a half ends up without both treatment arms; scoring
    operations on that half will then refuse to run.
    """
    train_rows, test_rows = split_indices(d.n, test_fraction, seed)
    train = d.subset(train_rows)
    test = d.subset(test_rows)
    for name, half in (("train", train), ("test", test)):
        if not half.has_both_arms():
            warnings.warn(
                f"{name} half of the split lacks one treatment arm; "
                "scoring operations on it will fail",
                UserWarning,
                stacklevel=2,
            )
    return SplitPair(train=train, test=test, seed=int(seed))


def derived_rng(*keys: int) -> np.random.Generator:
    """Deterministic generator derived from a tuple of integer keys.

    Used to give independent substreams to trials, trees and arms so results
    do not depend on scheduling or worker count.
    """
    return np.random.default_rng(np.random.SeedSequence(tuple(int(k) for k in keys)))
