"""Evaluation metrics and cross-trial aggregation.

Covers the three quantities the experiment harness reports: RMSE of the
individual treatment effect against ground truth, top-k recall of the
uplift features (overall and per transform pattern), and the area under
the uplift curve. Aggregation turns per-trial results into per-cell means
with normal-approximation confidence intervals.

The uplift-curve definition used here: rows sorted by score descending
(ties keep row order), and for every prefix containing both arms the
prefix uplift is (treated mean outcome - control mean outcome) times the
prefix size; the area is the sum over valid prefixes divided by n^2.
Absolute values only support within-run comparisons between methods.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .data import FeatureRanking
from .datagen import ROLE_UPLIFT

Z_95 = 1.96


def rmse_ite(predicted: np.ndarray, true_ite: np.ndarray) -> float:
    """Root-mean-square error between predicted and true treatment effects."""
    p = np.asarray(predicted, dtype=np.float64)
    t = np.asarray(true_ite, dtype=np.float64)
    if p.ndim != 1 or t.ndim != 1 or p.shape != t.shape:
        raise ValueError(f"predicted and true vectors must share a 1-d shape, got {p.shape} and {t.shape}")
    if p.size == 0:
        raise ValueError("rmse needs at least one row")
    return float(np.sqrt(np.mean((p - t) ** 2)))


def feature_recall_top_k(
    ranking: FeatureRanking, roles: list[str], patterns: list[str], k: int
) -> tuple[float, dict[str, float]]:
    """Share of uplift features ranked in the top k, plus per-pattern shares.

    `roles` and `patterns` are the generator's per-feature labels. The
    per-pattern map covers uplift features only; with one feature per
    pattern each value is a 0/1 indicator.
    """
    roles = list(roles)
    patterns = list(patterns)
    m = ranking.scores.size
    if len(roles) != m or len(patterns) != m:
        raise ValueError("roles and patterns must label every ranked feature")
    uplift = [j for j, role in enumerate(roles) if role == ROLE_UPLIFT]
    if not uplift:
        raise ValueError("no uplift features to recall")
    top = set(ranking.top(k))
    overall = sum(1 for j in uplift if j in top) / len(uplift)
    totals: dict[str, int] = {}
    hits: dict[str, int] = {}
    for j in uplift:
        pat = patterns[j]
        totals[pat] = totals.get(pat, 0) + 1
        hits[pat] = hits.get(pat, 0) + (1 if j in top else 0)
    by_pattern = {pat: hits[pat] / totals[pat] for pat in totals}
    return overall, by_pattern


def auuc(scores: np.ndarray, treatment: np.ndarray, outcome: np.ndarray) -> float:
    """Area under the uplift curve of a score vector; order-only statistic."""
    s = np.asarray(scores, dtype=np.float64)
    w = np.asarray(treatment)
    y = np.asarray(outcome)
    if s.ndim != 1 or s.shape != w.shape or s.shape != y.shape:
        raise ValueError("scores, treatment and outcome must be equal-length vectors")
    n = s.size
    if n < 2:
        raise ValueError("auuc needs at least two rows")
    if not np.isin(w, (0, 1)).all() or not np.isin(y, (0, 1)).all():
        raise ValueError("treatment and outcome must be 0/1 vectors")
    if not ((w == 1).any() and (w == 0).any()):
        raise ValueError("both treatment arms required")
    order = np.argsort(-s, kind="stable")  # descending, ties keep row order
    in_treat = w[order] == 1
    y_sorted = y[order].astype(np.float64)
    k = np.arange(1, n + 1, dtype=np.float64)
    n_treat = np.cumsum(in_treat)
    n_control = k - n_treat
    y_treat = np.cumsum(y_sorted * in_treat)
    y_control = np.cumsum(y_sorted) - y_treat
    valid = (n_treat > 0) & (n_control > 0)
    mean_treat = np.divide(y_treat, n_treat, out=np.zeros(n), where=valid)
    mean_control = np.divide(y_control, n_control, out=np.zeros(n), where=valid)
    uplift_at_k = (mean_treat - mean_control) * k
    return float(uplift_at_k[valid].sum() / (n * n))


def confidence_interval(values: np.ndarray) -> tuple[float, float, float, float]:
    """Mean, standard error and 95% normal CI of a sample of trial metrics.

    A single value has no spread estimate, so its interval collapses to the
    point.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ValueError("need a non-empty 1-d sample")
    mean = float(v.mean())
    se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size >= 2 else 0.0
    return mean, se, mean - Z_95 * se, mean + Z_95 * se


@dataclass(frozen=True)
class TrialResult:
    """Metrics of one (trial, method, model, m*) cell.

    A failed cell carries `error` and NaN metrics; aggregation skips it.
    """

    trial_id: int
    method_name: str
    model_name: str
    top_m_star: int
    rmse: float
    recall_overall: float
    recall_by_pattern: dict[str, float]
    auuc: float | None = None
    selected_features: tuple[str, ...] = ()
    error: str | None = None

    def __post_init__(self) -> None:
        if self.error is not None:
            return
        if self.top_m_star < 1:
            raise ValueError("top_m_star must be at least 1")
        if not self.rmse >= 0.0:
            raise ValueError("rmse must be non-negative")
        values = [self.recall_overall, *self.recall_by_pattern.values()]
        if any(not 0.0 <= r <= 1.0 for r in values):
            raise ValueError("recall values must lie in [0, 1]")

    @classmethod
    def failed(
        cls, trial_id: int, method_name: str, model_name: str, top_m_star: int, error: str
    ) -> "TrialResult":
        return cls(
            trial_id=trial_id,
            method_name=method_name,
            model_name=model_name,
            top_m_star=top_m_star,
            rmse=float("nan"),
            recall_overall=float("nan"),
            recall_by_pattern={},
            error=error,
        )


@dataclass(frozen=True)
class ReportRow:
    method_name: str
    model_name: str
    top_m_star: int
    metric: str
    mean: float
    se: float
    lo: float
    hi: float
    trials: int


@dataclass(frozen=True)
class ExperimentReport:
    """Long-format aggregate: one row per (method, model, m*, metric)."""

    rows: tuple[ReportRow, ...] = field(default_factory=tuple)

    def cell(self, method_name: str, model_name: str, top_m_star: int, metric: str) -> ReportRow:
        for row in self.rows:
            if (row.method_name, row.model_name, row.top_m_star, row.metric) == (
                method_name,
                model_name,
                top_m_star,
                metric,
            ):
                return row
        raise KeyError(f"no report row for {(method_name, model_name, top_m_star, metric)}")

    def to_csv_text(self) -> str:
        lines = ["method,model,m_star,metric,mean,se,lo,hi,trials"]
        for r in self.rows:
            lines.append(
                f"{r.method_name},{r.model_name},{r.top_m_star},{r.metric},"
                f"{float(r.mean)!r},{float(r.se)!r},{float(r.lo)!r},{float(r.hi)!r},{r.trials}"
            )
        return "\n".join(lines) + "\n"

    def to_json_text(self) -> str:
        payload = {
            "format_version": 1,
            "rows": [
                {
                    "method": r.method_name,
                    "model": r.model_name,
                    "m_star": r.top_m_star,
                    "metric": r.metric,
                    "mean": float(r.mean),
                    "se": float(r.se),
                    "lo": float(r.lo),
                    "hi": float(r.hi),
                    "trials": r.trials,
                }
                for r in self.rows
            ],
        }
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def aggregate(trials: list[TrialResult]) -> ExperimentReport:
    """Collapse trial results into per-cell means with confidence intervals.

    Errored results are excluded; a cell whose every trial failed emits no
    rows (the failures stay visible in the per-trial records). Rows come out
    sorted by (method, model, m*, metric) so report bytes are reproducible.
    """
    if not trials:
        raise ValueError("no trial results to aggregate")
    valid = [t for t in trials if t.error is None]
    if not valid:
        raise ValueError("every trial result carries an error")
    cells: dict[tuple[str, str, int], list[TrialResult]] = {}
    for t in valid:
        cells.setdefault((t.method_name, t.model_name, t.top_m_star), []).append(t)
    rows: list[ReportRow] = []
    for (method, model, m_star), batch in cells.items():
        key_sets = {tuple(sorted(t.recall_by_pattern)) for t in batch}
        if len(key_sets) != 1:
            raise ValueError(f"inconsistent recall patterns in cell {(method, model, m_star)}")
        metrics: dict[str, list[float]] = {
            "rmse": [t.rmse for t in batch],
            "recall_overall": [t.recall_overall for t in batch],
        }
        for pat in next(iter(key_sets)):
            metrics[f"recall_{pat}"] = [t.recall_by_pattern[pat] for t in batch]
        if all(t.auuc is not None for t in batch):
            metrics["auuc"] = [t.auuc for t in batch]
        for name, values in metrics.items():
            mean, se, lo, hi = confidence_interval(np.array(values))
            rows.append(ReportRow(method, model, m_star, name, mean, se, lo, hi, len(batch)))
    rows.sort(key=lambda r: (r.method_name, r.model_name, r.top_m_star, r.metric))
    return ExperimentReport(tuple(rows))
