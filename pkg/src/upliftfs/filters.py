"""Per-feature treatment-effect scorers that need no model fit.

Three families:

* bin-based divergence filters: split rows into quantile bins of one
  feature and sum per-bin divergences between the treatment and control
  class distributions, weighted by bin size;
* an interaction F-test: OLS of outcome on [1, w, x, w*x], squared
  t-statistic of the interaction coefficient;
* an interaction likelihood-ratio test: logistic fit with and without the
  w*x term, twice the log-likelihood gap.

All scorers are pure functions of the dataset; higher scores mean stronger
evidence that the feature modifies the treatment effect.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, DataValidationError, FeatureRanking
from .datagen import sigmoid

DIVERGENCE_KINDS = ("kl", "ed", "chi")
FILTER_METHODS = ("f", "lr", "kl", "ed", "chi")

DEFAULT_BINS = 10

# Ranked-first stand-in for an exact-fit F statistic; keeps orderings total.
F_SENTINEL = float(np.finfo(np.float64).max)


def smoothed_proportions(counts: np.ndarray) -> np.ndarray:
    """Class proportions per row of a count matrix, Laplace-adjusted when
    degenerate.

    Rows whose raw proportions contain a 0 or 1 become
    (c + 0.5) / (total + 0.5*C); all other rows stay exact so well-populated
    cells keep their observed values. Accepts a single count vector or a
    (rows, C) matrix; row totals must be positive.
    """
    counts = np.asarray(counts, dtype=np.float64)
    single = counts.ndim == 1
    mat = counts[None, :] if single else counts
    totals = mat.sum(axis=1, keepdims=True)
    if (totals <= 0).any():
        raise ValueError("every count row needs a positive total")
    raw = mat / totals
    degenerate = ((raw == 0.0) | (raw == 1.0)).any(axis=1, keepdims=True)
    smoothed = (mat + 0.5) / (totals + 0.5 * mat.shape[1])
    out = np.where(degenerate, smoothed, raw)
    return out[0] if single else out


def divergence_rows(kind: str, p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Row-wise divergence between two (rows, C) proportion matrices."""
    if kind not in DIVERGENCE_KINDS:
        raise ValueError(f"unknown divergence '{kind}', expected one of {DIVERGENCE_KINDS}")
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 2 or p.shape[1] < 2:
        raise ValueError("p and q must share a (rows, C) shape with C >= 2")
    diff = p - q
    if kind == "ed":
        return (diff * diff).sum(axis=1)
    if (q <= 0.0).any():
        raise ValueError(f"non-positive control proportion reached '{kind}'; smooth the inputs")
    if kind == "chi":
        return (diff * diff / q).sum(axis=1)
    # kl; p log(p/q) with the p = 0 terms contributing their limit, 0
    safe_p = np.where(p > 0.0, p, 1.0)
    return (p * np.log(safe_p / q)).sum(axis=1)


def divergence(kind: str, p: np.ndarray, q: np.ndarray) -> float:
    """Divergence D(P : Q) between two class-proportion vectors.

    kl = sum p_i ln(p_i/q_i) (natural log), ed = sum (p_i-q_i)^2,
    chi = sum (p_i-q_i)^2 / q_i. kl and chi require positive q, which
    smoothing guarantees; ed accepts anything in [0, 1].
    """
    p = np.atleast_1d(np.asarray(p, dtype=np.float64))
    q = np.atleast_1d(np.asarray(q, dtype=np.float64))
    if p.ndim != 1 or q.ndim != 1:
        raise ValueError("p and q must be vectors")
    for v in (p, q):
        if (v < 0.0).any() or (v > 1.0).any():
            raise ValueError("proportions must lie in [0, 1]")
    return float(divergence_rows(kind, p[None, :], q[None, :])[0])


@dataclass(frozen=True)
class BinTable:
    """Per-bin arm counts and class proportions for one feature.

    Only scoreable bins survive: empty bins vanish with the duplicate
    quantile edges that caused them, and bins missing an arm are dropped
    (recorded in `diagnostics`) with `n_used` shrunk accordingly.
    """

    bin_counts: np.ndarray
    p: np.ndarray
    q: np.ndarray
    n_used: int
    n_total: int
    requested_bins: int
    diagnostics: list[dict] = field(default_factory=list)

    @property
    def n_bins(self) -> int:
        return int(self.bin_counts.shape[0])


def bin_feature(d: Dataset, feature_index: int, n_bins: int = DEFAULT_BINS) -> BinTable:
    """Quantile-bin one feature and tabulate per-arm class counts.

    Bin edges sit at the j/n_bins quantiles (j = 1..n_bins-1) of the pooled
    column; rows fall into half-open intervals closed on the left, so ties
    land in the upper bin. Duplicate edges merge adjacent bins. A constant
    feature yields a single bin covering everything.
    """
    d.require_both_arms()
    if not 0 <= feature_index < d.m:
        raise DataValidationError(f"feature index {feature_index} outside 0..{d.m - 1}")
    if not 2 <= n_bins <= d.n:
        raise DataValidationError(f"bin count must lie in 2..{d.n}, got {n_bins}")

    x = d.features[:, feature_index]
    edges = np.unique(np.quantile(x, np.arange(1, n_bins) / n_bins))
    assignment = np.searchsorted(edges, x, side="right")
    n_slots = edges.size + 1
    n_classes = d.n_classes

    # one bincount over the joint (bin, arm, class) key
    key = (assignment * 2 + d.treatment) * n_classes + d.outcome
    table = np.bincount(key, minlength=n_slots * 2 * n_classes).reshape(n_slots, 2, n_classes)

    treat_counts = table[:, 1, :]
    control_counts = table[:, 0, :]
    totals = table.sum(axis=(1, 2))
    occupied = totals > 0
    both_arms = (treat_counts.sum(axis=1) > 0) & (control_counts.sum(axis=1) > 0)
    keep = occupied & both_arms

    diagnostics: list[dict] = []
    for b in np.flatnonzero(occupied & ~both_arms):
        diagnostics.append(
            {
                "kind": "dropped_single_arm_bin",
                "feature_index": int(feature_index),
                "bin": int(b),
                "rows": int(totals[b]),
            }
        )
    if keep.sum() == 1:
        diagnostics.append(
            {
                "kind": "single_bin",
                "feature_index": int(feature_index),
                "note": "score degenerates to the marginal treatment/control divergence",
            }
        )

    return BinTable(
        bin_counts=totals[keep],
        p=smoothed_proportions(treat_counts[keep]) if keep.any() else np.zeros((0, n_classes)),
        q=smoothed_proportions(control_counts[keep]) if keep.any() else np.zeros((0, n_classes)),
        n_used=int(totals[keep].sum()),
        n_total=d.n,
        requested_bins=int(n_bins),
        diagnostics=diagnostics,
    )


def bin_filter_score(
    d: Dataset, feature_index: int, kind: str, n_bins: int = DEFAULT_BINS
) -> float:
    """Bin-size-weighted divergence sum for one feature.

    Score = sum_k (N_k / N) * D(P_k : Q_k) over the kept bins, with N the
    kept-row total.
    """
    table = bin_feature(d, feature_index, n_bins)
    return bin_table_score(table, kind)


def bin_table_score(table: BinTable, kind: str) -> float:
    if table.n_bins == 0:
        return 0.0
    weights = table.bin_counts / table.n_used
    return float((weights * divergence_rows(kind, table.p, table.q)).sum())


def _interaction_design(d: Dataset, feature_index: int) -> tuple[np.ndarray, np.ndarray]:
    x = d.features[:, feature_index]
    w = d.treatment.astype(np.float64)
    design = np.column_stack([np.ones(d.n), w, x, w * x])
    return design, d.outcome.astype(np.float64)


def _check_regression_inputs(d: Dataset, feature_index: int) -> None:
    d.require_both_arms()
    if not 0 <= feature_index < d.m:
        raise DataValidationError(f"feature index {feature_index} outside 0..{d.m - 1}")
    if d.n < 5:
        raise DataValidationError(f"regression scorers need at least 5 rows, got {d.n}")
    if d.outcome.max() > 1:
        raise DataValidationError("regression scorers support binary outcomes only")


def f_filter_score(
    d: Dataset, feature_index: int, diagnostics: list[dict] | None = None
) -> float:
    """Squared t-statistic of the w*x coefficient in an OLS fit of y.

    A rank-deficient design (constant feature, or a feature duplicating the
    arm indicator) scores 0. An exact fit has zero residual variance; it
    scores a largest-finite sentinel when the interaction coefficient is
    real, 0 when that coefficient is itself numerically zero.
    """
    _check_regression_inputs(d, feature_index)
    design, y = _interaction_design(d, feature_index)

    if np.linalg.matrix_rank(design) < 4:
        if diagnostics is not None:
            diagnostics.append(
                {"kind": "rank_deficient_design", "feature_index": int(feature_index)}
            )
        return 0.0

    gram = design.T @ design
    beta = np.linalg.solve(gram, design.T @ y)
    resid = y - design @ beta
    resid_var = float(resid @ resid) / (d.n - 4)
    b_int = float(beta[3])
    if resid_var < 1e-12:
        if abs(b_int) > 1e-8:
            if diagnostics is not None:
                diagnostics.append(
                    {"kind": "exact_fit_sentinel", "feature_index": int(feature_index)}
                )
            return F_SENTINEL
        return 0.0
    se_sq = resid_var * float(np.linalg.inv(gram)[3, 3])
    return b_int * b_int / se_sq


def _logistic_loglik(design: np.ndarray, y: np.ndarray, beta: np.ndarray) -> float:
    eta = design @ beta
    return float((y * eta - np.logaddexp(0.0, eta)).sum())


def _newton_logistic(design: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, bool]:
    """Maximum-likelihood logistic coefficients by Newton steps.

    Returns (beta, converged); converged means the score-equation gradient
    dropped below 1e-8 in max norm within 100 iterations. Diverging fits
    (complete separation) stop early and report non-convergence.
    """
    k = design.shape[1]
    beta = np.zeros(k)
    for _ in range(100):
        p = sigmoid(design @ beta)
        grad = design.T @ (y - p)
        if np.abs(grad).max() < 1e-8:
            return beta, True
        weights = p * (1.0 - p)
        hessian = (design * weights[:, None]).T @ design
        try:
            step = np.linalg.solve(hessian, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.solve(hessian + 1e-8 * np.eye(k), grad)
        proposal = beta + step
        if not np.isfinite(proposal).all():
            break
        beta = proposal
    return beta, False


def lr_filter_score(
    d: Dataset, feature_index: int, diagnostics: list[dict] | None = None
) -> float:
    """Likelihood-ratio statistic for the w*x term in a logistic model.

    2*(loglik[1,w,x,w*x] - loglik[1,w,x]), clamped to be non-negative. When
    a fit fails to converge (typically complete separation), coefficients
    are clamped to |beta| <= 15 and the statistic is computed there, with a
    diagnostic recorded.
    """
    _check_regression_inputs(d, feature_index)
    if d.outcome.min() == d.outcome.max():
        raise DataValidationError("likelihood-ratio scorer needs both outcome classes")
    design, y = _interaction_design(d, feature_index)

    logliks = []
    for cols in ((0, 1, 2, 3), (0, 1, 2)):
        sub = design[:, cols]
        beta, converged = _newton_logistic(sub, y)
        # separation inflates coefficients without bound; the gradient can
        # still vanish once probabilities saturate, so bound the fit either way
        if not converged or np.abs(beta).max() > 15.0:
            beta = np.clip(beta, -15.0, 15.0)
            if diagnostics is not None:
                diagnostics.append(
                    {
                        "kind": "logistic_clamped",
                        "feature_index": int(feature_index),
                        "model_columns": len(cols),
                    }
                )
        logliks.append(_logistic_loglik(sub, y, beta))
    return max(0.0, 2.0 * (logliks[0] - logliks[1]))


def rank_all(d: Dataset, method: str, n_bins: int = DEFAULT_BINS) -> FeatureRanking:
    """Score every feature with one filter and return the ranking.

    Feature-level failures never abort the ranking: the feature scores 0
    and the error lands in the ranking diagnostics. Dataset-level
    precondition violations (missing arm, non-binary outcome for the
    regression scorers) raise immediately.
    """
    method = method.lower()
    if method not in FILTER_METHODS:
        raise ValueError(f"unknown filter method '{method}', expected one of {FILTER_METHODS}")
    d.require_both_arms()
    if method in ("f", "lr"):
        _check_regression_inputs(d, 0)
    if method == "lr" and d.outcome.min() == d.outcome.max():
        raise DataValidationError("likelihood-ratio scorer needs both outcome classes")

    scores = np.zeros(d.m)
    diagnostics: list[dict] = []
    for j in range(d.m):
        try:
            if method == "f":
                scores[j] = f_filter_score(d, j, diagnostics)
            elif method == "lr":
                scores[j] = lr_filter_score(d, j, diagnostics)
            else:
                table = bin_feature(d, j, n_bins)
                diagnostics.extend(table.diagnostics)
                scores[j] = bin_table_score(table, method)
        except Exception as exc:  # per-feature fault isolation
            scores[j] = 0.0
            diagnostics.append(
                {
                    "kind": "feature_error",
                    "feature_index": j,
                    "feature_name": d.feature_names[j],
                    "error": str(exc),
                }
            )
    return FeatureRanking.from_scores(scores, method_name=method, diagnostics=diagnostics)
