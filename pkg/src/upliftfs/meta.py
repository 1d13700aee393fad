"""Two-model uplift estimator and the outcome-only benchmark importance.

The two-model approach (T-learner) fits one outcome classifier per
treatment arm and scores uplift as the difference between their class-1
probabilities. Its embedded feature importance is the renormalized sum of
the two sub-models' impurity importances.

The outcome-only benchmark ranks features by a single forest fit on all
rows. It sees outcome-predictive signal but is blind to treatment-effect
heterogeneity, which is exactly why it serves as the weak baseline.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import Dataset, derived_rng
from .forest import ForestConfig, StandardForest
from .forest import fit as fit_forest

# Arm seeds live on a (seed, domain, arm) stream so they can never collide
# with the per-tree (seed, t) streams used inside each forest fit.
_ARM_SEED_DOMAIN = 2
_CONTROL_ARM = 0
_TREAT_ARM = 1

_TREATMENT_COLUMN = "__treatment__"


def _arm_config(cfg: ForestConfig, arm: int) -> ForestConfig:
    seed = int(derived_rng(cfg.seed, _ARM_SEED_DOMAIN, arm).integers(2**63))
    return replace(cfg, seed=seed)


@dataclass(frozen=True)
class TwoModelLearner:
    """Pair of arm-specific outcome forests sharing one hyperparameter set."""

    model_treat: StandardForest
    model_control: StandardForest
    config: ForestConfig

    def to_dict(self) -> dict:
        # Arm payloads carry derived seeds, so the shared config (with the
        # original seed) must travel separately.
        return {
            "format_version": 1,
            "model": "two_model",
            "config": {
                "n_trees": self.config.n_trees,
                "max_depth": self.config.max_depth,
                "min_samples_leaf": self.config.min_samples_leaf,
                "max_features_per_split": self.config.max_features_per_split,
                "seed": self.config.seed,
                "bootstrap": self.config.bootstrap,
            },
            "treat": self.model_treat.to_dict(),
            "control": self.model_control.to_dict(),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "TwoModelLearner":
        if payload.get("format_version") != 1 or payload.get("model") != "two_model":
            raise ValueError("not a version-1 two_model payload")
        return cls(
            StandardForest.from_dict(payload["treat"]),
            StandardForest.from_dict(payload["control"]),
            ForestConfig(**payload["config"]),
        )


def fit_two_model(d: Dataset, cfg: ForestConfig) -> TwoModelLearner:
    """Fit one outcome forest per arm on the arm's own rows.

    Sub-model seeds derive from (cfg.seed, arm), so the two fits are
    independent and the pair is reproducible from the single config seed.
    """
    d.require_both_arms()
    treat_rows = np.flatnonzero(d.treatment == 1)
    control_rows = np.flatnonzero(d.treatment == 0)
    model_treat = fit_forest(d.subset(treat_rows), _arm_config(cfg, _TREAT_ARM))
    model_control = fit_forest(d.subset(control_rows), _arm_config(cfg, _CONTROL_ARM))
    return TwoModelLearner(model_treat, model_control, cfg)


def predict_ite(learner: TwoModelLearner, x: np.ndarray) -> float | np.ndarray:
    """Difference of arm-wise class-1 probabilities, in [-1, 1].

    Accepts a single feature vector (returns a float) or a row matrix
    (returns a vector).
    """
    p_treat = learner.model_treat.predict_proba(x)
    p_control = learner.model_control.predict_proba(x)
    if p_treat.ndim == 1:
        return float(p_treat[1] - p_control[1])
    return p_treat[:, 1] - p_control[:, 1]


def two_model_embedded_importance(learner: TwoModelLearner) -> np.ndarray:
    """Sum of the two sub-models' normalized importances, renormalized.

    Only ranks are consumed downstream, so the normalization constant is
    cosmetic; it keeps the vector comparable with other importance outputs.
    """
    combined = learner.model_treat.mdi_importance() + learner.model_control.mdi_importance()
    total = combined.sum()
    return combined / total if total > 0 else combined


def outcome_embedded_importance(
    d: Dataset, cfg: ForestConfig, include_treatment: bool = False
) -> np.ndarray:
    """Importance of a single outcome forest fit on all rows.

    The treatment indicator is excluded by default: the benchmark asks how
    features rank when treatment structure is ignored entirely. With
    `include_treatment=True` the indicator joins the design as one more
    column and the returned vector still covers only the real features,
    renormalized (all-zero when the indicator absorbed every split).
    """
    if not include_treatment:
        return fit_forest(d, cfg).mdi_importance()
    augmented = Dataset(
        features=np.column_stack([d.features, d.treatment.astype(np.float64)]),
        feature_names=list(d.feature_names) + [_TREATMENT_COLUMN],
        treatment=d.treatment,
        outcome=d.outcome,
    )
    importance = fit_forest(augmented, cfg).mdi_importance()[: d.m]
    total = importance.sum()
    return importance / total if total > 0 else importance
