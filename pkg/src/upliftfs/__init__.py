"""Feature selection for uplift modeling on randomized-experiment data.

Filter scores (interaction F-test, likelihood-ratio test, binned divergence
gains) and embedded forest importances rank features by how much they modify
the treatment effect; a synthetic generator with counterfactual ground truth
and an experiment harness measure how well each method recovers the features
that matter.
"""

from .data import (
    Dataset,
    DataValidationError,
    FeatureRanking,
    SplitPair,
    derived_rng,
    load_csv,
    split_indices,
    train_test_split,
)
from .datagen import (
    DgpConfig,
    SyntheticDataset,
    calibrate_intercepts,
    generate,
    transform_feature,
)
from .experiment import (
    BenchRow,
    ExperimentConfig,
    MethodInstance,
    bench_filters,
    config_hash,
    load_trial_results,
    method_instances,
    rank_features,
    run_experiment,
    run_trial,
)
from .filters import (
    DEFAULT_BINS,
    DIVERGENCE_KINDS,
    FILTER_METHODS,
    BinTable,
    bin_feature,
    bin_filter_score,
    divergence,
    f_filter_score,
    lr_filter_score,
    rank_all,
    smoothed_proportions,
)
from .forest import ForestConfig, StandardForest, gini
from .forest import fit as fit_forest
from .meta import (
    TwoModelLearner,
    fit_two_model,
    outcome_embedded_importance,
    predict_ite,
    two_model_embedded_importance,
)
from .metrics import (
    ExperimentReport,
    ReportRow,
    TrialResult,
    aggregate,
    auuc,
    confidence_interval,
    feature_recall_top_k,
    rmse_ite,
)
from .uplift_forest import UpliftForest, UpliftForestConfig, split_gain
from .uplift_forest import fit as fit_uplift_forest

__version__ = "0.1.0"

__all__ = [
    "BenchRow",
    "BinTable",
    "DEFAULT_BINS",
    "DIVERGENCE_KINDS",
    "Dataset",
    "DataValidationError",
    "DgpConfig",
    "ExperimentConfig",
    "ExperimentReport",
    "FILTER_METHODS",
    "FeatureRanking",
    "ForestConfig",
    "MethodInstance",
    "ReportRow",
    "SplitPair",
    "StandardForest",
    "SyntheticDataset",
    "TrialResult",
    "TwoModelLearner",
    "UpliftForest",
    "UpliftForestConfig",
    "aggregate",
    "auuc",
    "bench_filters",
    "bin_feature",
    "bin_filter_score",
    "calibrate_intercepts",
    "confidence_interval",
    "config_hash",
    "derived_rng",
    "divergence",
    "f_filter_score",
    "feature_recall_top_k",
    "fit_forest",
    "fit_two_model",
    "fit_uplift_forest",
    "generate",
    "gini",
    "load_csv",
    "load_trial_results",
    "lr_filter_score",
    "method_instances",
    "outcome_embedded_importance",
    "predict_ite",
    "rank_all",
    "rank_features",
    "rmse_ite",
    "run_experiment",
    "run_trial",
    "smoothed_proportions",
    "split_gain",
    "split_indices",
    "train_test_split",
    "transform_feature",
    "two_model_embedded_importance",
    "__version__",
]
