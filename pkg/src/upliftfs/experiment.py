"""Seeded Monte Carlo experiment harness.

One trial = generate a calibrated synthetic dataset, split it, rank
features on the training half with every configured method, then fit each
configured uplift model on each top-m* feature subset and score it on the
test half. Trials are independent, seeded from (master seed, trial index),
and safe to run in any parallel executor: results land in per-trial JSON
files, completed trials are reused on resume, and the aggregated report
bytes depend only on the config and master seed.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
import zlib
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .data import Dataset, FeatureRanking, derived_rng, split_indices
from .datagen import DgpConfig, calibrate_intercepts, generate
from .filters import DEFAULT_BINS, FILTER_METHODS, rank_all
from .forest import ForestConfig
from .forest import shrink_to_features as shrink_forest
from .meta import fit_two_model, outcome_embedded_importance, predict_ite, two_model_embedded_importance
from .metrics import (
    ExperimentReport,
    TrialResult,
    aggregate,
    auuc,
    feature_recall_top_k,
    rmse_ite,
)
from .uplift_forest import UpliftForestConfig
from .uplift_forest import fit as fit_uplift_forest
from .uplift_forest import shrink_to_features as shrink_uplift

BIN_FILTER_METHODS = ("kl", "ed", "chi")
EMBEDDED_METHODS = ("uplift-forest", "two-model", "outcome")
RANKING_METHODS = ("f", "lr") + BIN_FILTER_METHODS + EMBEDDED_METHODS
MODEL_NAMES = ("two-model", "uplift-forest")
BASELINE_METHOD = "all_features"

ENV_THREADS = "UPLIFTFS_THREADS"

# Seed-derivation tags: every random consumer in a trial gets its own
# (master_seed, trial, tag, ...) stream.
_DGP_TAG = 0
_SPLIT_TAG = 1
_RANK_TAG = 2
_MODEL_TAG = 3


def _package_version() -> str:
    from . import __version__

    return __version__


def _derived_seed(*keys: int) -> int:
    return int(derived_rng(*keys).integers(2**63))


def _label_key(label: str) -> int:
    """Stable integer handle for a method/model label, for seed derivation."""
    return zlib.crc32(label.encode("utf-8"))


@dataclass(frozen=True)
class ExperimentConfig:
    """Full description of one experiment run; hashable to a manifest key."""

    dgp: DgpConfig = DgpConfig()
    trials: int = 20
    split_fraction: float = 0.5
    methods: tuple[str, ...] = RANKING_METHODS
    models: tuple[str, ...] = MODEL_NAMES
    m_star: tuple[int, ...] = tuple(range(1, 11))
    bins: tuple[int, ...] = (DEFAULT_BINS,)
    forest: ForestConfig = ForestConfig()
    uplift: UpliftForestConfig = UpliftForestConfig()
    master_seed: int = 0
    output_dir: str = "runs/experiment"
    target_control_rate: float = 0.2
    target_ate: float = 0.1
    include_baseline: bool = True
    compute_auuc: bool = True

    def __post_init__(self) -> None:
        for name in ("methods", "models", "m_star", "bins"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if not 0.0 < self.split_fraction < 1.0:
            raise ValueError("split_fraction must be strictly between 0 and 1")
        if not self.methods:
            raise ValueError("methods must be non-empty")
        for method in self.methods:
            if method not in RANKING_METHODS:
                raise ValueError(f"unknown method '{method}', expected one of {RANKING_METHODS}")
        if len(set(self.methods)) != len(self.methods):
            raise ValueError("duplicate entries in methods")
        if not self.models:
            raise ValueError("models must be non-empty")
        for model in self.models:
            if model not in MODEL_NAMES:
                raise ValueError(f"unknown model '{model}', expected one of {MODEL_NAMES}")
        if len(set(self.models)) != len(self.models):
            raise ValueError("duplicate entries in models")
        if not self.m_star:
            raise ValueError("m_star grid must be non-empty")
        for k in self.m_star:
            if not 1 <= k <= self.dgp.m:
                raise ValueError(f"m_star={k} outside 1..{self.dgp.m}")
        if len(set(self.m_star)) != len(self.m_star):
            raise ValueError("duplicate entries in m_star")
        if not self.bins:
            raise ValueError("bins grid must be non-empty")
        for k in self.bins:
            if k < 2:
                raise ValueError("bin counts must be at least 2")
        if len(set(self.bins)) != len(self.bins):
            raise ValueError("duplicate entries in bins")
        if self.master_seed < 0:
            raise ValueError("master_seed must be non-negative")
        if not 0.0 < self.target_control_rate < 1.0:
            raise ValueError("target_control_rate must lie strictly inside (0, 1)")
        if not 0.0 <= self.target_ate < 1.0:
            raise ValueError("target_ate must lie in [0, 1)")

    def to_dict(self) -> dict:
        return {
            "dgp": asdict(self.dgp),
            "trials": self.trials,
            "split_fraction": self.split_fraction,
            "methods": list(self.methods),
            "models": list(self.models),
            "m_star": list(self.m_star),
            "bins": list(self.bins),
            "forest": asdict(self.forest),
            "uplift_forest": asdict(self.uplift),
            "master_seed": self.master_seed,
            "output_dir": self.output_dir,
            "target_control_rate": self.target_control_rate,
            "target_ate": self.target_ate,
            "include_baseline": self.include_baseline,
            "compute_auuc": self.compute_auuc,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "ExperimentConfig":
        known = set(cls().to_dict())
        unknown = set(payload) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kwargs = dict(payload)
        if "dgp" in kwargs:
            kwargs["dgp"] = DgpConfig(**kwargs["dgp"])
        if "forest" in kwargs:
            kwargs["forest"] = ForestConfig(**kwargs["forest"])
        if "uplift_forest" in kwargs:
            kwargs["uplift"] = UpliftForestConfig(**kwargs.pop("uplift_forest"))
        return cls(**kwargs)


def config_hash(cfg: ExperimentConfig) -> str:
    """Identity of the science in a run; the output path is excluded so a
    result tree can be moved or copied without invalidating resume."""
    payload = cfg.to_dict()
    payload.pop("output_dir")
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class MethodInstance:
    """One ranking column of the report: a method plus its bin count."""

    label: str
    method: str
    n_bins: int | None


def method_instances(cfg: ExperimentConfig) -> tuple[MethodInstance, ...]:
    """Expand bin filters over the bin grid; other methods pass through.

    A bin filter at the default bin count keeps its plain token, so sweep
    runs remain comparable with default runs cell-for-cell.
    """
    out = []
    for method in cfg.methods:
        if method in BIN_FILTER_METHODS:
            for k in cfg.bins:
                label = method if k == DEFAULT_BINS else f"{method}_K{k}"
                out.append(MethodInstance(label, method, k))
        else:
            out.append(MethodInstance(method, method, None))
    return tuple(out)


def rank_features(
    d: Dataset,
    method: str,
    n_bins: int = DEFAULT_BINS,
    forest_cfg: ForestConfig = ForestConfig(),
    uplift_cfg: UpliftForestConfig = UpliftForestConfig(),
) -> FeatureRanking:
    """Rank features with any supported method (filters or embedded)."""
    if method in FILTER_METHODS:
        return rank_all(d, method, n_bins)
    if method == "uplift-forest":
        forest = fit_uplift_forest(d, uplift_cfg)
        return FeatureRanking.from_scores(forest.embedded_importance(), method)
    if method == "two-model":
        learner = fit_two_model(d, forest_cfg)
        return FeatureRanking.from_scores(two_model_embedded_importance(learner), method)
    if method == "outcome":
        return FeatureRanking.from_scores(outcome_embedded_importance(d, forest_cfg), method)
    raise ValueError(f"unknown method '{method}', expected one of {RANKING_METHODS}")


def _evaluate_cell(
    cfg: ExperimentConfig,
    trial_index: int,
    label: str,
    ranking: FeatureRanking,
    m_star: int,
    model: str,
    train: Dataset,
    test: Dataset,
    true_ite_test: np.ndarray,
    roles: list[str],
    patterns: list[str],
) -> TrialResult:
    selected = ranking.top(m_star)
    recall_overall, by_pattern = feature_recall_top_k(ranking, roles, patterns, m_star)
    seed = _derived_seed(
        cfg.master_seed, trial_index, _MODEL_TAG, _label_key(label), m_star, _label_key(model)
    )
    train_sel = train.select_features(selected)
    test_sel = test.select_features(selected)
    if model == "two-model":
        fc = shrink_forest(replace(cfg.forest, seed=seed), m_star)
        pred = predict_ite(fit_two_model(train_sel, fc), test_sel.features)
    else:
        uc = shrink_uplift(replace(cfg.uplift, seed=seed), m_star)
        pred = fit_uplift_forest(train_sel, uc).predict_uplift(test_sel.features)
    return TrialResult(
        trial_id=trial_index,
        method_name=label,
        model_name=model,
        top_m_star=m_star,
        rmse=rmse_ite(pred, true_ite_test),
        recall_overall=recall_overall,
        recall_by_pattern=by_pattern,
        auuc=auuc(pred, test.treatment, test.outcome) if cfg.compute_auuc else None,
        selected_features=tuple(train.feature_names[j] for j in selected),
    )


def run_trial(cfg: ExperimentConfig, trial_index: int) -> list[TrialResult]:
    """Run one full trial; cell failures are recorded, never raised."""
    if trial_index < 0:
        raise ValueError("trial_index must be non-negative")
    dgp_cfg = replace(cfg.dgp, seed=_derived_seed(cfg.master_seed, trial_index, _DGP_TAG))
    a1, a2 = calibrate_intercepts(cfg.target_control_rate, cfg.target_ate, dgp_cfg)
    syn = generate(replace(dgp_cfg, a1=a1, a2=a2))
    split_seed = _derived_seed(cfg.master_seed, trial_index, _SPLIT_TAG)
    train_idx, test_idx = split_indices(syn.data.n, cfg.split_fraction, split_seed)
    train = syn.data.subset(train_idx)
    test = syn.data.subset(test_idx)
    true_ite_test = syn.true_ite[test_idx]

    instances = method_instances(cfg)
    rankings: dict[str, FeatureRanking | Exception] = {}
    for inst in instances:
        seed = _derived_seed(cfg.master_seed, trial_index, _RANK_TAG, _label_key(inst.label))
        try:
            rankings[inst.label] = rank_features(
                train,
                inst.method,
                n_bins=inst.n_bins if inst.n_bins is not None else DEFAULT_BINS,
                forest_cfg=replace(cfg.forest, seed=seed),
                uplift_cfg=replace(cfg.uplift, seed=seed),
            )
        except Exception as exc:  # a broken ranking fails only its own cells
            rankings[inst.label] = exc

    cells: list[tuple[str, FeatureRanking | Exception, int]] = [
        (inst.label, rankings[inst.label], m_star)
        for inst in instances
        for m_star in cfg.m_star
    ]
    if cfg.include_baseline:
        identity = FeatureRanking.from_scores(np.zeros(syn.data.m), BASELINE_METHOD)
        cells.append((BASELINE_METHOD, identity, syn.data.m))

    results: list[TrialResult] = []
    for label, ranking, m_star in cells:
        for model in cfg.models:
            try:
                if isinstance(ranking, Exception):
                    raise ranking
                results.append(
                    _evaluate_cell(
                        cfg,
                        trial_index,
                        label,
                        ranking,
                        m_star,
                        model,
                        train,
                        test,
                        true_ite_test,
                        syn.roles,
                        syn.patterns,
                    )
                )
            except Exception as exc:  # isolate cell failures
                results.append(
                    TrialResult.failed(trial_index, label, model, m_star, f"{type(exc).__name__}: {exc}")
                )
    return results


def _result_to_dict(r: TrialResult) -> dict:
    return {
        "trial_id": r.trial_id,
        "method": r.method_name,
        "model": r.model_name,
        "m_star": r.top_m_star,
        "rmse": None if r.error is not None else float(r.rmse),
        "recall_overall": None if r.error is not None else float(r.recall_overall),
        "recall_by_pattern": {k: float(v) for k, v in sorted(r.recall_by_pattern.items())},
        "auuc": None if r.auuc is None else float(r.auuc),
        "selected_features": list(r.selected_features),
        "error": r.error,
    }


def _result_from_dict(payload: dict) -> TrialResult:
    error = payload.get("error")
    nan = float("nan")
    return TrialResult(
        trial_id=payload["trial_id"],
        method_name=payload["method"],
        model_name=payload["model"],
        top_m_star=payload["m_star"],
        rmse=nan if payload["rmse"] is None else payload["rmse"],
        recall_overall=nan if payload["recall_overall"] is None else payload["recall_overall"],
        recall_by_pattern=dict(payload["recall_by_pattern"]),
        auuc=payload["auuc"],
        selected_features=tuple(payload["selected_features"]),
        error=error,
    )


def _trial_filename(trial_index: int) -> str:
    return f"trial_{trial_index:05d}.json"


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _write_trial(out: Path, digest: str, trial_index: int, results: list[TrialResult]) -> None:
    payload = {
        "format_version": 1,
        "config_hash": digest,
        "trial": trial_index,
        "results": [_result_to_dict(r) for r in results],
    }
    _atomic_write(out / _trial_filename(trial_index), json.dumps(payload, sort_keys=True) + "\n")


def _load_trial(out: Path, digest: str, trial_index: int) -> list[TrialResult]:
    payload = json.loads((out / _trial_filename(trial_index)).read_text(encoding="utf-8"))
    if payload.get("config_hash") != digest or payload.get("trial") != trial_index:
        raise ValueError(f"trial file {_trial_filename(trial_index)} does not match this experiment")
    return [_result_from_dict(item) for item in payload["results"]]


def load_trial_results(output_dir: str) -> list[TrialResult]:
    """Read back every completed trial of a finished or partial run."""
    out = Path(output_dir)
    manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    digest = manifest["config_hash"]
    results: list[TrialResult] = []
    for i in range(manifest["trials"]):
        if (out / _trial_filename(i)).exists():
            results.extend(_load_trial(out, digest, i))
    return results


def worker_count(n_jobs: int) -> int:
    """Parallelism cap: UPLIFTFS_THREADS when set, else the CPU count."""
    env = os.environ.get(ENV_THREADS)
    cap = int(env) if env not in (None, "") else (os.cpu_count() or 1)
    if cap < 1:
        raise ValueError(f"{ENV_THREADS} must be a positive integer")
    return max(1, min(cap, n_jobs))


def run_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    """Run (or resume) all trials and write the aggregated report.

    The manifest pins the config hash; an output directory can only ever
    hold one experiment. Completed trial files are trusted and skipped, so
    interrupting and rerunning wastes no work. Report bytes are identical
    at any worker count because trial outputs are deterministic and
    aggregation reads them in trial order.
    """
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    digest = config_hash(cfg)
    manifest_path = out / "manifest.json"
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        if manifest.get("config_hash") != digest:
            raise ValueError(
                "output directory already holds a different experiment; use a fresh directory"
            )
    else:
        manifest = {
            "format_version": 1,
            "config_hash": digest,
            "package_version": _package_version(),
            "trials": cfg.trials,
            "config": cfg.to_dict(),
        }
        _atomic_write(manifest_path, json.dumps(manifest, sort_keys=True, indent=2) + "\n")

    pending = [i for i in range(cfg.trials) if not (out / _trial_filename(i)).exists()]
    if pending:
        workers = worker_count(len(pending))
        if workers <= 1:
            for i in pending:
                _write_trial(out, digest, i, run_trial(cfg, i))
        else:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                futures = {pool.submit(run_trial, cfg, i): i for i in pending}
                for fut in as_completed(futures):
                    _write_trial(out, digest, futures[fut], fut.result())

    results: list[TrialResult] = []
    for i in range(cfg.trials):
        results.extend(_load_trial(out, digest, i))
    report = aggregate(results)
    _atomic_write(out / "report.csv", report.to_csv_text())
    _atomic_write(out / "report.json", report.to_json_text())
    return report


@dataclass(frozen=True)
class BenchRow:
    method: str
    n: int
    seconds: float


def bench_filters(cfg: ExperimentConfig, repeats: int = 3) -> list[BenchRow]:
    """Time every filter at the configured size and at twice that size.

    The doubled size makes the scaling ratio time(2n)/time(n) directly
    readable from the table. Each timing is the best of `repeats` runs.
    """
    if repeats < 1:
        raise ValueError("repeats must be at least 1")
    n_bins = cfg.bins[0]
    rows: list[BenchRow] = []
    for size in (cfg.dgp.n, 2 * cfg.dgp.n):
        dgp = replace(cfg.dgp, n=size, seed=_derived_seed(cfg.master_seed, size, _DGP_TAG))
        d = generate(dgp).data
        for method in FILTER_METHODS:
            best = float("inf")
            for _ in range(repeats):
                start = time.perf_counter()
                rank_all(d, method, n_bins)
                best = min(best, time.perf_counter() - start)
            rows.append(BenchRow(method, size, best))
    return rows
