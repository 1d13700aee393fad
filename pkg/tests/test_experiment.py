import hashlib
import json
import os
from dataclasses import replace

import numpy as np
import pytest

from upliftfs.data import FeatureRanking
from upliftfs.datagen import DgpConfig, generate
from upliftfs.experiment import (
    BASELINE_METHOD,
    MODEL_NAMES,
    RANKING_METHODS,
    ExperimentConfig,
    bench_filters,
    config_hash,
    load_trial_results,
    method_instances,
    rank_features,
    run_experiment,
    run_trial,
    worker_count,
)
from upliftfs.filters import rank_all
from upliftfs.forest import ForestConfig
from upliftfs.uplift_forest import UpliftForestConfig


def small_config(**overrides) -> ExperimentConfig:
    base = dict(
        dgp=DgpConfig(n=700, m1=2, m2=2, m3=3),
        trials=2,
        methods=("kl", "outcome"),
        models=("uplift-forest",),
        m_star=(2,),
        forest=ForestConfig(n_trees=2, min_samples_leaf=30),
        uplift=UpliftForestConfig(n_trees=2, min_samples_leaf=30),
        master_seed=11,
        output_dir="unused",
    )
    base.update(overrides)
    return ExperimentConfig(**base)


def file_digest(path) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


class TestExperimentConfig:
    def test_defaults_are_valid(self):
        cfg = ExperimentConfig()
        assert cfg.trials == 20
        assert cfg.methods == RANKING_METHODS
        assert cfg.models == MODEL_NAMES
        assert cfg.m_star == tuple(range(1, 11))
        assert cfg.bins == (10,)

    def test_sequences_coerced_to_tuples(self):
        cfg = small_config(methods=["kl"], m_star=[1, 2], bins=[5])
        assert cfg.methods == ("kl",)
        assert cfg.m_star == (1, 2)
        assert cfg.bins == (5,)

    @pytest.mark.parametrize(
        "overrides,message",
        [
            (dict(trials=0), "trials"),
            (dict(split_fraction=1.0), "split_fraction"),
            (dict(methods=()), "methods must be non-empty"),
            (dict(methods=("nope",)), "unknown method"),
            (dict(methods=("kl", "kl")), "duplicate entries in methods"),
            (dict(models=()), "models must be non-empty"),
            (dict(models=("nope",)), "unknown model"),
            (dict(m_star=()), "m_star grid"),
            (dict(m_star=(99,)), "outside"),
            (dict(bins=(1,)), "bin counts"),
            (dict(bins=(5, 5)), "duplicate entries in bins"),
            (dict(master_seed=-1), "master_seed"),
            (dict(target_control_rate=0.0), "target_control_rate"),
            (dict(target_ate=1.0), "target_ate"),
        ],
    )
    def test_validation(self, overrides, message):
        with pytest.raises(ValueError, match=message):
            small_config(**overrides)

    def test_dict_roundtrip(self):
        cfg = small_config(bins=(2, 10))
        assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg

    def test_from_dict_rejects_unknown_keys(self):
        with pytest.raises(ValueError, match="unknown config keys"):
            ExperimentConfig.from_dict({"trails": 3})

    def test_hash_ignores_output_dir_only(self):
        a = small_config(output_dir="x")
        b = small_config(output_dir="y")
        c = small_config(master_seed=12)
        assert config_hash(a) == config_hash(b)
        assert config_hash(a) != config_hash(c)


class TestMethodInstances:
    def test_default_bins_keep_plain_labels(self):
        cfg = small_config(methods=("kl", "f", "outcome"))
        assert [i.label for i in method_instances(cfg)] == ["kl", "f", "outcome"]

    def test_bin_sweep_expands_bin_filters_only(self):
        cfg = small_config(methods=("kl", "f"), bins=(2, 10))
        labels = [i.label for i in method_instances(cfg)]
        assert labels == ["kl_K2", "kl", "f"]
        by_label = {i.label: i for i in method_instances(cfg)}
        assert by_label["kl_K2"].n_bins == 2
        assert by_label["kl"].n_bins == 10
        assert by_label["f"].n_bins is None

    def test_labels_unique(self):
        cfg = small_config(methods=("kl", "ed", "chi"), bins=(2, 5, 10, 20, 50))
        labels = [i.label for i in method_instances(cfg)]
        assert len(labels) == len(set(labels)) == 15


@pytest.fixture(scope="module")
def train():
    return generate(DgpConfig(n=600, m1=2, m2=2, m3=2, seed=3)).data


class TestRankFeatures:
    @pytest.mark.parametrize("method", RANKING_METHODS)
    def test_every_method_ranks(self, train, method):
        ranking = rank_features(
            train,
            method,
            forest_cfg=ForestConfig(n_trees=2, min_samples_leaf=30),
            uplift_cfg=UpliftForestConfig(n_trees=2, min_samples_leaf=30),
        )
        assert isinstance(ranking, FeatureRanking)
        assert ranking.scores.shape == (train.m,)
        assert sorted(ranking.order.tolist()) == list(range(train.m))

    def test_filter_path_matches_rank_all(self, train):
        direct = rank_all(train, "ed", 10)
        via = rank_features(train, "ed", n_bins=10)
        assert np.array_equal(direct.scores, via.scores)

    def test_unknown_method_raises(self, train):
        with pytest.raises(ValueError, match="unknown method"):
            rank_features(train, "mystery")


class TestRunTrial:
    def test_cell_inventory(self):
        cfg = small_config(methods=("kl", "outcome"), m_star=(1, 2), models=MODEL_NAMES)
        results = run_trial(cfg, 0)
        # 2 methods x 2 m* x 2 models + baseline x 2 models.
        assert len(results) == 10
        labels = {(r.method_name, r.model_name, r.top_m_star) for r in results}
        assert (BASELINE_METHOD, "two-model", cfg.dgp.m) in labels
        assert all(r.error is None for r in results)

    def test_deterministic_per_index(self):
        cfg = small_config()
        a = run_trial(cfg, 1)
        b = run_trial(cfg, 1)
        assert [(r.rmse, r.auuc, r.selected_features) for r in a] == [
            (r.rmse, r.auuc, r.selected_features) for r in b
        ]

    def test_trials_differ(self):
        cfg = small_config()
        a = run_trial(cfg, 0)
        b = run_trial(cfg, 1)
        assert [r.rmse for r in a] != [r.rmse for r in b]

    def test_baseline_uses_all_features_with_full_recall(self):
        cfg = small_config()
        baseline = [r for r in run_trial(cfg, 0) if r.method_name == BASELINE_METHOD]
        assert baseline
        for r in baseline:
            assert r.top_m_star == cfg.dgp.m
            assert len(r.selected_features) == cfg.dgp.m
            assert r.recall_overall == 1.0

    def test_auuc_can_be_disabled(self):
        cfg = small_config(compute_auuc=False)
        assert all(r.auuc is None for r in run_trial(cfg, 0))

    def test_negative_index_rejected(self):
        with pytest.raises(ValueError, match="non-negative"):
            run_trial(small_config(), -1)

    def test_ranking_failure_confined_to_its_method(self, monkeypatch):
        import upliftfs.experiment as exp

        real = exp.rank_features

        def broken(d, method, **kw):
            if method == "outcome":
                raise RuntimeError("synthetic ranking fault")
            return real(d, method, **kw)

        monkeypatch.setattr(exp, "rank_features", broken)
        results = run_trial(small_config(), 0)
        outcome_cells = [r for r in results if r.method_name == "outcome"]
        other_cells = [r for r in results if r.method_name != "outcome"]
        assert outcome_cells and all("synthetic ranking fault" in r.error for r in outcome_cells)
        assert all(r.error is None for r in other_cells)


class TestRunExperiment:
    def test_smoke_writes_reports_and_aggregates(self, tmp_path):
        cfg = small_config(output_dir=str(tmp_path / "run"))
        report = run_experiment(cfg)
        assert (tmp_path / "run" / "report.csv").exists()
        assert (tmp_path / "run" / "report.json").exists()
        assert (tmp_path / "run" / "manifest.json").exists()
        row = report.cell("kl", "uplift-forest", 2, "rmse")
        assert row.trials == cfg.trials
        # 3 cells (kl, outcome, baseline) x 5 metrics each.
        assert len(report.rows) == 15

    def test_byte_identical_across_worker_counts(self, tmp_path, monkeypatch):
        digests = {}
        for workers in ("1", "2"):
            monkeypatch.setenv("UPLIFTFS_THREADS", workers)
            out = tmp_path / f"run_{workers}"
            run_experiment(small_config(output_dir=str(out)))
            digests[workers] = (
                file_digest(out / "report.csv"),
                file_digest(out / "report.json"),
            )
        assert digests["1"] == digests["2"]

    def test_resume_skips_completed_trials(self, tmp_path, monkeypatch):
        monkeypatch.setenv("UPLIFTFS_THREADS", "1")
        out = tmp_path / "run"
        cfg = small_config(output_dir=str(out))
        run_experiment(cfg)
        first = file_digest(out / "report.csv")
        kept = out / "trial_00000.json"
        stamp = os.path.getmtime(kept)
        (out / "trial_00001.json").unlink()
        run_experiment(cfg)
        assert os.path.getmtime(kept) == stamp  # untouched on resume
        assert file_digest(out / "report.csv") == first

    def test_rejects_foreign_output_dir(self, tmp_path):
        out = str(tmp_path / "run")
        run_experiment(small_config(output_dir=out))
        with pytest.raises(ValueError, match="different experiment"):
            run_experiment(small_config(output_dir=out, master_seed=99))

    def test_load_trial_results(self, tmp_path):
        cfg = small_config(output_dir=str(tmp_path / "run"))
        run_experiment(cfg)
        results = load_trial_results(cfg.output_dir)
        assert len(results) == cfg.trials * 3  # 3 cells per trial
        assert sorted({r.trial_id for r in results}) == [0, 1]


class TestWorkerCount:
    def test_env_caps(self, monkeypatch):
        monkeypatch.setenv("UPLIFTFS_THREADS", "3")
        assert worker_count(10) == 3
        assert worker_count(2) == 2

    def test_env_unset_uses_cpu_count(self, monkeypatch):
        monkeypatch.delenv("UPLIFTFS_THREADS", raising=False)
        assert worker_count(1) == 1
        assert worker_count(10_000) == (os.cpu_count() or 1)

    def test_invalid_env_rejected(self, monkeypatch):
        monkeypatch.setenv("UPLIFTFS_THREADS", "0")
        with pytest.raises(ValueError, match="UPLIFTFS_THREADS"):
            worker_count(4)


class TestBenchFilters:
    def test_rows_cover_methods_at_two_sizes(self):
        cfg = small_config(dgp=DgpConfig(n=400, m1=2, m2=2, m3=2))
        rows = bench_filters(cfg, repeats=1)
        assert len(rows) == 10  # 5 filters x {n, 2n}
        assert {r.n for r in rows} == {400, 800}
        assert all(r.seconds > 0 for r in rows)

    def test_repeats_validated(self):
        with pytest.raises(ValueError, match="repeats"):
            bench_filters(small_config(), repeats=0)
