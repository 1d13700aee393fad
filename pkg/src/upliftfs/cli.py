"""Command-line entry points.

Subcommands cover the full workflow: `generate` synthetic data, `select`
features with any ranking method, `train` an uplift model, `evaluate` a
trained model, `experiment` for the seeded multi-trial protocol, and
`bench` for filter timing. Failures exit nonzero with a one-line error
JSON on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from .data import load_csv
from .datagen import DgpConfig, calibrate_intercepts, generate
from .experiment import (
    MODEL_NAMES,
    RANKING_METHODS,
    ExperimentConfig,
    bench_filters,
    rank_features,
    run_experiment,
)
from .filters import DEFAULT_BINS, DIVERGENCE_KINDS
from .forest import ForestConfig
from .meta import TwoModelLearner, fit_two_model, predict_ite
from .metrics import auuc, rmse_ite
from .uplift_forest import UpliftForest, UpliftForestConfig
from .uplift_forest import fit as fit_uplift_forest


def _jsonable(value):
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"not JSON serializable: {type(value).__name__}")


def _write_json(path: str | None, payload: dict) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True, default=_jsonable) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _add_forest_flags(p: argparse.ArgumentParser) -> None:
    fc, uc = ForestConfig(), UpliftForestConfig()
    p.add_argument("--trees", type=int, default=fc.n_trees, help="trees per forest")
    p.add_argument("--max-depth", type=int, default=fc.max_depth)
    p.add_argument("--min-leaf", type=int, default=fc.min_samples_leaf)
    p.add_argument("--max-features", type=int, default=fc.max_features_per_split)
    p.add_argument("--kind", choices=DIVERGENCE_KINDS, default=uc.kind, help="uplift split divergence")
    p.add_argument("--seed", type=int, default=0)


def _forest_configs(args) -> tuple[ForestConfig, UpliftForestConfig]:
    fc = ForestConfig(
        n_trees=args.trees,
        max_depth=args.max_depth,
        min_samples_leaf=args.min_leaf,
        max_features_per_split=args.max_features,
        seed=args.seed,
    )
    uc = UpliftForestConfig(
        kind=args.kind,
        n_trees=args.trees,
        max_depth=args.max_depth,
        min_samples_leaf=args.min_leaf,
        max_features_per_split=args.max_features,
        seed=args.seed,
    )
    return fc, uc


def cmd_generate(args) -> None:
    cfg = DgpConfig(
        n=args.n,
        m1=args.m1,
        m2=args.m2,
        m3=args.m3,
        a1=args.a1,
        a2=args.a2,
        noise_sd=args.noise_sd,
        seed=args.seed,
    )
    if not args.no_calibrate:
        a1, a2 = calibrate_intercepts(args.control_rate, args.ate, cfg)
        cfg = replace(cfg, a1=a1, a2=a2)
    syn = generate(cfg)
    d = syn.data
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(d.feature_names) + ["w", "y"])
        for i in range(d.n):
            writer.writerow(
                [repr(float(v)) for v in d.features[i]] + [int(d.treatment[i]), int(d.outcome[i])]
            )
    if args.truth_out:
        _write_json(
            args.truth_out,
            {
                "format_version": 1,
                "config": asdict(cfg),
                "true_ite": [float(v) for v in syn.true_ite],
                "p_treat": [float(v) for v in syn.p_treat],
                "p_control": [float(v) for v in syn.p_control],
                "roles": syn.roles,
                "patterns": syn.patterns,
            },
        )
    print(f"wrote {args.out} ({d.n} rows, {d.m} features)")


def cmd_select(args) -> None:
    d = load_csv(args.data, args.treatment_col, args.outcome_col)
    fc, uc = _forest_configs(args)
    ranking = rank_features(d, args.method, n_bins=args.bins, forest_cfg=fc, uplift_cfg=uc)
    k = args.top if args.top is not None else d.m
    top = ranking.top(k)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rank", "feature_index", "feature_name", "score"])
        for rank, j in enumerate(top, start=1):
            writer.writerow([rank, j, d.feature_names[j], repr(float(ranking.scores[j]))])
    if args.diagnostics_out:
        _write_json(
            args.diagnostics_out,
            {
                "format_version": 1,
                "method": args.method,
                "n_bins": args.bins,
                "diagnostics": ranking.diagnostics,
            },
        )
    print(f"wrote {args.out} (top {k} of {d.m} features, method {args.method})")


def cmd_train(args) -> None:
    d = load_csv(args.data, args.treatment_col, args.outcome_col)
    fc, uc = _forest_configs(args)
    if args.model == "two-model":
        payload = fit_two_model(d, fc).to_dict()
    else:
        payload = fit_uplift_forest(d, uc).to_dict()
    _write_json(args.out, payload)
    print(f"wrote {args.out} (model {args.model}, {d.n} rows)")


def _predict_from_payload(payload: dict, features: np.ndarray) -> np.ndarray:
    tag = payload.get("model")
    if tag == "two_model":
        return predict_ite(TwoModelLearner.from_dict(payload), features)
    if tag == "uplift_forest":
        return UpliftForest.from_dict(payload).predict_uplift(features)
    raise ValueError(f"unrecognized model payload '{tag}'")


def cmd_evaluate(args) -> None:
    d = load_csv(args.data, args.treatment_col, args.outcome_col)
    payload = json.loads(Path(args.model_file).read_text(encoding="utf-8"))
    pred = _predict_from_payload(payload, d.features)
    metrics: dict = {
        "format_version": 1,
        "n": d.n,
        "model": payload.get("model"),
        "auuc": float(auuc(pred, d.treatment, d.outcome)),
        "mean_predicted_uplift": float(np.mean(pred)),
    }
    if args.truth:
        truth = json.loads(Path(args.truth).read_text(encoding="utf-8"))
        true_ite = np.asarray(truth["true_ite"], dtype=float)
        if true_ite.shape[0] != d.n:
            raise ValueError(
                f"truth file has {true_ite.shape[0]} rows but data has {d.n}; "
                "evaluate needs the unsplit generated data"
            )
        metrics["rmse_ite"] = float(rmse_ite(pred, true_ite))
    _write_json(args.out, metrics)
    if args.out:
        print(f"wrote {args.out}")


def cmd_experiment(args) -> None:
    payload = {}
    if args.config:
        payload = json.loads(Path(args.config).read_text(encoding="utf-8"))
    cfg = ExperimentConfig.from_dict(payload)
    simple = {
        "trials": args.trials,
        "split_fraction": args.split_fraction,
        "master_seed": args.master_seed,
        "output_dir": args.output_dir,
        "target_control_rate": args.control_rate,
        "target_ate": args.ate,
    }
    overrides = {k: v for k, v in simple.items() if v is not None}
    dgp_overrides = {
        name: getattr(args, name)
        for name in ("n", "m1", "m2", "m3", "noise_sd")
        if getattr(args, name) is not None
    }
    if dgp_overrides:
        overrides["dgp"] = replace(cfg.dgp, **dgp_overrides)
    if args.methods:
        overrides["methods"] = tuple(args.methods.split(","))
    if args.models:
        overrides["models"] = tuple(args.models.split(","))
    if args.m_star:
        overrides["m_star"] = tuple(int(v) for v in args.m_star.split(","))
    if args.bins:
        overrides["bins"] = tuple(int(v) for v in args.bins.split(","))
    if args.no_baseline:
        overrides["include_baseline"] = False
    if args.no_auuc:
        overrides["compute_auuc"] = False
    if overrides:
        cfg = replace(cfg, **overrides)
    report = run_experiment(cfg)
    print(f"wrote {cfg.output_dir}/report.csv ({len(report.rows)} rows, {cfg.trials} trials)")


def cmd_bench(args) -> None:
    cfg = ExperimentConfig(
        dgp=DgpConfig(n=args.n, m1=args.m1, m2=args.m2, m3=args.m3),
        m_star=(1,),  # unused by bench, but the config validates it
        bins=(args.bins,),
        master_seed=args.seed,
    )
    rows = bench_filters(cfg, repeats=args.repeats)
    by_method: dict[str, dict[int, float]] = {}
    for row in rows:
        by_method.setdefault(row.method, {})[row.n] = row.seconds
    print(f"{'method':<8} {'n':>10} {'seconds':>12}")
    for row in rows:
        print(f"{row.method:<8} {row.n:>10} {row.seconds:>12.4f}")
    print(f"{'method':<8} {'ratio(2n/n)':>14}")
    for method, times in by_method.items():
        small, big = times[args.n], times[2 * args.n]
        print(f"{method:<8} {big / small:>14.2f}")
    if args.out:
        _write_json(
            args.out,
            {
                "format_version": 1,
                "rows": [
                    {"method": r.method, "n": r.n, "seconds": float(r.seconds)} for r in rows
                ],
            },
        )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="upliftfs",
        description="Feature selection and modeling for uplift experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    dgp = DgpConfig()

    p = sub.add_parser("generate", help="draw a calibrated synthetic dataset")
    p.add_argument("--n", type=int, default=dgp.n)
    p.add_argument("--m1", type=int, default=dgp.m1, help="classification features")
    p.add_argument("--m2", type=int, default=dgp.m2, help="uplift features")
    p.add_argument("--m3", type=int, default=dgp.m3, help="irrelevant features")
    p.add_argument("--noise-sd", type=float, default=dgp.noise_sd)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--control-rate", type=float, default=0.2)
    p.add_argument("--ate", type=float, default=0.1)
    p.add_argument("--no-calibrate", action="store_true", help="use --a1/--a2 as given")
    p.add_argument("--a1", type=float, default=0.0)
    p.add_argument("--a2", type=float, default=0.0)
    p.add_argument("--out", required=True, help="CSV output path")
    p.add_argument("--truth-out", help="JSON path for ground-truth effects and labels")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("select", help="rank features with one method")
    p.add_argument("--data", required=True)
    p.add_argument("--treatment-col", default="w")
    p.add_argument("--outcome-col", default="y")
    p.add_argument("--method", required=True, choices=RANKING_METHODS)
    p.add_argument("--bins", type=int, default=DEFAULT_BINS)
    p.add_argument("--top", type=int, help="emit only the best k features")
    p.add_argument("--out", required=True, help="ranking CSV path")
    p.add_argument("--diagnostics-out", help="JSON sidecar for scoring diagnostics")
    _add_forest_flags(p)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("train", help="fit an uplift model on a CSV dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--treatment-col", default="w")
    p.add_argument("--outcome-col", default="y")
    p.add_argument("--model", required=True, choices=MODEL_NAMES)
    p.add_argument("--out", required=True, help="model JSON path")
    _add_forest_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a trained model on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--treatment-col", default="w")
    p.add_argument("--outcome-col", default="y")
    p.add_argument("--model-file", required=True)
    p.add_argument("--truth", help="truth JSON from `generate --truth-out` for RMSE")
    p.add_argument("--out", help="metrics JSON path (default: stdout)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("experiment", help="run the seeded multi-trial protocol")
    p.add_argument("--config", help="JSON config; flags override its keys")
    p.add_argument("--trials", type=int)
    p.add_argument("--master-seed", type=int)
    p.add_argument("--output-dir")
    p.add_argument("--split-fraction", type=float)
    p.add_argument("--n", type=int)
    p.add_argument("--m1", type=int)
    p.add_argument("--m2", type=int)
    p.add_argument("--m3", type=int)
    p.add_argument("--noise-sd", type=float)
    p.add_argument("--control-rate", type=float)
    p.add_argument("--ate", type=float)
    p.add_argument("--methods", help="comma-separated method tokens")
    p.add_argument("--models", help="comma-separated model tokens")
    p.add_argument("--m-star", help="comma-separated subset sizes")
    p.add_argument("--bins", help="comma-separated bin counts")
    p.add_argument("--no-baseline", action="store_true")
    p.add_argument("--no-auuc", action="store_true")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("bench", help="time every filter at n and 2n")
    p.add_argument("--n", type=int, default=50_000)
    p.add_argument("--m1", type=int, default=dgp.m1)
    p.add_argument("--m2", type=int, default=dgp.m2)
    p.add_argument("--m3", type=int, default=dgp.m3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bins", type=int, default=DEFAULT_BINS)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--out", help="JSON output path")
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except Exception as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
