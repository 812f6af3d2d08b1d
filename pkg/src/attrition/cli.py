"""Command-line surface: generate cohorts, run the experiments, score files.

Human-readable progress goes to stderr; machine output only ever lands in
files under --out.  Exit codes: 0 success, 1 usage/validation error, 2
runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from . import datagen, evaluation, experiments, schema
from .datagen import GeneratorConfig, MissingnessSpec
from .experiments import EvalSettings, ExperimentConfig
from .impute import ImputationConfig

log = logging.getLogger("attrition")

SEED_ENV = "ATTRITION_SEED"

_GENERATOR_PRESETS = {
    "default": datagen.default_config,
    "shifting_hazard": datagen.shifting_hazard_config,
    "single_signal": datagen.single_signal_config,
    "group_interaction": datagen.group_interaction_config,
}


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _build_parser() -> _Parser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON config mirroring ExperimentConfig")
    common.add_argument("--seed", type=int, help=f"root seed (fallback: ${SEED_ENV})")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--families", type=str, help="comma-separated model families")
    common.add_argument("--spans", type=str, help="comma-separated observation spans")
    common.add_argument("--jobs", type=int, help="worker cap (>= 1)")
    parser = _Parser(prog="attrition", description=__doc__, parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("generate", "generate a synthetic cohort as CSV files"),
        ("rq1", "model comparison after one and two years"),
        ("rq2", "observation-span sweep with predictor importance"),
        ("rq3", "group-wise performance and importance"),
    ):
        sub.add_parser(name, help=help_text, parents=[common])
    p_metrics = sub.add_parser("metrics", help="score a predictions CSV (score,label)",
                               parents=[common])
    p_metrics.add_argument("scores_file", type=Path)
    p_validate = sub.add_parser("validate", help="schema-check a cohort CSV directory",
                                parents=[common])
    p_validate.add_argument("data_dir", type=Path)
    return parser


def _generator_from_dict(d: dict, seed: int) -> GeneratorConfig:
    d = dict(d)
    preset = d.pop("preset", "default")
    if preset not in _GENERATOR_PRESETS:
        raise UsageError(f"unknown generator preset {preset!r}")
    kwargs = {}
    if preset == "single_signal":
        kwargs["predictor"] = d.pop("predictor", "hs_gpa")
    cfg = _GENERATOR_PRESETS[preset](d.pop("n_students", 2000), d.pop("seed", seed), **kwargs)
    missingness = {
        name: MissingnessSpec(**spec) for name, spec in d.pop("missingness", {}).items()
    }
    if missingness:
        cfg.missingness = missingness
    for key, value in d.items():
        if not hasattr(cfg, key):
            raise UsageError(f"unknown generator option {key!r}")
        setattr(cfg, key, value)
    return cfg


def _experiment_config(args, raw: dict) -> ExperimentConfig:
    raw = dict(raw)
    seed = args.seed if args.seed is not None else raw.get("seed")
    if seed is None:
        env = os.environ.get(SEED_ENV)
        seed = int(env) if env else 0
    gen = raw.pop("generator", None)
    csv_dir = raw.pop("csv_dir", None)
    generator = _generator_from_dict(gen, seed) if gen is not None else None
    if generator is None and csv_dir is None:
        generator = datagen.default_config(2000, seed)
    imp_raw = raw.pop("imputation", {})
    imputation = ImputationConfig(**imp_raw)
    if "seed" not in imp_raw:
        imputation.seed = seed
    ev = EvalSettings(**raw.pop("evaluation", {}))
    cfg = ExperimentConfig(
        seed=seed,
        generator=generator,
        csv_dir=csv_dir,
        imputation=imputation,
        evaluation=ev,
    )
    raw.pop("seed", None)
    for key, value in raw.items():
        if not hasattr(cfg, key):
            raise UsageError(f"unknown config field {key!r}")
        if key in ("spans", "families", "grouping_attributes"):
            value = tuple(value)
        setattr(cfg, key, value)
    if args.out is not None:
        cfg.out_dir = str(args.out)
    if args.families:
        cfg.families = tuple(f.strip() for f in args.families.split(",") if f.strip())
    if args.spans:
        cfg.spans = tuple(int(s) for s in args.spans.split(",") if s.strip())
    if args.jobs is not None:
        if args.jobs < 1:
            raise UsageError("--jobs must be >= 1")
        cfg.jobs = args.jobs
    return cfg


def _cmd_generate(cfg: ExperimentConfig) -> int:
    out = Path(cfg.out_dir)
    cohort = experiments.load_cohort(cfg)
    paths = schema.write_cohort_csv(cohort, out)
    (out / "ground_truth.json").write_text(json.dumps(cohort.ground_truth, indent=2))
    files = [p.name for p in paths.values()] + ["ground_truth.json"]
    experiments.write_manifest(cfg, out, files, experiments._now())
    log.info("cohort of %d students written to %s", len(cohort.students), out)
    return 0


def _cmd_metrics(cfg: ExperimentConfig, scores_file: Path) -> int:
    df = pd.read_csv(scores_file)
    if not {"score", "label"} <= set(df.columns):
        log.error("predictions file needs 'score' and 'label' columns")
        return 1
    scores = df["score"].to_numpy(dtype=float)
    labels = df["label"].to_numpy(dtype=int)
    acc, thr = evaluation.best_threshold_accuracy(scores, labels)
    result = {
        "n": int(len(df)),
        "base_rate": float(labels.mean()),
        "auroc": evaluation.auroc(scores, labels),
        "auprc": evaluation.auprc(scores, labels),
        "best_accuracy": acc,
        "best_threshold": thr,
    }
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(json.dumps(result, indent=2))
    log.info("auroc %.4f auprc %.4f best accuracy %.4f", result["auroc"],
             result["auprc"], result["best_accuracy"])
    return 0


def _cmd_validate(data_dir: Path) -> int:
    try:
        cohort = schema.read_cohort_csv(data_dir)
    except (FileNotFoundError, schema.SchemaError) as exc:
        log.error("cannot read cohort: %s", exc)
        return 1
    problems = schema.validate_cohort(cohort)
    for p in problems:
        log.error("violation: %s", p)
    if problems:
        return 1
    log.info("cohort at %s is valid (%d students, %d terms, %d courses)",
             data_dir, len(cohort.students), len(cohort.terms), len(cohort.courses))
    return 0


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(
        stream=sys.stderr, level=logging.INFO, format="%(levelname)s %(message)s", force=True
    )
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        raw = json.loads(args.config.read_text()) if args.config else {}
        if args.command == "validate":
            return _cmd_validate(args.data_dir)
        cfg = _experiment_config(args, raw)
        if args.command == "generate":
            return _cmd_generate(cfg)
        if args.command == "metrics":
            return _cmd_metrics(cfg, args.scores_file)
        runner = {"rq1": experiments.run_rq1, "rq2": experiments.run_rq2,
                  "rq3": experiments.run_rq3}[args.command]
        runner(cfg)
        log.info("%s complete; outputs in %s", args.command, cfg.out_dir)
        return 0
    except (UsageError, datagen.ConfigError, schema.SchemaError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
