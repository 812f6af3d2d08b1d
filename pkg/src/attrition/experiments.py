"""The three experiment protocols, end to end over one cohort.

RQ1 benchmarks all six families after one and two years.  RQ2 sweeps
observation spans 0..9 with the best family and tracks AUPRC-based predictor
importance.  RQ3 holds the span fixed, trains one global model, and compares
AUROC and AUROC-based importance across the five grouping attributes.

Every fitted statistic (standardization, bins, major-average credits,
imputation forests) is derived from training rows of the current fold only.
Task seeds are keyed by (span, family, fold, imputation), so a run is
reproducible and independent of worker scheduling.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import platform
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__, datagen, evaluation, features, impute, importance, models, schema
from .datagen import GeneratorConfig
from .evaluation import MetricReport, aggregate_runs, score_cell, split_cv
from .features import FeatureMatrix, Predictor, build_feature_matrix, encode_for_model, truncate_to_span
from .impute import ImputationConfig
from .importance import ImportanceReport, permutation_importance, pool_importance, vif_screen
from .models import ALL_FAMILIES, train_model_on_encoded

log = logging.getLogger("attrition")

GROUPING_ATTRIBUTES = ["female", "first_generation", "low_income", "urm", "stem"]
RQ1_SPANS = (schema.TERMS_PER_YEAR, 2 * schema.TERMS_PER_YEAR)
RQ2_SPANS = tuple(range(10))
MIN_SPAN_DROPOUTS = 50

#: fallback hyperparameters when tuning is disabled
DEFAULT_PARAMS = {
    "Logistic": {},
    "KNN": {"k": 39},
    "NaiveBayes": {"laplace": 0.5},
    "NeuralNet": {"units1": 256, "ratio2": 0.25, "dropout": 0.0, "epochs": 10},
    "RandomForest": {"n_trees": 500, "mtry": 6},
    "SVM": {"kernel": "rbf", "cost": 1.0, "gamma": None, "pos_weight": 3},
}


class ExperimentError(RuntimeError):
    pass


@dataclass
class EvalSettings:
    k_folds: int = 3
    selection_metric: str = "auprc"
    holdout_fraction: float = 0.0    # optional extra held-out partition
    n_thresholds: int = evaluation.N_ACCURACY_THRESHOLDS


@dataclass
class ExperimentConfig:
    seed: int
    out_dir: str = "out"
    generator: GeneratorConfig | None = None
    csv_dir: str | None = None
    spans: tuple[int, ...] = RQ1_SPANS
    families: tuple[str, ...] = tuple(ALL_FAMILIES)
    grouping_attributes: tuple[str, ...] = tuple(GROUPING_ATTRIBUTES)
    imputation: ImputationConfig = field(default_factory=ImputationConfig)
    evaluation: EvalSettings = field(default_factory=EvalSettings)
    jobs: int = 1
    tune: bool = True
    reuse_tuning: bool = False       # RQ2: reuse span-3 hyperparameters everywhere
    grids: dict | None = None        # family -> list of cells, replaces Table-1 grids
    vif_threshold: float = importance.VIF_THRESHOLD
    pfi_repeats: int = 5
    best_family: str = "RandomForest"
    rq3_span: int = schema.TERMS_PER_YEAR
    rq3_global_model: bool = True
    leakage_canary: bool = False

    def validate(self) -> None:
        if self.generator is None and self.csv_dir is None:
            raise ExperimentError("config needs a generator or a csv_dir cohort source")
        if any(s < 0 or s > 9 for s in self.spans):
            raise ExperimentError("spans must lie in 0..9")
        unknown = set(self.grouping_attributes) - set(GROUPING_ATTRIBUTES)
        if unknown:
            raise ExperimentError(f"unknown grouping attributes {sorted(unknown)}")
        unknown = set(self.families) - set(ALL_FAMILIES)
        if unknown:
            raise ExperimentError(f"unknown families {sorted(unknown)}")
        if self.rq3_span not in (2, 3, 4):
            raise ExperimentError("rq3 span must be 2, 3, or 4")


def load_cohort(config: ExperimentConfig) -> schema.Cohort:
    if config.csv_dir is not None:
        return schema.read_cohort_csv(config.csv_dir)
    cohort = datagen.generate_cohort(config.generator)
    if config.generator.missingness:
        cohort = datagen.inject_missingness(cohort, config.generator)
    return cohort


# ---------------------------------------------------------------------------
# span pipeline: matrix -> VIF screen -> per-fold imputation -> tuned models
# ---------------------------------------------------------------------------

_CANARY = Predictor("leakage_canary", features.PRE_ENTRY, features.NUMERIC)


@dataclass
class SpanData:
    span: int
    matrix: FeatureMatrix
    folds: list
    imputed: list            # per fold: list of m completed matrices
    excluded: dict[str, float]
    vifs: dict[str, float]
    holdout: np.ndarray      # row indices never used for training or testing


def _vif_design(matrix: FeatureMatrix):
    """One-hot design on a mean/mode-filled copy, for screening only."""
    filled = matrix.copy()
    for j, p in enumerate(filled.predictors):
        col = filled.values[:, j]
        nan = np.isnan(col)
        if not nan.any():
            continue
        if p.kind == features.NUMERIC:
            col[nan] = np.nanmean(col)
        else:
            observed = col[~nan]
            values, counts = np.unique(observed, return_counts=True)
            col[nan] = values[np.argmax(counts)]
    enc = encode_for_model(filled, "Logistic")
    return enc.X, enc.column_groups


def prepare_span(cohort: schema.Cohort, span: int, config: ExperimentConfig) -> SpanData:
    trunc = truncate_to_span(cohort, span)
    matrix = build_feature_matrix(trunc)
    X_vif, groups = _vif_design(matrix)
    excluded, vifs = vif_screen(X_vif, groups, threshold=config.vif_threshold)
    if excluded:
        log.info("span %d: VIF screen excluded %s", span, sorted(excluded))
        matrix = matrix.drop_predictors(excluded)

    holdout = np.empty(0, dtype=int)
    if config.evaluation.holdout_fraction > 0:
        rng = np.random.default_rng(np.random.SeedSequence([config.seed, span, 0x0D]))
        n_hold = int(round(config.evaluation.holdout_fraction * matrix.n_rows))
        holdout = np.sort(rng.permutation(matrix.n_rows)[:n_hold])
        keep = np.setdiff1d(np.arange(matrix.n_rows), holdout)
        matrix = matrix.take(keep)

    folds = split_cv(matrix.n_rows, matrix.labels, k=config.evaluation.k_folds,
                     seed=_seed_of(config.seed, "folds", span))

    imputed = []
    for k, (train, _test) in enumerate(folds):
        mtx = matrix.refit_major_ratio(train)
        imp_cfg = ImputationConfig(
            m=config.imputation.m,
            n_iterations=config.imputation.n_iterations,
            rf_params=config.imputation.rf_params,
            seed=_seed_of(config.seed, "impute", span, k),
        )
        imputed.append(impute.impute_chained(mtx, imp_cfg, train_rows=train))
    return SpanData(span=span, matrix=matrix, folds=folds, imputed=imputed,
                    excluded=dict(sorted((k, vifs[k]) for k in excluded)), vifs=vifs,
                    holdout=holdout)


def _seed_of(seed: int, *tags) -> int:
    from ._rng import stream_seed

    return stream_seed(seed, *tags)


def tune_family(data: SpanData, family: str, config: ExperimentConfig) -> dict:
    """Grid search on imputation #1 of the first outer fold's training rows."""
    params = DEFAULT_PARAMS[family].copy()
    n_predictors = len(data.matrix.predictors)
    if params.get("gamma", 0) is None:
        params["gamma"] = 1.0 / n_predictors
    if config.grids is not None and family not in config.grids:
        return params
    if not config.tune:
        return params
    cells = (
        config.grids[family] if config.grids is not None
        else models.expand_grid(family, n_predictors)
    )
    if len(cells) == 1:
        return dict(cells[0])
    train1 = data.folds[0][0]
    tuning_matrix = data.imputed[0][0].take(train1)
    result = models.grid_search(
        family, cells, tuning_matrix, tuning_matrix.labels,
        k_folds=config.evaluation.k_folds,
        selection_metric=config.evaluation.selection_metric,
        seed=_seed_of(config.seed, "tune", data.span, family),
    )
    log.info("span %d %s tuned: %s", data.span, family, result.best_params)
    return result.best_params


def _inject_canary(mtx: FeatureMatrix, test_rows: np.ndarray, seed: int) -> FeatureMatrix:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xCA]))
    col = rng.normal(0.0, 1.0, mtx.n_rows)
    col[test_rows] = mtx.labels[test_rows].astype(float)
    return mtx.with_predictor(_CANARY, col)


def evaluate_family(data: SpanData, family: str, params: dict,
                    config: ExperimentConfig, pfi_metric: str | None = None,
                    group_attrs: tuple[str, ...] = ()) -> dict:
    """All (imputation x fold) cells for one family at one span."""

    def run_cell(k: int, m: int) -> dict:
        train, test = data.folds[k]
        mtx = data.imputed[k][m]
        if config.leakage_canary:
            mtx = _inject_canary(mtx, test, _seed_of(config.seed, "canary", data.span, k))
        enc = encode_for_model(mtx, family, train_rows=train)
        model = train_model_on_encoded(
            family, params, enc, mtx.labels, train,
            seed=(config.seed, "fit", data.span, family, k, m),
        )
        scores = model.predict_proba(enc.X[test])
        cell = score_cell(scores, mtx.labels[test], imputation=m, fold=k,
                          n_thresholds=config.evaluation.n_thresholds)
        out = {"cell": cell}
        if pfi_metric is not None:
            out["pfi"] = permutation_importance(
                model, enc.X[test], mtx.labels[test], enc.column_groups,
                metric=pfi_metric, n_repeats=config.pfi_repeats,
                seed=(config.seed, "pfi", data.span, family, k, m),
            )
        if group_attrs:
            out["groups"] = _group_cells(
                model, enc, mtx, test, group_attrs, config, data.span, family, k, m
            )
        return out

    n_m = len(data.imputed[0])
    tasks = [(k, m) for k in range(len(data.folds)) for m in range(n_m)]
    results: dict[tuple[int, int], dict] = {}
    if config.jobs > 1:
        with ThreadPoolExecutor(max_workers=config.jobs) as pool:
            futures = {key: pool.submit(run_cell, *key) for key in tasks}
            results = {key: fut.result() for key, fut in futures.items()}
    else:
        results = {key: run_cell(*key) for key in tasks}

    cells = [results[key]["cell"] for key in sorted(results)]
    report = aggregate_runs(family, data.span, cells)
    out = {"report": report}
    if pfi_metric is not None:
        out["importance"] = pool_importance(
            pfi_metric, data.span, [results[key]["pfi"] for key in sorted(results)],
            excluded=data.excluded, vif=data.vifs,
        )
    if group_attrs:
        out["groups"] = _pool_groups(results, group_attrs, data, pfi_metric="auroc")
    return out


def _group_cells(model, enc, mtx, test, attrs, config, span, family, k, m) -> dict:
    out = {}
    scores = model.predict_proba(enc.X[test])
    y = mtx.labels[test]
    for attr in attrs:
        mask = mtx.group_mask(attr)[test]
        for in_group, rows in ((True, np.flatnonzero(mask)), (False, np.flatnonzero(~mask))):
            key = (attr, in_group)
            if len(np.unique(y[rows])) < 2:
                log.warning("span %d %s group %s=%s has a single class in fold %d; skipped",
                            span, family, attr, in_group, k)
                out[key] = None
                continue
            pfi = permutation_importance(
                model, enc.X[test][rows], y[rows], enc.column_groups,
                metric="auroc", n_repeats=config.pfi_repeats,
                seed=(config.seed, "gpfi", span, family, k, m, attr, in_group),
            )
            out[key] = {
                "auroc": evaluation.auroc(scores[rows], y[rows]),
                "size": int(len(rows)),
                "dropout_rate": float(y[rows].mean()),
                "pfi": pfi,
            }
    return out


def _pool_groups(results, attrs, data, pfi_metric="auroc") -> dict:
    pooled = {}
    for attr in attrs:
        for in_group in (True, False):
            key = (attr, in_group)
            cells = [
                r["groups"][key] for r in results.values()
                if r.get("groups", {}).get(key) is not None
            ]
            if not cells:
                pooled[key] = None
                continue
            aurocs = np.array([c["auroc"] for c in cells])
            pooled[key] = {
                "auroc_mean": float(aurocs.mean()),
                "auroc_sd": float(aurocs.std()),
                "size": int(np.mean([c["size"] for c in cells])),
                "dropout_rate": float(np.mean([c["dropout_rate"] for c in cells])),
                "importance": pool_importance(
                    pfi_metric, data.span, [c["pfi"] for c in cells],
                    excluded=data.excluded, vif=data.vifs,
                    group=f"{attr}={in_group}",
                ),
            }
    return pooled


# ---------------------------------------------------------------------------
# the three protocols
# ---------------------------------------------------------------------------

def run_rq1(config: ExperimentConfig,
            cohort: schema.Cohort | None = None) -> dict:
    """Six families at the one- and two-year spans; emits the model-comparison table."""
    config.validate()
    cohort = load_cohort(config) if cohort is None else cohort
    spans = tuple(config.spans) or RQ1_SPANS
    reports: list[MetricReport] = []
    baselines = []
    for span in spans:
        data = prepare_span(cohort, span, config)
        log.info("rq1 span %d: %d rows, base rate %.3f", span, data.matrix.n_rows,
                 data.matrix.labels.mean())
        for family in config.families:
            params = tune_family(data, family, config)
            result = evaluate_family(data, family, params, config)
            reports.append(result["report"])
        r = float(data.matrix.labels.mean())
        baselines.append({"span": span, "auprc": r, "auroc": 0.5, "accuracy": 1.0 - r})
    out = {"reports": reports, "baselines": baselines, "spans": spans}
    _write_rq1(config, out)
    return out


def run_rq2(config: ExperimentConfig,
            cohort: schema.Cohort | None = None) -> dict:
    """Observation-span sweep 0..9 for the best family, with AUPRC-based PFI."""
    config.validate()
    cohort = load_cohort(config) if cohort is None else cohort
    spans = tuple(config.spans) if config.spans else RQ2_SPANS
    family = config.best_family
    per_span = {}
    tuned_params: dict | None = None
    for span in spans:
        data = prepare_span(cohort, span, config)
        n_dropouts = int(data.matrix.labels.sum())
        if n_dropouts < MIN_SPAN_DROPOUTS:
            log.warning("span %d skipped: only %d at-risk dropouts", span, n_dropouts)
            continue
        if tuned_params is None or not config.reuse_tuning:
            params = tune_family(data, family, config)
            tuned_params = params
        result = evaluate_family(data, family, tuned_params, config, pfi_metric="auprc")
        per_span[span] = result
        log.info("rq2 span %d: auroc %.3f auprc %.3f", span,
                 result["report"].mean("auroc"), result["report"].mean("auprc"))
    out = {"per_span": per_span, "family": family}
    _write_rq2(config, out)
    return out


def run_rq3(config: ExperimentConfig,
            cohort: schema.Cohort | None = None) -> dict:
    """Per-group AUROC and AUROC-based PFI for one global model at the RQ3 span."""
    config.validate()
    cohort = load_cohort(config) if cohort is None else cohort
    span = config.rq3_span
    family = config.best_family
    data = prepare_span(cohort, span, config)
    params = tune_family(data, family, config)
    result = evaluate_family(
        data, family, params, config, group_attrs=tuple(config.grouping_attributes)
    )
    out = {"span": span, "family": family, "report": result["report"],
           "groups": result["groups"], "excluded": data.excluded}
    _write_rq3(config, out)
    return out


# ---------------------------------------------------------------------------
# report files and the run manifest
# ---------------------------------------------------------------------------

def _cells_frame(reports: list[MetricReport]) -> pd.DataFrame:
    rows = []
    for rep in reports:
        for cell in rep.cells:
            for metric in ("auprc", "auroc", "best_accuracy", "base_rate"):
                rows.append({
                    "family": rep.family, "span": rep.span,
                    "imputation": cell["imputation"], "fold": cell["fold"],
                    "metric": metric, "value": cell[metric],
                })
    return pd.DataFrame(rows)


def _importance_frame(reports: list[ImportanceReport]) -> pd.DataFrame:
    rows = []
    for rep in reports:
        for name, s in rep.scores.items():
            rows.append({
                "span": rep.span, "group_filter": rep.group, "predictor": name,
                "mean_pfi": s["mean"], "sd": s["sd"], "excluded_flag": False,
                "vif": rep.vif.get(name, np.nan),
            })
        for name, v in rep.excluded.items():
            rows.append({
                "span": rep.span, "group_filter": rep.group, "predictor": name,
                "mean_pfi": np.nan, "sd": np.nan, "excluded_flag": True, "vif": v,
            })
    return pd.DataFrame(rows)


def _write_rq1(config: ExperimentConfig, out: dict) -> None:
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    start = _now()
    _cells_frame(out["reports"]).to_csv(out_dir / "reports.csv", index=False)
    summary = {
        "spans": list(out["spans"]),
        "models": [rep.summary() for rep in out["reports"]],
        "baselines": out["baselines"],
    }
    (out_dir / "reports.json").write_text(json.dumps(summary, indent=2))
    write_manifest(config, out_dir, ["reports.csv", "reports.json"], start)


def _write_rq2(config: ExperimentConfig, out: dict) -> None:
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    start = _now()
    reports = [r["report"] for r in out["per_span"].values()]
    _cells_frame(reports).to_csv(out_dir / "reports.csv", index=False)
    fig1 = []
    for span, r in sorted(out["per_span"].items()):
        rep = r["report"]
        base = rep.baselines()
        for metric, baseline in (("auprc", base["auprc"]), ("auroc", base["auroc"]),
                                 ("best_accuracy", base["accuracy"])):
            fig1.append({"span": span, "metric": metric, "value": rep.mean(metric),
                         "sd": rep.sd(metric), "baseline": baseline})
    pd.DataFrame(fig1).to_csv(out_dir / "rq2_metrics.csv", index=False)
    imps = [r["importance"] for r in out["per_span"].values()]
    frame = _importance_frame(imps)
    frame.to_csv(out_dir / "importance.csv", index=False)
    frame.to_csv(out_dir / "rq2_importance.csv", index=False)
    summary = {
        "family": out["family"],
        "per_span": {
            str(span): {
                **r["report"].summary(),
                "top_predictors": r["importance"].ranking()[:10],
            }
            for span, r in sorted(out["per_span"].items())
        },
    }
    (out_dir / "reports.json").write_text(json.dumps(summary, indent=2))
    write_manifest(config, out_dir,
                   ["reports.csv", "reports.json", "rq2_metrics.csv",
                    "importance.csv", "rq2_importance.csv"], start)


def _write_rq3(config: ExperimentConfig, out: dict) -> None:
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    start = _now()
    rows = []
    imp_reports = []
    for (attr, in_group), cell in out["groups"].items():
        if cell is None:
            continue
        rows.append({
            "attribute": attr, "in_group": in_group, "size": cell["size"],
            "dropout_rate": cell["dropout_rate"], "auroc_mean": cell["auroc_mean"],
            "auroc_sd": cell["auroc_sd"],
        })
        imp_reports.append(cell["importance"])
    groups_frame = pd.DataFrame(rows)
    groups_frame.to_csv(out_dir / "groups.csv", index=False)
    groups_frame.to_csv(out_dir / "rq3_performance.csv", index=False)
    frame = _importance_frame(imp_reports)
    frame.to_csv(out_dir / "importance.csv", index=False)
    frame.to_csv(out_dir / "rq3_importance.csv", index=False)
    _cells_frame([out["report"]]).to_csv(out_dir / "reports.csv", index=False)
    summary = {
        "span": out["span"], "family": out["family"],
        "overall": out["report"].summary(),
        "groups": {
            f"{attr}={in_group}": {k: v for k, v in cell.items() if k != "importance"}
            for (attr, in_group), cell in out["groups"].items() if cell is not None
        },
    }
    (out_dir / "reports.json").write_text(json.dumps(summary, indent=2))
    write_manifest(config, out_dir,
                   ["reports.csv", "reports.json", "groups.csv", "rq3_performance.csv",
                    "importance.csv", "rq3_importance.csv"], start)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def config_digest(config: ExperimentConfig) -> str:
    """Hash of the run-defining configuration.

    The output directory and the worker cap are excluded: neither may change
    what gets computed, only where it lands and how fast.
    """
    def default(o):
        if dataclasses.is_dataclass(o):
            return dataclasses.asdict(o)
        if isinstance(o, (Path, np.integer, np.floating)):
            return str(o)
        return repr(o)

    payload = dataclasses.asdict(config)
    payload.pop("out_dir", None)
    payload.pop("jobs", None)
    blob = json.dumps(payload, sort_keys=True, default=default)
    return hashlib.sha256(blob.encode()).hexdigest()


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(config: ExperimentConfig, out_dir: Path, files: list[str],
                   started: str) -> Path:
    """Atomically record config hash, seed, versions, and output checksums.

    Timestamps describe the run; reproducibility is judged on the seed,
    config hash, and file checksums.
    """
    manifest = {
        "config_hash": config_digest(config),
        "seed": config.seed,
        "started": started,
        "finished": _now(),
        "versions": {
            "attrition": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "pandas": pd.__version__,
        },
        "files": {name: _sha256(out_dir / name) for name in sorted(files)},
    }
    tmp = out_dir / "manifest.json.tmp"
    tmp.write_text(json.dumps(manifest, indent=2))
    final = out_dir / "manifest.json"
    tmp.replace(final)
    return final
