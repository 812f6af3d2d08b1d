"""Acceptance gate: nine go/no-go checks run at their stated tolerances.

Each check prints one line so a full run reads as a checklist.  The heavy
synthetic cohorts are session fixtures, built once.
"""

import json
import time
from pathlib import Path

import numpy as np
import pytest

from attrition import datagen, experiments, features, schema
from attrition._rng import stream
from attrition.evaluation import auprc, auroc, best_threshold_accuracy
from attrition.experiments import ExperimentConfig, evaluate_family, prepare_span, run_rq1, run_rq2
from attrition.impute import ImputationConfig
from attrition.importance import vif_screen
from attrition.models import (
    init_params,
    logistic_loss_and_grad,
    nn_loss_and_grad,
    train_classifier,
)


def _report(num: int, name: str, ok: bool, detail: str) -> None:
    status = "PASS" if ok else "FAIL"
    print(f"ACCEPTANCE {num} [{name}]: {status} ({detail})")
    assert ok, f"criterion {num} ({name}): {detail}"


# ---------------------------------------------------------------------------
# 1. metric oracles
# ---------------------------------------------------------------------------

def _auroc_pairs(scores, labels):
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    total = sum(1.0 if p > n else (0.5 if p == n else 0.0) for p in pos for n in neg)
    return total / (len(pos) * len(neg))


def _average_precision(scores, labels):
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order]
    ap, tp, i = 0.0, 0, 0
    n_pos = y.sum()
    while i < len(s):
        j = i
        while j + 1 < len(s) and s[j + 1] == s[i]:
            j += 1
        block = y[i : j + 1].sum()
        tp += block
        if block:
            ap += (tp / (j + 1)) * (block / n_pos)
        i = j + 1
    return ap


def test_criterion_1_metric_oracles():
    rng = stream(1, "acceptance-metrics")
    worst_auroc = 0.0
    worst_ap = 0.0
    threshold_ok = True
    for _ in range(500):
        n = int(rng.integers(5, 201))
        labels = (rng.random(n) < 0.35).astype(int)
        if labels.sum() in (0, n):
            continue
        scores = np.round(rng.random(n), 2)
        worst_auroc = max(worst_auroc, abs(auroc(scores, labels) - _auroc_pairs(scores, labels)))
        worst_ap = max(worst_ap, abs(auprc(scores, labels) - _average_precision(scores, labels)))
        acc, _ = best_threshold_accuracy(scores, labels)
        candidates = np.concatenate([[-1.0], np.unique(scores)])
        oracle = max(((scores > t).astype(int) == labels).mean() for t in candidates)
        cell = np.histogram(scores, bins=np.linspace(0, 1, 200))[0].max() / n
        if oracle - acc > cell + 1e-12:
            threshold_ok = False
    ok = worst_auroc <= 1e-12 and worst_ap <= 1e-12 and threshold_ok
    _report(1, "metric oracles", ok,
            f"auroc dev {worst_auroc:.2e}, ap dev {worst_ap:.2e}, threshold within one cell: {threshold_ok}")


# ---------------------------------------------------------------------------
# 2. baseline identities
# ---------------------------------------------------------------------------

def test_criterion_2_baseline_identities():
    rng = stream(7, "acceptance-baselines")
    n = 10_000
    labels = np.zeros(n, dtype=int)
    labels[: int(0.131 * n)] = 1
    labels = rng.permutation(labels)
    scores = rng.random(n)
    ap = auprc(scores, labels)
    roc = auroc(scores, labels)
    acc, _ = best_threshold_accuracy(scores, labels)
    ok = (abs(ap - 0.131) <= 0.02) and (abs(roc - 0.5) <= 0.015) and (abs(acc - 0.869) <= 0.005)
    _report(2, "baseline identities", ok,
            f"auprc {ap:.4f} (target 0.131), auroc {roc:.4f} (0.5), accuracy {acc:.4f} (0.869)")


# ---------------------------------------------------------------------------
# 3. labeler oracle
# ---------------------------------------------------------------------------

def _brute_force_gap(flags):
    best = None
    for start in range(len(flags)):
        if flags[start]:
            continue
        end = start
        while end < len(flags) and not flags[end]:
            end += 1
        if end - start >= schema.GAP_TERMS and best is None:
            best = start + 1
    return best


def test_criterion_3_labeler_oracle():
    rng = stream(3, "acceptance-labeler")
    exact = 0
    for _ in range(1000):
        n = int(rng.integers(1, 19))
        flags = rng.random(n) < 0.65
        flags[0] = True
        graduated = bool(rng.random() < 0.3)
        lab = schema.label_dropout(flags, graduated)
        gap = _brute_force_gap(flags)
        want = (not graduated) and gap is not None
        exact += int(lab.is_dropout == want and lab.first_gap_term == gap)
    _report(3, "labeler oracle", exact == 1000, f"{exact}/1000 sequences exact")


# ---------------------------------------------------------------------------
# 4. gradient checks
# ---------------------------------------------------------------------------

def _central(fn, w, h):
    grad = np.zeros_like(w)
    for i in range(len(w)):
        e = np.zeros_like(w)
        e[i] = h
        grad[i] = (fn(w + e) - fn(w - e)) / (2 * h)
    return grad


def test_criterion_4_gradient_checks():
    rng = stream(4, "acceptance-grad")
    worst = 0.0
    for _ in range(20):
        X1 = np.column_stack([rng.normal(0, 1, (10, 5)), np.ones(10)])
        y = (rng.random(10) < 0.5).astype(float)
        w = rng.normal(0, 0.5, 6)
        _, g = logistic_loss_and_grad(w, X1, y)
        num = _central(lambda v: logistic_loss_and_grad(v, X1, y)[0], w, 1e-6)
        worst = max(worst, float((np.abs(g - num) / np.maximum(1, np.abs(num))).max()))

    checked = 0
    attempt = 0
    while checked < 20:
        attempt += 1
        X = rng.normal(0, 1, (10, 5))
        y = (rng.random(10) < 0.5).astype(int)
        params = init_params(5, 6, 3, seed=attempt)
        a = X
        near_kink = False
        for W, b in params[:-1]:
            z = a @ W + b
            near_kink = near_kink or np.abs(z).min() < 1e-3
            a = np.maximum(z, 0)
        if near_kink:
            continue
        _, grads = nn_loss_and_grad(params, X, y)
        flat = np.concatenate([np.concatenate([W.ravel(), b.ravel()]) for W, b in grads])
        shapes = [(W.shape, b.shape) for W, b in params]

        def unflatten(v):
            out, k = [], 0
            for (ws, bs) in shapes:
                wn = v[k : k + int(np.prod(ws))].reshape(ws)
                k += int(np.prod(ws))
                bn = v[k : k + bs[0]]
                k += bs[0]
                out.append((wn, bn))
            return out

        vec = np.concatenate([np.concatenate([W.ravel(), b.ravel()]) for W, b in params])
        num = _central(lambda v: nn_loss_and_grad(unflatten(v), X, y)[0], vec, 1e-5)
        worst = max(worst, float((np.abs(flat - num) / np.maximum(1, np.abs(num))).max()))
        checked += 1
    _report(4, "gradient checks", worst < 1e-4, f"worst relative error {worst:.2e}")


# ---------------------------------------------------------------------------
# 5. generator calibration at n=20,000
# ---------------------------------------------------------------------------

@pytest.fixture(scope="session")
def cohort_20k():
    return datagen.generate_cohort(datagen.default_config(20_000, seed=42))


def test_criterion_5_calibration(cohort_20k):
    start = time.time()
    labels = schema.label_cohort(cohort_20k).set_index("student_id")["is_dropout"]
    rate3 = labels.loc[sorted(schema.at_risk_population(cohort_20k, 3))].mean()
    rate6 = labels.loc[sorted(schema.at_risk_population(cohort_20k, 6))].mean()
    students = cohort_20k.students
    low_income = students["low_income"].astype(bool).mean()
    urm_ids = students.loc[
        students["ethnicity"].isin(schema.URM_ETHNICITIES), "student_id"
    ]
    urm_rate = labels.loc[urm_ids].mean()
    ok = (
        abs(rate3 - 0.132) <= 0.01
        and abs(rate6 - 0.114) <= 0.01
        and abs(low_income - 0.331) <= 0.008
        and abs(urm_rate - 0.189) <= 0.01
    )
    _report(5, "cohort calibration", ok,
            f"rate@3 {rate3:.4f}, rate@6 {rate6:.4f}, low-income {low_income:.4f}, "
            f"urm rate {urm_rate:.4f}, check {time.time()-start:.0f}s")


# ---------------------------------------------------------------------------
# 6. directional span sweep on the shifting-hazard cohort
# ---------------------------------------------------------------------------

@pytest.fixture(scope="session")
def rq2_shift(tmp_path_factory):
    cfg = ExperimentConfig(
        seed=29,
        out_dir=str(tmp_path_factory.mktemp("rq2") / "out"),
        generator=datagen.shifting_hazard_config(10_000, 29),
        spans=(0, 2, 4, 6),
        imputation=ImputationConfig(m=1, n_iterations=1),
        grids={"RandomForest": [{"n_trees": 100, "mtry": 6}]},
        pfi_repeats=5,
        jobs=2,
    )
    return run_rq2(cfg)


def test_criterion_6_directional_span_sweep(rq2_shift):
    per_span = rq2_shift["per_span"]
    auroc0 = per_span[0]["report"].mean("auroc")
    auroc6 = per_span[6]["report"].mean("auroc")
    gain = auroc6 - auroc0
    argmax0 = per_span[0]["importance"].argmax()
    catalog = {p.name: p for p in features.default_catalog()}
    moved = all(per_span[s]["importance"].argmax() == "enrolled_terms" for s in (4, 6))
    ok = gain >= 0.10 and catalog[argmax0].source == features.PRE_ENTRY and moved
    _report(6, "directional span sweep", ok,
            f"auroc {auroc0:.3f}->{auroc6:.3f} (gain {gain:.3f}), "
            f"argmax span0 {argmax0}, spans 4/6 argmax enrolled_terms: {moved}")


# ---------------------------------------------------------------------------
# 7. planted-importance recovery and VIF screening
# ---------------------------------------------------------------------------

def test_criterion_7_planted_importance():
    start = time.time()
    cfg = ExperimentConfig(
        seed=31,
        out_dir="unused",
        generator=datagen.single_signal_config(10_000, 31, predictor="hs_gpa"),
        imputation=ImputationConfig(m=1, n_iterations=1),
        grids={"RandomForest": [{"n_trees": 100, "mtry": 6}]},
        pfi_repeats=5,
        jobs=2,
    )
    cohort = experiments.load_cohort(cfg)
    data = prepare_span(cohort, 1, cfg)
    result = evaluate_family(data, "RandomForest", {"n_trees": 100, "mtry": 6}, cfg,
                             pfi_metric="auroc")
    imp = result["importance"]
    argmax = imp.argmax()
    noise = {k: v["mean"] for k, v in imp.scores.items() if k != "hs_gpa"}
    worst_noise = max(abs(v) for v in noise.values())

    rng = stream(7, "dup")
    X = rng.normal(0, 1, (500, 5))
    X[:, 1] = X[:, 0]
    groups = {f"p{j}": [j] for j in range(5)}
    excluded, vifs = vif_screen(X, groups, threshold=5.0)
    dup_ok = np.isinf(vifs["p0"]) and np.isinf(vifs["p1"]) and {"p0", "p1"} <= excluded

    ok = argmax == "hs_gpa" and worst_noise < 0.01 and dup_ok
    _report(7, "planted importance recovery", ok,
            f"argmax {argmax}, worst noise |PFI| {worst_noise:.4f}, duplicated pair "
            f"excluded: {dup_ok}, {time.time()-start:.0f}s")


# ---------------------------------------------------------------------------
# 8. model ordering on nonlinear vs linear cohorts
# ---------------------------------------------------------------------------

def test_criterion_8_model_ordering():
    rng = stream(8, "xor")
    X = rng.uniform(-1, 1, (800, 2))
    y = ((X[:, 0] > 0) ^ (X[:, 1] > 0)).astype(int)
    Xt = rng.uniform(-1, 1, (800, 2))
    yt = ((Xt[:, 0] > 0) ^ (Xt[:, 1] > 0)).astype(int)
    rf = train_classifier("RandomForest", {"n_trees": 500, "mtry": 3}, X[:400], y[:400], seed=8)
    lg = train_classifier("Logistic", {}, X[:400], y[:400], seed=8)
    rf_xor = auroc(rf.predict_proba(Xt), yt)
    lg_xor = auroc(lg.predict_proba(Xt), yt)

    rng = stream(1, "linear-cohort")
    n_train, n_test = 8000, 3000
    Xl = rng.normal(0, 1, (n_train + n_test, 5))
    logit = Xl @ np.array([2.2, 0.5, 0.5, 0.3, 0.3])
    yl = (1 / (1 + np.exp(-logit)) > rng.random(n_train + n_test)).astype(int)
    lg2 = train_classifier("Logistic", {}, Xl[:n_train], yl[:n_train], seed=1)
    rf2 = train_classifier("RandomForest", {"n_trees": 400, "mtry": 3},
                           Xl[:n_train], yl[:n_train], seed=1)
    lg_lin = auroc(lg2.predict_proba(Xl[n_train:]), yl[n_train:])
    rf_lin = auroc(rf2.predict_proba(Xl[n_train:]), yl[n_train:])

    ok = rf_xor >= 0.95 and lg_xor <= 0.6 and abs(lg_lin - rf_lin) <= 0.02
    _report(8, "model ordering", ok,
            f"xor rf {rf_xor:.3f} / logistic {lg_xor:.3f}; linear logistic {lg_lin:.3f} "
            f"vs rf {rf_lin:.3f} (|diff| {abs(lg_lin-rf_lin):.4f})")


# ---------------------------------------------------------------------------
# 9. determinism under --jobs and the leakage canary
# ---------------------------------------------------------------------------

def test_criterion_9_determinism_and_leakage(tmp_path):
    def run(jobs, out):
        cfg = ExperimentConfig(
            seed=91,
            out_dir=str(out),
            generator=datagen.default_config(600, 91),
            families=("RandomForest",),
            spans=(3,),
            imputation=ImputationConfig(m=1, n_iterations=1,
                                        rf_params={"n_trees": 10, "min_leaf": 10}),
            grids={"RandomForest": [{"n_trees": 50, "mtry": 6}]},
            jobs=jobs,
        )
        run_rq1(cfg)
        return json.loads((Path(out) / "manifest.json").read_text())

    m1 = run(1, tmp_path / "j1")
    m8 = run(8, tmp_path / "j8")
    deterministic = m1["files"] == m8["files"] and m1["config_hash"] == m8["config_hash"]

    cfg = ExperimentConfig(
        seed=66,
        out_dir=str(tmp_path / "canary"),
        generator=datagen.default_config(1200, 66),
        imputation=ImputationConfig(m=1, n_iterations=1),
        grids={"RandomForest": [{"n_trees": 100, "mtry": 6}]},
        pfi_repeats=5,
        leakage_canary=True,
        jobs=2,
    )
    cohort = experiments.load_cohort(cfg)
    data = prepare_span(cohort, 3, cfg)
    result = evaluate_family(data, "RandomForest", {"n_trees": 100, "mtry": 6}, cfg,
                             pfi_metric="auroc")
    canary = result["importance"].scores["leakage_canary"]
    noise_bound = max(0.02, 3.0 * canary["sd"] / np.sqrt(canary["n"]))
    canary_ok = abs(canary["mean"]) <= noise_bound

    ok = deterministic and canary_ok
    _report(9, "determinism and leakage", ok,
            f"jobs 1 vs 8 manifests equal: {deterministic}; canary PFI {canary['mean']:.4f} "
            f"within noise bound {noise_bound:.4f}: {canary_ok}")
