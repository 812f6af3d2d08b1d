import numpy as np
import pytest

import attrition.importance as imp_mod
from attrition._rng import stream
from attrition.evaluation import auroc
from attrition.importance import (
    ImportanceError,
    compute_vif,
    permutation_importance,
    pool_importance,
    vif_screen,
)
from attrition.models import LogisticModel, train_classifier


# ---------------------------------------------------------------------------
# VIF
# ---------------------------------------------------------------------------

def _orthogonal_design(rng, n=200, p=6):
    # QR against a leading ones column makes every predictor exactly
    # orthogonal to the others and to the intercept (mean zero)
    raw = np.column_stack([np.ones(n), rng.normal(0, 1, (n, p))])
    Q, _ = np.linalg.qr(raw)
    return Q[:, 1:]


def test_vif_orthogonal_predictors_is_one(rng):
    X = _orthogonal_design(rng)
    groups = {f"p{j}": [j] for j in range(X.shape[1])}
    vifs = compute_vif(X, groups)
    for v in vifs.values():
        assert v == pytest.approx(1.0, abs=1e-6)


def test_vif_duplicated_pair_is_infinite_and_both_excluded(rng):
    X = rng.normal(0, 1, (150, 4))
    X[:, 1] = X[:, 0]
    groups = {f"p{j}": [j] for j in range(4)}
    vifs = compute_vif(X, groups)
    assert np.isinf(vifs["p0"]) and np.isinf(vifs["p1"])
    excluded, _ = vif_screen(X, groups, threshold=5.0)
    assert {"p0", "p1"} <= excluded
    assert "p3" not in excluded


def r2_oracle(X, target_cols, other_cols):
    """Normal-equations R-squared of a column on the others plus intercept."""
    t = X[:, target_cols[0]]
    D = np.column_stack([X[:, other_cols], np.ones(len(X))])
    beta = np.linalg.pinv(D.T @ D) @ D.T @ t
    resid = t - D @ beta
    tc = t - t.mean()
    return 1.0 - (resid**2).sum() / (tc**2).sum()


def test_vif_matches_r_squared_oracle(rng):
    n, p = 300, 5
    base = rng.normal(0, 1, (n, p))
    X = base.copy()
    X[:, 2] = 0.7 * base[:, 0] + 0.5 * base[:, 1] + 0.4 * rng.normal(0, 1, n)
    groups = {f"p{j}": [j] for j in range(p)}
    vifs = compute_vif(X, groups)
    for j in range(p):
        others = [c for c in range(p) if c != j]
        want = 1.0 / (1.0 - r2_oracle(X, [j], others))
        assert vifs[f"p{j}"] == pytest.approx(want, rel=1e-6)


def test_vif_constant_column_flagged_infinite(rng):
    X = rng.normal(0, 1, (100, 3))
    X[:, 1] = 2.5
    vifs = compute_vif(X, {f"p{j}": [j] for j in range(3)})
    assert np.isinf(vifs["p1"])


def test_vif_needs_more_rows_than_columns(rng):
    X = rng.normal(0, 1, (5, 6))
    with pytest.raises(ImportanceError):
        compute_vif(X, {f"p{j}": [j] for j in range(6)})


def test_vif_categorical_group_uses_principal_component(rng):
    n = 400
    code = rng.integers(0, 3, n)
    onehot = np.eye(3)[code]
    # a numeric predictor tied to the categorical via its first component
    numeric = onehot @ np.array([1.0, -1.0, 0.0]) + 0.05 * rng.normal(0, 1, n)
    X = np.column_stack([onehot, numeric, rng.normal(0, 1, n)])
    groups = {"cat": [0, 1, 2], "tied": [3], "free": [4]}
    vifs = compute_vif(X, groups)
    assert vifs["tied"] > 5.0
    assert vifs["free"] < 2.0


# ---------------------------------------------------------------------------
# permutation importance
# ---------------------------------------------------------------------------

class _RecordingModel:
    """Captures every matrix it scores; prediction depends on columns 0-1."""

    def __init__(self):
        self.seen = []

    def predict_proba(self, X):
        self.seen.append(X.copy())
        return 1.0 / (1.0 + np.exp(-(X[:, 0] - X[:, 1])))


def test_identity_permutation_scores_exactly_zero(rng, monkeypatch):
    monkeypatch.setattr(imp_mod, "_draw_permutation",
                        lambda seed, p, r, n: np.arange(n))
    X = rng.normal(0, 1, (120, 3))
    y = (X[:, 0] > 0).astype(int)
    model = _RecordingModel()
    out = permutation_importance(model, X, y, {"a": [0], "b": [1], "c": [2]},
                                 metric="auroc", n_repeats=2, seed=0)
    for stats in out.values():
        assert stats["mean"] == 0.0
        assert stats["sd"] == 0.0


def test_group_columns_permuted_jointly(rng):
    X = rng.normal(0, 1, (80, 4))
    X[:, 1] = X[:, 0]          # the pair moves together if permuted jointly
    y = (rng.random(80) < 0.5).astype(int)
    model = _RecordingModel()
    permutation_importance(model, X, y, {"pair": [0, 1], "rest": [2, 3]},
                           metric="auroc", n_repeats=3, seed=1)
    for seen in model.seen:
        assert np.array_equal(seen[:, 0], seen[:, 1])


def test_planted_predictor_has_largest_drop(rng):
    n = 2000
    X = rng.normal(0, 1, (n, 8))
    y = (X[:, 3] + 0.6 * rng.normal(0, 1, n) > 0).astype(int)
    train = np.arange(0, n, 2)
    test = np.arange(1, n, 2)
    model = train_classifier("RandomForest", {"n_trees": 60, "mtry": 3},
                             X[train], y[train], seed=3,
                             cat_mask=np.zeros(8, bool), n_levels=np.zeros(8, np.int64))
    out = permutation_importance(model, X[test], y[test],
                                 {f"p{j}": [j] for j in range(8)},
                                 metric="auroc", n_repeats=5, seed=4)
    ranked = sorted(out.items(), key=lambda kv: -kv[1]["mean"])
    assert ranked[0][0] == "p3"
    for name, stats in out.items():
        if name != "p3":
            assert abs(stats["mean"]) < 0.02


def test_ignored_predictor_in_exported_logistic_scores_zero(rng):
    X = rng.normal(0, 1, (300, 4))
    y = (X[:, 0] > 0).astype(int)
    trained = train_classifier("Logistic", {}, X, y, seed=5)
    trained.model.coef = trained.model.coef.copy()
    trained.model.coef[2] = 0.0          # provably ignored column
    out = permutation_importance(trained, X, y, {f"p{j}": [j] for j in range(4)},
                                 metric="auroc", n_repeats=4, seed=6)
    assert out["p2"]["mean"] == 0.0
    assert out["p2"]["sd"] == 0.0


def test_negative_drops_reported_as_is(rng):
    X = rng.normal(0, 1, (60, 2))
    y = (rng.random(60) < 0.5).astype(int)
    model = _RecordingModel()
    out = permutation_importance(model, X, y, {"a": [0], "b": [1]},
                                 metric="auroc", n_repeats=3, seed=7)
    assert isinstance(out["a"]["mean"], float)   # sign left untouched


def test_empty_group_is_an_error(rng):
    X = rng.normal(0, 1, (50, 2))
    y = (X[:, 0] > 0).astype(int)
    with pytest.raises(ImportanceError):
        permutation_importance(_RecordingModel(), X, y, {"a": []},
                               metric="auroc", n_repeats=1, seed=0)


def test_pooled_report_covers_every_predictor():
    cells = [
        {"a": {"mean": 0.1, "sd": 0.0, "repeats": [0.1, 0.1], "baseline": 0.8},
         "b": {"mean": 0.0, "sd": 0.0, "repeats": [0.0, 0.0], "baseline": 0.8}},
        {"a": {"mean": 0.2, "sd": 0.0, "repeats": [0.2, 0.2], "baseline": 0.8},
         "b": {"mean": 0.0, "sd": 0.0, "repeats": [0.0, 0.0], "baseline": 0.8}},
    ]
    report = pool_importance("auprc", 3, cells, excluded={"c": float("inf")},
                             vif={"a": 1.0, "b": 1.2, "c": float("inf")})
    assert report.argmax() == "a"
    assert report.scores["a"]["mean"] == pytest.approx(0.15)
    assert report.scores["a"]["n"] == 4
    assert set(report.scores) | set(report.excluded) == {"a", "b", "c"}


def test_ranking_order_preserved_under_positive_scaling():
    cells = [{
        "a": {"mean": 0.3, "sd": 0.0, "repeats": [0.3], "baseline": 0.9},
        "b": {"mean": 0.1, "sd": 0.0, "repeats": [0.1], "baseline": 0.9},
        "c": {"mean": 0.05, "sd": 0.0, "repeats": [0.05], "baseline": 0.9},
    }]
    report = pool_importance("auroc", 3, cells, excluded={}, vif={})
    names = [n for n, _ in report.ranking()]
    total = sum(v for _, v in report.ranking())
    shares = [(n, v / total) for n, v in report.ranking()]
    assert [n for n, _ in shares] == names      # relative shares keep the order
    assert names == ["a", "b", "c"]
