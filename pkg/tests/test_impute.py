import numpy as np
import pytest

from attrition._rng import stream
from attrition.features import BOOLEAN, CATEGORICAL, NUMERIC, FeatureMatrix, Predictor
from attrition.impute import ImputationConfig, UnimputableColumnError, impute_chained

FAST_RF = {"n_trees": 20, "mtry": 3, "min_leaf": 5}


def _matrix(seed=0, n=400, missing_rate=0.2):
    """Numeric target that is a noisy linear function of two observed columns,
    plus a categorical column tied to the sign of the first."""
    rng = stream(seed, "impute-test")
    a = rng.normal(0, 1, n)
    b = rng.normal(0, 1, n)
    target = 2.0 * a - b + rng.normal(0, 0.4, n)
    cat = (a > 0).astype(float) + (rng.random(n) < 0.1)  # levels 0,1,2
    values = np.column_stack([a, b, target, np.clip(cat, 0, 2)])
    preds = [
        Predictor("a", "pre_entry", NUMERIC),
        Predictor("b", "pre_entry", NUMERIC),
        Predictor("target", "pre_entry", NUMERIC),
        Predictor("group", "pre_entry", CATEGORICAL, ("x", "y", "z")),
    ]
    mtx = FeatureMatrix(
        student_ids=[str(i) for i in range(n)], predictors=preds, values=values,
        labels=(rng.random(n) < 0.2).astype(int), span=0,
    )
    truth = mtx.values.copy()
    if missing_rate:
        holes = rng.random(n) < missing_rate
        mtx.values[holes, 2] = np.nan
        cat_holes = rng.random(n) < missing_rate
        mtx.values[cat_holes, 3] = np.nan
    return mtx, truth


def test_complete_matrix_passes_through():
    mtx, _ = _matrix(missing_rate=0.0)
    out = impute_chained(mtx, ImputationConfig(m=3, n_iterations=2, rf_params=FAST_RF, seed=1))
    assert len(out) == 3
    for completed in out:
        assert np.array_equal(completed.values, mtx.values)


def test_observed_cells_never_altered():
    mtx, _ = _matrix(seed=2)
    observed = ~mtx.missing_mask
    out = impute_chained(mtx, ImputationConfig(m=2, n_iterations=2, rf_params=FAST_RF, seed=3))
    for completed in out:
        assert np.array_equal(completed.values[observed], mtx.values[observed])
        assert not np.isnan(completed.values).any()


def test_same_seed_bitwise_identical():
    cfg = ImputationConfig(m=2, n_iterations=2, rf_params=FAST_RF, seed=11)
    mtx, _ = _matrix(seed=4)
    a = impute_chained(mtx, cfg)
    b = impute_chained(_matrix(seed=4)[0], cfg)
    for x, y in zip(a, b):
        assert np.array_equal(x.values, y.values)


def test_categorical_imputations_are_valid_levels():
    mtx, _ = _matrix(seed=5)
    out = impute_chained(mtx, ImputationConfig(m=2, n_iterations=2, rf_params=FAST_RF, seed=6))
    holes = mtx.missing_mask[:, 3]
    for completed in out:
        imputed = completed.values[holes, 3]
        assert set(np.unique(imputed)) <= {0.0, 1.0, 2.0}


def test_chains_disagree_on_imputed_cells():
    mtx, _ = _matrix(seed=7, missing_rate=0.2)
    out = impute_chained(mtx, ImputationConfig(m=3, n_iterations=2, rf_params=FAST_RF, seed=8))
    holes = mtx.missing_mask
    stacked = np.stack([c.values[holes] for c in out])
    spread = stacked.max(axis=0) - stacked.min(axis=0)
    assert (spread > 1e-9).mean() > 0.5


def test_forest_beats_mean_imputation_rmse():
    mtx, truth = _matrix(seed=9, n=600)
    holes = mtx.missing_mask[:, 2]
    out = impute_chained(
        mtx, ImputationConfig(m=3, n_iterations=3, rf_params=FAST_RF, seed=10)
    )
    rf_rmse = np.mean([
        np.sqrt(np.mean((c.values[holes, 2] - truth[holes, 2]) ** 2)) for c in out
    ])
    observed_mean = np.nanmean(mtx.values[:, 2])
    mean_rmse = np.sqrt(np.mean((observed_mean - truth[holes, 2]) ** 2))
    assert rf_rmse < mean_rmse


def test_fully_missing_column_raises_named_error():
    mtx, _ = _matrix(seed=12)
    mtx.values[:, 1] = np.nan
    with pytest.raises(UnimputableColumnError) as err:
        impute_chained(mtx, ImputationConfig(m=1, n_iterations=1, rf_params=FAST_RF, seed=1))
    assert "'b'" in str(err.value)


def test_train_row_restriction_controls_marginals():
    # initialization draws and forests must come from training rows only:
    # shifting the test rows' observed target cannot change how a train-row
    # hole is initialized
    mtx, _ = _matrix(seed=13)
    train = np.arange(0, mtx.n_rows // 2)
    cfg = ImputationConfig(m=1, n_iterations=1, rf_params=FAST_RF, seed=14)
    base = impute_chained(mtx, cfg, train_rows=train)[0]
    shifted = mtx.copy()
    test_rows = np.arange(mtx.n_rows // 2, mtx.n_rows)
    observed_test = test_rows[~mtx.missing_mask[test_rows, 2]]
    shifted.values[observed_test, 2] += 100.0
    other = impute_chained(shifted, cfg, train_rows=train)[0]
    train_holes = train[mtx.missing_mask[train, 2]]
    assert np.array_equal(base.values[train_holes, 2], other.values[train_holes, 2])


def test_config_validation():
    with pytest.raises(ValueError):
        ImputationConfig(m=0).validate()
    with pytest.raises(ValueError):
        ImputationConfig(n_iterations=0).validate()
