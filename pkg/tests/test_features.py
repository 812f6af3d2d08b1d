import numpy as np
import pandas as pd
import pytest

from attrition import features, schema
from attrition.features import (
    FeatureError,
    build_feature_matrix,
    credit_slope,
    default_catalog,
    encode_for_model,
    truncate_to_span,
)
from attrition.schema import Cohort


def ols_slope_oracle(y):
    """Normal-equations slope against positions 1..n."""
    y = np.asarray(y, dtype=float)
    x = np.arange(1, len(y) + 1, dtype=float)
    X = np.column_stack([x, np.ones_like(x)])
    beta = np.linalg.solve(X.T @ X, X.T @ y)
    return beta[0]


def test_credit_slope_constant_and_linear():
    assert credit_slope([12, 12, 12]) == 0.0
    assert credit_slope([12, 14, 16]) == pytest.approx(2.0)
    assert credit_slope([7.5]) == 0.0


def test_credit_slope_matches_normal_equations(rng):
    for _ in range(200):
        n = int(rng.integers(2, 15))
        y = rng.normal(12, 3, n)
        assert credit_slope(y) == pytest.approx(ols_slope_oracle(y), abs=1e-9)


def test_catalog_has_exactly_39_predictors():
    cat = default_catalog()
    assert len(cat) == 39
    names = [p.name for p in cat]
    assert len(set(names)) == 39
    assert "primary_major" not in names and "declared_major" not in names
    assert sum(p.source == features.PRE_ENTRY for p in cat) == 21
    for p in cat:
        assert p.available_from_span == (0 if p.source == features.PRE_ENTRY else 1)


def _handmade_cohort():
    """Two students: one with two graded terms (GPA 3.0 then 4.0), one enrolled
    in terms 1 and 2 of a 3-term window."""
    students = pd.DataFrame({
        "student_id": ["a", "b"],
        "cohort_year": [2012, 2012],
        "female": [True, False],
        "age_at_enrollment": [18.0, 19.0],
        "international": [False, False],
        "took_toefl": [False, False],
        "ethnicity": ["Hispanic", "Black"],
        "citizenship": ["USCitizen", "USCitizen"],
        "residency": ["InState", "InState"],
        "geographic_category": ["SouthernCalifornia", "NorthernCalifornia"],
        "distance_from_home": [10.0, 700.0],
        "first_generation": [True, False],
        "low_income": [False, True],
        "parent1_education": ["SomeCollege", "NoHighSchool"],
        "parent2_education": ["SomeCollege", "SomeHighSchool"],
        "household_size": [4, 3],
        "single_parent": [False, False],
        "english_language_learner": [False, True],
        "hs_gpa": [3.7, np.nan],
        "sat_math": [650.0, 500.0],
        "sat_writing": [640.0, 510.0],
        "sat_reading": [620.0, 520.0],
        "best_ap_score": [4, np.nan],
        "entry_level": ["Freshman", "Freshman"],
        "graduated": [False, False],
        "graduation_term": [None, None],
    })
    def term(sid, t, school="Engineering", major="Engineering-M1"):
        return {
            "student_id": sid, "term_index": t, "enrolled": True,
            "num_majors": 1, "num_school_affiliations": 1,
            "primary_school": school, "primary_major": major,
            "honors_flag": False, "stem_major": True, "year_of_study": "1",
        }
    terms = pd.DataFrame([term("a", 1), term("a", 2), term("b", 1), term("b", 2)])
    def course(sid, t, grade, credits, school="Engineering"):
        return {
            "student_id": sid, "term_index": t, "course_id": f"c{t}",
            "credits": credits, "passed": grade is None or grade >= 1.7,
            "final_grade": grade, "class_size": 30,
            "frac_same_gender": 0.5, "frac_first_generation": 0.4,
            "frac_same_ethnicity": 0.3, "offering_school": school,
        }
    courses = pd.DataFrame([
        # student a, term 1: credit-weighted mean = 3.0
        course("a", 1, 3.0, 4.0),
        course("a", 1, 3.0, 2.0, school="Humanities"),
        # student a, term 2: single graded course at 4.0
        course("a", 2, 4.0, 4.0),
        course("b", 1, 2.0, 3.0),
        course("b", 2, 1.0, 3.0),
    ])
    return Cohort(students=students, terms=terms, courses=courses, n_terms_window=3)


def test_cumulative_gpa_is_unweighted_across_terms():
    c = _handmade_cohort()
    m = build_feature_matrix(truncate_to_span(c, 2))
    row = m.student_ids.index("a")
    assert m.column("college_gpa")[row] == pytest.approx(3.5)
    # two of three courses offered by the student's own school
    assert m.column("frac_courses_major_school")[row] == pytest.approx(2 / 3)


def test_enrolled_terms_counts_only_enrollment():
    c = _handmade_cohort()
    m = build_feature_matrix(truncate_to_span(c, 3))
    # both students enrolled terms 1-2 only within the 3-term span
    assert set(m.column("enrolled_terms")) == {2.0}


def test_missing_ap_score_is_structurally_zero():
    c = _handmade_cohort()
    m = build_feature_matrix(truncate_to_span(c, 2))
    row = m.student_ids.index("b")
    assert m.column("best_ap_score")[row] == 0.0
    assert np.isnan(m.column("hs_gpa")[row])   # genuinely missing, left for imputation


def test_full_matrix_has_39_groups(matrix3):
    assert len(matrix3.column_groups) == 39
    assert matrix3.values.shape[1] == 39
    union = sorted(i for cols in matrix3.column_groups.values() for i in cols)
    assert union == list(range(39))


def test_span_zero_matrix_is_pre_entry_only(small_cohort):
    m = build_feature_matrix(truncate_to_span(small_cohort, 0))
    assert len(m.predictors) == 21
    assert all(p.source == features.PRE_ENTRY for p in m.predictors)


def test_pre_entry_columns_agree_across_spans(small_cohort, matrix3):
    m0 = build_feature_matrix(truncate_to_span(small_cohort, 0))
    ids3 = {sid: i for i, sid in enumerate(matrix3.student_ids)}
    keep = [ids3[sid] for sid in m0.student_ids if sid in ids3]
    keep0 = [i for i, sid in enumerate(m0.student_ids) if sid in ids3]
    for p in m0.predictors:
        a = m0.column(p.name)[keep0]
        b = matrix3.column(p.name)[keep]
        assert np.allclose(a, b, equal_nan=True)


def test_truncation_beyond_last_term_changes_nothing():
    c = _handmade_cohort()
    m2 = build_feature_matrix(truncate_to_span(c, 2))
    m3 = build_feature_matrix(truncate_to_span(c, 3))
    for name in ("college_gpa", "enrolled_terms", "pass_ratio", "credit_slope"):
        assert np.allclose(m2.column(name), m3.column(name), equal_nan=True)


def test_at_risk_filter_applied_at_span(small_cohort):
    m5 = build_feature_matrix(truncate_to_span(small_cohort, 5))
    at_risk = schema.at_risk_population(small_cohort, 5)
    assert set(m5.student_ids) == at_risk


def test_student_without_enrollment_keeps_row_with_missing_aggregates():
    c = _handmade_cohort()
    # drop all of b's term and course rows: zero enrolled terms in any span
    c = Cohort(
        students=c.students,
        terms=c.terms[c.terms["student_id"] != "b"].reset_index(drop=True),
        courses=c.courses[c.courses["student_id"] != "b"].reset_index(drop=True),
        n_terms_window=3,
    )
    m = build_feature_matrix(truncate_to_span(c, 2))
    assert "b" in m.student_ids
    row = m.student_ids.index("b")
    assert np.isnan(m.column("college_gpa")[row])
    assert np.isnan(m.column("enrolled_terms")[row])


def test_standardized_numerics_on_training_rows(matrix3):
    complete = matrix3.copy()
    complete.values = np.nan_to_num(complete.values, nan=0.0)
    train = np.arange(0, complete.n_rows, 2)
    enc = encode_for_model(complete, "Logistic", train_rows=train)
    col = enc.column_groups["hs_gpa"][0]
    assert enc.X[train, col].mean() == pytest.approx(0.0, abs=1e-9)
    assert enc.X[train, col].std() == pytest.approx(1.0, abs=1e-9)


def test_onehot_groups_cover_all_levels(matrix3):
    complete = matrix3.copy()
    complete.values = np.nan_to_num(complete.values, nan=0.0)
    enc = encode_for_model(complete, "SVM")
    assert len(enc.column_groups["ethnicity"]) == 5
    assert len(enc.column_groups["female"]) == 1
    block = enc.X[:, enc.column_groups["ethnicity"]]
    assert set(np.unique(block)) <= {0.0, 1.0}
    assert np.all(block.sum(axis=1) <= 1.0)
    union = sorted(i for cols in enc.column_groups.values() for i in cols)
    assert union == list(range(enc.X.shape[1]))


def test_boolean_is_single_column_everywhere(matrix3):
    complete = matrix3.copy()
    complete.values = np.nan_to_num(complete.values, nan=0.0)
    for family in ("Logistic", "RandomForest", "NaiveBayes"):
        enc = encode_for_model(complete, family)
        assert len(enc.column_groups["female"]) == 1


def test_binned_encoding_discretizes_numerics(matrix3):
    complete = matrix3.copy()
    complete.values = np.nan_to_num(complete.values, nan=0.0)
    enc = encode_for_model(complete, "NaiveBayes")
    col = enc.column_groups["hs_gpa"][0]
    values = np.unique(enc.X[:, col])
    assert len(values) <= 5
    assert np.all(values == values.astype(int))


def test_encode_rejects_incomplete_matrix(matrix3):
    if not np.isnan(matrix3.values).any():
        broken = matrix3.copy()
        broken.values[0, broken.names.index("hs_gpa")] = np.nan
    else:
        broken = matrix3
    with pytest.raises(FeatureError):
        encode_for_model(broken, "Logistic")


def test_major_ratio_refit_uses_training_rows_only(matrix3):
    train = np.arange(matrix3.n_rows // 2)
    refit = matrix3.refit_major_ratio(train)
    col = refit.names.index("credits_rel_major_avg")
    majors = refit.aux["primary_major_code"]
    credits = refit.aux["mean_term_credits"]
    m = majors[train][0]
    rows = train[majors[train] == m]
    avg = np.nanmean(credits[rows])
    got = refit.values[rows[0], col]
    assert got == pytest.approx(credits[rows[0]] / avg)


def test_group_masks(matrix3):
    fem = matrix3.group_mask("female")
    assert fem.dtype == bool and 0 < fem.sum() < matrix3.n_rows
    urm = matrix3.group_mask("urm")
    eth = matrix3.predictor("ethnicity")
    codes = matrix3.column("ethnicity")
    urm_codes = {eth.levels.index(e) for e in schema.URM_ETHNICITIES}
    assert np.array_equal(urm, np.isin(codes, list(urm_codes)))


def test_matrix_export_round_trip(matrix3, tmp_path):
    features.export_matrix_csv(matrix3, tmp_path / "matrix.csv")
    df = pd.read_csv(tmp_path / "matrix.csv")
    assert len(df) == matrix3.n_rows
    assert "is_dropout" in df.columns
    sidecar = (tmp_path / "matrix.json").read_text()
    assert "column_groups" in sidecar


def test_apply_encoding_reuses_fit_and_handles_unknown_levels(matrix3):
    complete = matrix3.copy()
    complete.values = np.nan_to_num(complete.values, nan=0.0)
    train = np.arange(0, complete.n_rows, 2)
    for family in ("Logistic", "RandomForest", "NaiveBayes"):
        enc = features.encode_for_model(complete, family, train_rows=train)
        again = features.apply_encoding(complete, enc.descriptor)
        assert np.allclose(enc.X, again.X)
        # an unseen school level maps to the explicit unknown bucket
        fresh = complete.copy()
        col = fresh.names.index("primary_school")
        fresh.values[0, col] = np.nan
        out = features.apply_encoding(fresh, enc.descriptor)
        if family == "Logistic":
            block = out.X[0, out.column_groups["primary_school"]]
            assert np.all(block == 0.0)
        else:
            n_known = len(complete.predictor("primary_school").levels)
            assert out.X[0, out.column_groups["primary_school"][0]] == float(n_known)


def test_apply_encoding_rejects_schema_mismatch(matrix3):
    complete = matrix3.copy()
    complete.values = np.nan_to_num(complete.values, nan=0.0)
    enc = features.encode_for_model(complete, "Logistic")
    smaller = complete.drop_predictors({"hs_gpa"})
    with pytest.raises(features.FeatureError):
        features.apply_encoding(smaller, enc.descriptor)
