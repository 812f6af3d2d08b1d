"""Observation-span feature engineering: 39 predictors from the three tables.

Course- and term-level numerics are aggregated per term first and then rolled
into cumulative averages over terms 1..n, so the value at span n depends only
on what was observable by then.  The declared major is deliberately not a
predictor; it only serves as the grouping key for the credits-relative-to-
major-average statistic.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd

from . import schema
from .schema import Cohort, at_risk_population, label_cohort

INTERNATIONAL_LEVELS = ["Domestic", "InternationalNoTOEFL", "InternationalTOEFL"]

NUMERIC, BOOLEAN, CATEGORICAL = "numeric", "boolean", "categorical"
PRE_ENTRY, TERM_LEVEL, COURSE_LEVEL = "pre_entry", "term_level", "course_level"


class FeatureError(ValueError):
    pass


@dataclass(frozen=True)
class Predictor:
    name: str
    source: str            # pre_entry | term_level | course_level
    kind: str              # numeric | boolean | categorical
    levels: tuple[str, ...] | None = None   # None for data-driven categoricals

    @property
    def available_from_span(self) -> int:
        return 0 if self.source == PRE_ENTRY else 1


def default_catalog() -> list[Predictor]:
    """The 39-predictor roster (declared major excluded)."""
    cat = [
        Predictor("female", PRE_ENTRY, BOOLEAN),
        Predictor("age_at_enrollment", PRE_ENTRY, NUMERIC),
        Predictor("international_status", PRE_ENTRY, CATEGORICAL, tuple(INTERNATIONAL_LEVELS)),
        Predictor("ethnicity", PRE_ENTRY, CATEGORICAL, tuple(schema.ETHNICITY_LEVELS)),
        Predictor("citizenship", PRE_ENTRY, CATEGORICAL, tuple(schema.CITIZENSHIP_LEVELS)),
        Predictor("residency", PRE_ENTRY, CATEGORICAL, tuple(schema.RESIDENCY_LEVELS)),
        Predictor("geographic_category", PRE_ENTRY, CATEGORICAL, tuple(schema.GEOGRAPHIC_LEVELS)),
        Predictor("distance_from_home", PRE_ENTRY, NUMERIC),
        Predictor("first_generation", PRE_ENTRY, BOOLEAN),
        Predictor("low_income", PRE_ENTRY, BOOLEAN),
        Predictor("parent1_education", PRE_ENTRY, NUMERIC),   # ordinal 1..7
        Predictor("parent2_education", PRE_ENTRY, NUMERIC),
        Predictor("household_size", PRE_ENTRY, NUMERIC),
        Predictor("single_parent", PRE_ENTRY, BOOLEAN),
        Predictor("english_language_learner", PRE_ENTRY, BOOLEAN),
        Predictor("hs_gpa", PRE_ENTRY, NUMERIC),
        Predictor("sat_math", PRE_ENTRY, NUMERIC),
        Predictor("sat_writing", PRE_ENTRY, NUMERIC),
        Predictor("sat_reading", PRE_ENTRY, NUMERIC),
        Predictor("best_ap_score", PRE_ENTRY, NUMERIC),
        Predictor("entry_level", PRE_ENTRY, CATEGORICAL, tuple(schema.ENTRY_LEVELS)),
        Predictor("num_majors", TERM_LEVEL, NUMERIC),
        Predictor("num_school_affiliations", TERM_LEVEL, NUMERIC),
        Predictor("primary_school", TERM_LEVEL, CATEGORICAL, None),
        Predictor("major_changes", TERM_LEVEL, NUMERIC),
        Predictor("school_changes", TERM_LEVEL, NUMERIC),
        Predictor("enrolled_terms", TERM_LEVEL, NUMERIC),
        Predictor("honors", TERM_LEVEL, BOOLEAN),
        Predictor("stem_major", TERM_LEVEL, BOOLEAN),
        Predictor("courses_per_term", TERM_LEVEL, NUMERIC),
        Predictor("year_of_study", TERM_LEVEL, CATEGORICAL, tuple(schema.YEAR_OF_STUDY_LEVELS)),
        Predictor("college_gpa", COURSE_LEVEL, NUMERIC),
        Predictor("pass_ratio", COURSE_LEVEL, NUMERIC),
        Predictor("frac_same_gender", COURSE_LEVEL, NUMERIC),
        Predictor("frac_first_generation", COURSE_LEVEL, NUMERIC),
        Predictor("frac_same_ethnicity", COURSE_LEVEL, NUMERIC),
        Predictor("credit_slope", COURSE_LEVEL, NUMERIC),
        Predictor("credits_rel_major_avg", COURSE_LEVEL, NUMERIC),
        Predictor("frac_courses_major_school", COURSE_LEVEL, NUMERIC),
    ]
    assert len(cat) == 39
    return cat


def credit_slope(per_term_credits) -> float:
    """OLS slope of a credit-load sequence against term position 1..L.

    A single observation carries no trend information and returns 0.
    """
    c = np.asarray(per_term_credits, dtype=float)
    if c.size == 0:
        raise FeatureError("credit sequence must be nonempty")
    if c.size == 1:
        return 0.0
    x = np.arange(1, c.size + 1, dtype=float)
    xc = x - x.mean()
    return float((xc * (c - c.mean())).sum() / (xc * xc).sum())


@dataclass
class TruncatedCohort:
    """A cohort view restricted to terms 1..span and the at-risk population."""

    students: pd.DataFrame
    terms: pd.DataFrame
    courses: pd.DataFrame
    span: int
    labels: pd.DataFrame          # full-window labels for the retained students
    n_terms_window: int


def truncate_to_span(cohort: Cohort, n_terms: int) -> TruncatedCohort:
    if not 0 <= n_terms <= cohort.n_terms_window:
        raise FeatureError(f"span must be in [0, {cohort.n_terms_window}]")
    keep = at_risk_population(cohort, n_terms)
    students = cohort.students[cohort.students["student_id"].isin(keep)]
    students = students.sort_values("student_id").reset_index(drop=True)
    terms = cohort.terms[
        cohort.terms["student_id"].isin(keep)
        & (cohort.terms["term_index"] <= n_terms)
    ].reset_index(drop=True)
    courses = cohort.courses[
        cohort.courses["student_id"].isin(keep)
        & (cohort.courses["term_index"] <= n_terms)
    ].reset_index(drop=True)
    labels = label_cohort(cohort)
    labels = labels[labels["student_id"].isin(keep)].sort_values("student_id").reset_index(drop=True)
    return TruncatedCohort(
        students=students,
        terms=terms,
        courses=courses,
        span=n_terms,
        labels=labels,
        n_terms_window=cohort.n_terms_window,
    )


@dataclass
class FeatureMatrix:
    """Design matrix in native form: one column per predictor.

    Categorical values are stored as level codes; NaN marks a missing cell.
    ``column_groups`` maps each predictor to its column indices (identity
    here; widened by encoding).
    """

    student_ids: list[str]
    predictors: list[Predictor]
    values: np.ndarray            # (n_rows, n_predictors) float64
    labels: np.ndarray            # (n_rows,) int 0/1
    span: int
    aux: dict = field(default_factory=dict)

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def names(self) -> list[str]:
        return [p.name for p in self.predictors]

    @property
    def column_groups(self) -> dict[str, list[int]]:
        return {p.name: [i] for i, p in enumerate(self.predictors)}

    @property
    def missing_mask(self) -> np.ndarray:
        return np.isnan(self.values)

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.names.index(name)]

    def predictor(self, name: str) -> Predictor:
        return self.predictors[self.names.index(name)]

    def copy(self) -> "FeatureMatrix":
        return FeatureMatrix(
            student_ids=list(self.student_ids),
            predictors=list(self.predictors),
            values=self.values.copy(),
            labels=self.labels.copy(),
            span=self.span,
            aux={k: (v.copy() if isinstance(v, np.ndarray) else v) for k, v in self.aux.items()},
        )

    def drop_predictors(self, names: set[str]) -> "FeatureMatrix":
        keep = [i for i, p in enumerate(self.predictors) if p.name not in names]
        return replace(
            self,
            predictors=[self.predictors[i] for i in keep],
            values=self.values[:, keep],
        )

    def take(self, rows: np.ndarray) -> "FeatureMatrix":
        rows = np.asarray(rows)
        return FeatureMatrix(
            student_ids=[self.student_ids[i] for i in rows],
            predictors=list(self.predictors),
            values=self.values[rows],
            labels=self.labels[rows],
            span=self.span,
            aux={k: (v[rows] if isinstance(v, np.ndarray) else v) for k, v in self.aux.items()},
        )

    def with_predictor(self, predictor: Predictor, values: np.ndarray) -> "FeatureMatrix":
        out = self.copy()
        out.predictors = out.predictors + [predictor]
        out.values = np.column_stack([out.values, np.asarray(values, dtype=float)])
        return out

    def refit_major_ratio(self, train_rows: np.ndarray | None = None) -> "FeatureMatrix":
        """Recompute credits_rel_major_avg from training rows only.

        The major-average credit load is a fitted statistic; inside a CV loop
        it must come from the training fold to keep test rows unseen.
        """
        if "credits_rel_major_avg" not in self.names:
            return self
        out = self.copy()
        col = out.names.index("credits_rel_major_avg")
        mean_credits = out.aux["mean_term_credits"]
        majors = out.aux["primary_major_code"]
        rows = np.arange(out.n_rows) if train_rows is None else np.asarray(train_rows)
        fit_credits = mean_credits[rows]
        fit_majors = majors[rows]
        ok = ~np.isnan(fit_credits) & (fit_majors >= 0)
        global_avg = float(np.nanmean(fit_credits[ok])) if ok.any() else np.nan
        avg_by_major: dict[int, float] = {}
        for m in np.unique(fit_majors[ok]):
            avg_by_major[int(m)] = float(fit_credits[ok][fit_majors[ok] == m].mean())
        denom = np.array(
            [avg_by_major.get(int(m), global_avg) if m >= 0 else global_avg for m in majors]
        )
        out.values[:, col] = mean_credits / denom
        return out

    def group_mask(self, attribute: str) -> np.ndarray:
        """Boolean row mask for one of the five grouping attributes.

        Masks are captured at build time, so they survive predictor
        screening: grouping is population metadata, not a model input.
        """
        groups = self.aux.get("groups", {})
        if attribute not in groups:
            if attribute == "stem":
                raise FeatureError("stem grouping needs a span >= 1 matrix")
            raise FeatureError(f"unknown grouping attribute {attribute!r}")
        return groups[attribute].copy()


def _ordinal(series: pd.Series, levels: list[str]) -> np.ndarray:
    codes = series.map({lv: i + 1 for i, lv in enumerate(levels)})
    return pd.to_numeric(codes, errors="coerce").to_numpy(dtype=float)


def _cat_codes(series: pd.Series, levels: tuple[str, ...]) -> np.ndarray:
    codes = series.astype("object").map({lv: float(i) for i, lv in enumerate(levels)})
    return pd.to_numeric(codes, errors="coerce").to_numpy(dtype=float)


def _bool_col(series: pd.Series) -> np.ndarray:
    out = pd.to_numeric(series.map({True: 1.0, False: 0.0, 1: 1.0, 0: 0.0}), errors="coerce")
    return out.to_numpy(dtype=float)


def build_feature_matrix(trunc: TruncatedCohort,
                         catalog: list[Predictor] | None = None,
                         n_terms: int | None = None) -> FeatureMatrix:
    """Encode the truncated cohort as the per-predictor design matrix.

    At span 0 only pre-entry predictors are present.  Post-entry aggregates of
    students without enrolled terms in the span are left missing for the
    imputation stage.  A missing best AP score structurally means "no exam
    taken" and becomes 0 rather than a missing cell.
    """
    span = trunc.span if n_terms is None else n_terms
    catalog = list(default_catalog()) if catalog is None else list(catalog)
    active = [p for p in catalog if p.available_from_span <= span]

    students = trunc.students.sort_values("student_id").reset_index(drop=True)
    ids = students["student_id"].tolist()
    n = len(ids)
    labels = (
        trunc.labels.set_index("student_id")["is_dropout"].reindex(ids).astype(bool).to_numpy()
    )

    # resolve data-driven categorical levels (primary_school) from the term table
    resolved: list[Predictor] = []
    for p in active:
        if p.kind == CATEGORICAL and p.levels is None:
            lv = tuple(sorted(trunc.terms["primary_school"].dropna().astype(str).unique()))
            resolved.append(replace(p, levels=lv if lv else ("none",)))
        else:
            resolved.append(p)

    term_stats, course_stats, aux = _post_entry_stats(trunc, span, ids)

    cols = []
    for p in resolved:
        if p.source == PRE_ENTRY:
            cols.append(_pre_entry_column(p, students))
        else:
            src = term_stats if p.name in term_stats else course_stats
            cols.append(src[p.name])
    values = np.column_stack(cols) if cols else np.empty((n, 0))

    mat = FeatureMatrix(
        student_ids=ids,
        predictors=resolved,
        values=values,
        labels=labels.astype(int),
        span=span,
        aux=aux,
    )
    aux["groups"] = _grouping_masks(mat, students)
    if "credits_rel_major_avg" in mat.names:
        mat = mat.refit_major_ratio(None)
    return mat


def _grouping_masks(mat: FeatureMatrix, students: pd.DataFrame) -> dict[str, np.ndarray]:
    masks = {}
    for attr in ("female", "first_generation", "low_income"):
        masks[attr] = students[attr].astype(bool).to_numpy()
    masks["urm"] = students["ethnicity"].isin(schema.URM_ETHNICITIES).to_numpy()
    if "stem_major" in mat.names:
        masks["stem"] = mat.column("stem_major") == 1.0
    return masks


def _pre_entry_column(p: Predictor, students: pd.DataFrame) -> np.ndarray:
    if p.name == "international_status":
        intl = students["international"].map({True: 1, False: 0, 1: 1, 0: 0})
        toefl = students["took_toefl"].map({True: 1, False: 0, 1: 1, 0: 0})
        code = np.where(intl == 1, np.where(toefl == 1, 2.0, 1.0), 0.0)
        code = np.where(intl.isna(), np.nan, code)
        return code.astype(float)
    if p.name in ("parent1_education", "parent2_education"):
        return _ordinal(students[p.name], schema.PARENT_EDUCATION_LEVELS)
    if p.kind == BOOLEAN:
        return _bool_col(students[p.name])
    if p.kind == CATEGORICAL:
        return _cat_codes(students[p.name], p.levels)
    if p.name == "best_ap_score":
        v = pd.to_numeric(students[p.name], errors="coerce").to_numpy(dtype=float)
        return np.where(np.isnan(v), 0.0, v)
    return pd.to_numeric(students[p.name], errors="coerce").to_numpy(dtype=float)


def _post_entry_stats(trunc: TruncatedCohort, span: int, ids: list[str]):
    """Term- and course-level aggregates per student over terms 1..span."""
    n = len(ids)
    pos = {sid: i for i, sid in enumerate(ids)}
    nan = lambda: np.full(n, np.nan)
    term_stats = {
        k: nan()
        for k in (
            "num_majors", "num_school_affiliations", "major_changes", "school_changes",
            "enrolled_terms", "honors", "stem_major", "courses_per_term",
        )
    }
    term_stats["primary_school"] = nan()
    term_stats["year_of_study"] = nan()
    course_stats = {
        k: nan()
        for k in (
            "college_gpa", "pass_ratio", "frac_same_gender", "frac_first_generation",
            "frac_same_ethnicity", "credit_slope", "credits_rel_major_avg",
            "frac_courses_major_school",
        )
    }
    aux = {
        "mean_term_credits": nan(),
        "primary_major_code": np.full(n, -1, dtype=int),
    }
    if span == 0:
        return term_stats, course_stats, aux

    def put(series: pd.Series, out: np.ndarray) -> None:
        idx = series.index.map(pos)
        ok = idx.notna()
        out[idx[ok].astype(int)] = series[ok].to_numpy(dtype=float)

    terms = trunc.terms[trunc.terms["enrolled"].astype(bool)].copy()
    terms = terms.sort_values(["student_id", "term_index"], kind="mergesort")
    school_levels = tuple(sorted(trunc.terms["primary_school"].dropna().astype(str).unique()))
    school_code = {s: float(i) for i, s in enumerate(school_levels)}
    year_code = {lv: float(i) for i, lv in enumerate(schema.YEAR_OF_STUDY_LEVELS)}
    major_levels = sorted(trunc.terms["primary_major"].dropna().astype(str).unique())
    major_code = {m: float(i) for i, m in enumerate(major_levels)}
    aux["major_levels"] = major_levels

    if len(terms):
        g = terms.groupby("student_id", sort=False)
        last = g.tail(1).set_index("student_id")
        put(pd.to_numeric(last["num_majors"]), term_stats["num_majors"])
        put(pd.to_numeric(last["num_school_affiliations"]), term_stats["num_school_affiliations"])
        put(last["primary_school"].astype(str).map(school_code), term_stats["primary_school"])
        put(last["year_of_study"].astype(str).map(year_code), term_stats["year_of_study"])
        put(last["stem_major"].astype(bool).astype(float), term_stats["stem_major"])
        put(g.size().astype(float), term_stats["enrolled_terms"])
        put((g["honors_flag"].sum() >= 3).astype(float), term_stats["honors"])
        same_student = terms["student_id"] == terms["student_id"].shift()
        major_chg = same_student & (terms["primary_major"] != terms["primary_major"].shift())
        school_chg = same_student & (terms["primary_school"] != terms["primary_school"].shift())
        put(major_chg.groupby(terms["student_id"]).sum().astype(float), term_stats["major_changes"])
        put(school_chg.groupby(terms["student_id"]).sum().astype(float), term_stats["school_changes"])
        maj = last["primary_major"].astype(str).map(major_code)
        idx = maj.index.map(pos)
        ok = idx.notna() & maj.notna()
        aux["primary_major_code"][idx[ok].astype(int)] = maj[ok].astype(int)

    crs = trunc.courses
    if len(crs):
        graded = crs[crs["final_grade"].notna()].copy()
        graded["gw"] = pd.to_numeric(graded["final_grade"]) * pd.to_numeric(graded["credits"])
        g_agg = graded.groupby(["student_id", "term_index"]).agg(
            gw=("gw", "sum"), gcred=("credits", "sum")
        )
        by_term = crs.groupby(["student_id", "term_index"]).agg(
            n_courses=("course_id", "count"),
            credits=("credits", "sum"),
            passed=("passed", "mean"),
            fsg=("frac_same_gender", "mean"),
            ffg=("frac_first_generation", "mean"),
            fse=("frac_same_ethnicity", "mean"),
        ).join(g_agg, how="left")
        by_term["term_gpa"] = by_term["gw"] / by_term["gcred"]
        by_term = by_term.reset_index().sort_values(
            ["student_id", "term_index"], kind="mergesort"
        )

        g2 = by_term.groupby("student_id", sort=False)
        agg = g2.agg(
            total_courses=("n_courses", "sum"),
            college_gpa=("term_gpa", "mean"),
            pass_ratio=("passed", "mean"),
            fsg=("fsg", "mean"),
            ffg=("ffg", "mean"),
            fse=("fse", "mean"),
            mean_credits=("credits", "mean"),
        )
        put(agg["college_gpa"], course_stats["college_gpa"])
        put(agg["pass_ratio"], course_stats["pass_ratio"])
        put(agg["fsg"], course_stats["frac_same_gender"])
        put(agg["ffg"], course_stats["frac_first_generation"])
        put(agg["fse"], course_stats["frac_same_ethnicity"])
        put(agg["mean_credits"], aux["mean_term_credits"])
        cpt = agg["total_courses"].to_numpy(dtype=float)
        enrolled_at = agg.index.map(pos)
        ok = enrolled_at.notna()
        rows = enrolled_at[ok].astype(int)
        denom = term_stats["enrolled_terms"][rows]
        term_stats["courses_per_term"][rows] = cpt[np.asarray(ok)] / denom

        # per-student OLS slope of credit load against term position 1..L
        x = g2.cumcount().to_numpy(dtype=float) + 1.0
        y = by_term["credits"].to_numpy(dtype=float)
        sdf = pd.DataFrame({
            "student_id": by_term["student_id"], "x": x, "y": y,
            "xy": x * y, "x2": x * x,
        })
        s = sdf.groupby("student_id", sort=False).agg(
            L=("x", "size"), sx=("x", "sum"), sy=("y", "sum"),
            sxy=("xy", "sum"), sx2=("x2", "sum"),
        )
        denom = s["L"] * s["sx2"] - s["sx"] ** 2
        slope = np.where(
            s["L"] > 1,
            (s["L"] * s["sxy"] - s["sx"] * s["sy"]) / np.where(denom == 0, 1.0, denom),
            0.0,
        )
        put(pd.Series(slope, index=s.index), course_stats["credit_slope"])

        span_schools = terms[["student_id", "primary_school"]].drop_duplicates()
        hit = crs[["student_id", "offering_school"]].merge(
            span_schools,
            left_on=["student_id", "offering_school"],
            right_on=["student_id", "primary_school"],
            how="left",
            indicator=True,
        )
        in_own = (hit["_merge"] == "both").to_numpy()
        frac = pd.Series(in_own, index=crs.index).groupby(crs["student_id"]).mean()
        put(frac, course_stats["frac_courses_major_school"])

    # ratio column gets its real values from refit_major_ratio
    course_stats["credits_rel_major_avg"] = aux["mean_term_credits"].copy()
    return term_stats, course_stats, aux


# ---------------------------------------------------------------------------
# model-facing encodings
# ---------------------------------------------------------------------------

NATIVE_FAMILIES = {"RandomForest"}
BINNED_FAMILIES = {"NaiveBayes"}
N_QUANTILE_BINS = 5


@dataclass
class EncodedMatrix:
    X: np.ndarray
    column_groups: dict[str, list[int]]
    descriptor: dict
    cat_mask: np.ndarray          # per encoded column: treat as categorical codes
    n_levels: np.ndarray          # per encoded column: level count (0 for numeric)

    @property
    def names(self) -> list[str]:
        return list(self.column_groups)


def encode_for_model(matrix: FeatureMatrix, family: str,
                     train_rows: np.ndarray | None = None) -> EncodedMatrix:
    """Family-specific encoding of a complete (imputed) matrix.

    Tree and naive Bayes models get native categorical codes (naive Bayes
    with numerics discretized into train-fitted quantile bins); the other
    families get one-hot categoricals plus z-standardized numerics with
    statistics fit on training rows only.
    """
    if np.isnan(matrix.values).any():
        raise FeatureError("encode_for_model requires a complete matrix; impute first")
    rows = np.arange(matrix.n_rows) if train_rows is None else np.asarray(train_rows)
    if family in NATIVE_FAMILIES:
        return _encode_native(matrix)
    if family in BINNED_FAMILIES:
        return _encode_binned(matrix, rows)
    return _encode_onehot(matrix, rows)


def _encode_native(matrix: FeatureMatrix) -> EncodedMatrix:
    groups, cat_mask, n_levels = {}, [], []
    for j, p in enumerate(matrix.predictors):
        groups[p.name] = [j]
        cat_mask.append(p.kind == CATEGORICAL)
        n_levels.append(len(p.levels) + 1 if p.kind == CATEGORICAL else 0)
    desc = {"mode": "native", "predictors": _predictor_desc(matrix)}
    return EncodedMatrix(
        X=matrix.values.copy(),
        column_groups=groups,
        descriptor=desc,
        cat_mask=np.array(cat_mask),
        n_levels=np.array(n_levels, dtype=int),
    )


def _encode_binned(matrix: FeatureMatrix, rows: np.ndarray) -> EncodedMatrix:
    X = np.empty_like(matrix.values)
    groups, cat_mask, n_levels, bins = {}, [], [], {}
    for j, p in enumerate(matrix.predictors):
        col = matrix.values[:, j]
        if p.kind == NUMERIC:
            qs = np.quantile(col[rows], np.linspace(0, 1, N_QUANTILE_BINS + 1)[1:-1])
            edges = np.unique(qs)
            X[:, j] = np.searchsorted(edges, col, side="right").astype(float)
            bins[p.name] = edges.tolist()
            n_levels.append(len(edges) + 2)
        elif p.kind == BOOLEAN:
            X[:, j] = col
            n_levels.append(3)
        else:
            X[:, j] = col
            n_levels.append(len(p.levels) + 1)
        groups[p.name] = [j]
        cat_mask.append(True)
    desc = {"mode": "binned", "bins": bins, "predictors": _predictor_desc(matrix)}
    return EncodedMatrix(
        X=X, column_groups=groups, descriptor=desc,
        cat_mask=np.array(cat_mask), n_levels=np.array(n_levels, dtype=int),
    )


def _encode_onehot(matrix: FeatureMatrix, rows: np.ndarray) -> EncodedMatrix:
    cols, groups, cat_mask, n_levels = [], {}, [], []
    stats = {}
    k = 0
    for j, p in enumerate(matrix.predictors):
        col = matrix.values[:, j]
        if p.kind == CATEGORICAL:
            idx = []
            for lv in range(len(p.levels)):
                cols.append((col == float(lv)).astype(float))
                cat_mask.append(False)
                n_levels.append(0)
                idx.append(k)
                k += 1
            groups[p.name] = idx
        elif p.kind == BOOLEAN:
            cols.append(col.astype(float))
            cat_mask.append(False)
            n_levels.append(0)
            groups[p.name] = [k]
            k += 1
        else:
            mu = float(col[rows].mean())
            sd = float(col[rows].std())
            sd = sd if sd > 0 else 1.0
            cols.append((col - mu) / sd)
            stats[p.name] = {"mean": mu, "sd": sd}
            cat_mask.append(False)
            n_levels.append(0)
            groups[p.name] = [k]
            k += 1
    desc = {"mode": "onehot", "standardize": stats, "predictors": _predictor_desc(matrix)}
    return EncodedMatrix(
        X=np.column_stack(cols),
        column_groups=groups,
        descriptor=desc,
        cat_mask=np.array(cat_mask),
        n_levels=np.array(n_levels, dtype=int),
    )


def _predictor_desc(matrix: FeatureMatrix) -> list[dict]:
    return [
        {"name": p.name, "source": p.source, "kind": p.kind,
         "levels": list(p.levels) if p.levels else None}
        for p in matrix.predictors
    ]


def apply_encoding(matrix: FeatureMatrix, descriptor: dict) -> EncodedMatrix:
    """Re-encode new rows under a previously fitted descriptor.

    Level codes outside the fitted range (including codes for levels unseen
    at fit time, stored as NaN) map to the explicit unknown bucket: the
    reserved trailing code for native/binned encodings, the all-zero block
    for one-hot.
    """
    fitted = descriptor["predictors"]
    if [p.name for p in matrix.predictors] != [d["name"] for d in fitted]:
        raise FeatureError("matrix predictors do not match the fitted encoding")
    mode = descriptor["mode"]
    cols, groups, cat_mask, n_levels = [], {}, [], []
    k = 0
    for j, (p, d) in enumerate(zip(matrix.predictors, fitted)):
        col = matrix.values[:, j].astype(float)
        if p.kind == CATEGORICAL:
            levels = d["levels"] or []
            unknown = float(len(levels))
            col = np.where(np.isnan(col) | (col < 0) | (col >= len(levels)), unknown, col)
            if mode == "onehot":
                idx = []
                for lv in range(len(levels)):
                    cols.append((col == float(lv)).astype(float))
                    cat_mask.append(False)
                    n_levels.append(0)
                    idx.append(k)
                    k += 1
                groups[p.name] = idx
                continue
            cols.append(col)
            cat_mask.append(True)
            n_levels.append(len(levels) + 1)
        elif np.isnan(col).any():
            raise FeatureError(f"predictor {p.name!r} has missing values; impute first")
        elif p.kind == NUMERIC and mode == "onehot":
            s = descriptor["standardize"][p.name]
            cols.append((col - s["mean"]) / s["sd"])
            cat_mask.append(False)
            n_levels.append(0)
        elif p.kind == NUMERIC and mode == "binned":
            edges = np.asarray(descriptor["bins"][p.name])
            cols.append(np.searchsorted(edges, col, side="right").astype(float))
            cat_mask.append(True)
            n_levels.append(len(edges) + 2)
        else:
            cols.append(col)
            cat_mask.append(mode == "binned")
            n_levels.append(3 if mode == "binned" else 0)
        groups[p.name] = [k]
        k += 1
    return EncodedMatrix(
        X=np.column_stack(cols), column_groups=groups, descriptor=descriptor,
        cat_mask=np.array(cat_mask), n_levels=np.array(n_levels, dtype=int),
    )


def export_matrix_csv(matrix: FeatureMatrix, path: str | Path) -> None:
    """Matrix as CSV plus a sidecar JSON describing columns and groups."""
    path = Path(path)
    df = pd.DataFrame(matrix.values, columns=matrix.names)
    df.insert(0, "student_id", matrix.student_ids)
    df["is_dropout"] = matrix.labels
    df.to_csv(path, index=False)
    sidecar = {
        "span": matrix.span,
        "column_groups": matrix.column_groups,
        "predictors": _predictor_desc(matrix),
    }
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2))
