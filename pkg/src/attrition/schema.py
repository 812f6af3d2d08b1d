"""Administrative data model and the dropout labeling rule.

Three tables describe a cohort: one row per student (pre-entry attributes),
one row per enrolled term, and one row per course enrollment.  A student is
a dropout when their enrollment history contains a gap of at least
``GAP_TERMS`` consecutive terms and they never graduated.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

#: Consecutive non-enrolled terms that mark a dropout.
GAP_TERMS = 4

#: Academic calendar: three terms per year, no summer term.
TERMS_PER_YEAR = 3

ETHNICITY_LEVELS = [
    "AsianAmerican",
    "Black",
    "Hispanic",
    "Indigenous",
    "WhiteNonHispanic",
]
URM_ETHNICITIES = {"Black", "Hispanic", "Indigenous"}
CITIZENSHIP_LEVELS = ["USCitizen", "PermanentResident", "NotUSCitizen"]
RESIDENCY_LEVELS = ["InState", "BonaFide", "OutOfState"]
GEOGRAPHIC_LEVELS = [
    "ForeignCountry",
    "OutOfState",
    "NorthernCalifornia",
    "SouthernCalifornia",
    "UniversityCounty",
]
PARENT_EDUCATION_LEVELS = [
    "NoHighSchool",
    "SomeHighSchool",
    "HighSchoolGraduate",
    "SomeCollege",
    "TwoYearCollegeGrad",
    "FourYearCollegeGrad",
    "PostgraduateStudy",
]
ENTRY_LEVELS = ["Freshman", "Sophomore", "JuniorSenior"]
YEAR_OF_STUDY_LEVELS = ["1", "2", "3", "4", "5+"]


class SchemaError(ValueError):
    """Raised when input records violate the data model."""


@dataclass(frozen=True)
class StudentRecord:
    student_id: str
    cohort_year: int
    female: bool
    age_at_enrollment: float
    international: bool
    took_toefl: bool
    ethnicity: str
    citizenship: str
    residency: str
    geographic_category: str
    distance_from_home: float
    first_generation: bool
    low_income: bool
    parent1_education: str
    parent2_education: str
    household_size: int
    single_parent: bool
    english_language_learner: bool
    hs_gpa: float
    sat_math: float
    sat_writing: float
    sat_reading: float
    best_ap_score: int
    entry_level: str
    graduated: bool
    graduation_term: int | None = None


@dataclass(frozen=True)
class TermRecord:
    student_id: str
    term_index: int
    enrolled: bool
    num_majors: int
    num_school_affiliations: int
    primary_school: str
    primary_major: str
    honors_flag: bool
    stem_major: bool
    year_of_study: str


@dataclass(frozen=True)
class CourseEnrollment:
    student_id: str
    term_index: int
    course_id: str
    credits: float
    passed: bool
    final_grade: float | None
    class_size: int
    frac_same_gender: float
    frac_first_generation: float
    frac_same_ethnicity: float
    offering_school: str


@dataclass(frozen=True)
class DropoutLabel:
    student_id: str
    is_dropout: bool
    first_gap_term: int | None


STUDENT_COLUMNS = [f.name for f in StudentRecord.__dataclass_fields__.values()]  # type: ignore[attr-defined]
TERM_COLUMNS = [f.name for f in TermRecord.__dataclass_fields__.values()]  # type: ignore[attr-defined]
COURSE_COLUMNS = [f.name for f in CourseEnrollment.__dataclass_fields__.values()]  # type: ignore[attr-defined]

_STUDENT_BOOL = [
    "female",
    "international",
    "took_toefl",
    "first_generation",
    "low_income",
    "single_parent",
    "english_language_learner",
    "graduated",
]
_TERM_BOOL = ["enrolled", "honors_flag", "stem_major"]
_COURSE_BOOL = ["passed"]


@dataclass
class Cohort:
    """The three-table cohort plus optional generator metadata.

    ``missing_mask``/``withheld_values`` are populated by
    :func:`attrition.datagen.inject_missingness` so recovery tests can compare
    imputed cells against the values that were deleted.
    """

    students: pd.DataFrame
    terms: pd.DataFrame
    courses: pd.DataFrame
    n_terms_window: int
    ground_truth: dict | None = None
    missing_mask: pd.DataFrame | None = None
    withheld_values: pd.DataFrame | None = None
    _flag_cache: tuple | None = field(default=None, repr=False, compare=False)

    def student_ids(self) -> list[str]:
        return sorted(self.students["student_id"].tolist())

    def enrollment_flags(self) -> tuple[list[str], np.ndarray]:
        """(sorted student ids, boolean matrix of enrolled flags, terms 1..window)."""
        if self._flag_cache is not None:
            return self._flag_cache
        ids = self.student_ids()
        pos = {sid: i for i, sid in enumerate(ids)}
        flags = np.zeros((len(ids), self.n_terms_window), dtype=bool)
        enrolled = self.terms[self.terms["enrolled"].astype(bool)]
        rows = enrolled["student_id"].map(pos).to_numpy()
        cols = enrolled["term_index"].to_numpy(dtype=int) - 1
        keep = cols < self.n_terms_window
        flags[rows[keep], cols[keep]] = True
        self._flag_cache = (ids, flags)
        return self._flag_cache


def first_long_gap(flags: Sequence[bool] | np.ndarray, min_run: int = GAP_TERMS) -> int | None:
    """1-based start term of the earliest run of >= min_run consecutive gaps.

    Only runs that complete inside the observed window count; a shorter
    trailing run is right-censored and returns None.
    """
    run = 0
    for i, enrolled in enumerate(flags):
        run = 0 if enrolled else run + 1
        if run == min_run:
            return i + 2 - min_run
    return None


def label_dropout(enrollment_flags: Sequence[bool] | np.ndarray, graduated: bool,
                  student_id: str = "") -> DropoutLabel:
    """Apply the dropout rule to one student's enrollment history.

    A student is a dropout iff they never graduated and the observed flags
    contain at least ``GAP_TERMS`` consecutive non-enrolled terms.
    """
    if len(enrollment_flags) == 0:
        raise SchemaError("enrollment_flags must cover at least one term")
    gap = first_long_gap(enrollment_flags)
    is_dropout = (not graduated) and gap is not None
    return DropoutLabel(student_id=student_id, is_dropout=is_dropout, first_gap_term=gap)


def _gap_elapsed_matrix(flags: np.ndarray) -> np.ndarray:
    """Per (student, term t): True when a >=GAP_TERMS run has completed by term t+1."""
    n, width = flags.shape
    run = np.zeros(n, dtype=np.int32)
    elapsed = np.zeros((n, width), dtype=bool)
    done = np.zeros(n, dtype=bool)
    for t in range(width):
        run = np.where(flags[:, t], 0, run + 1)
        done |= run >= GAP_TERMS
        elapsed[:, t] = done
    return elapsed


def at_risk_population(cohort: Cohort, n_terms: int) -> set[str]:
    """Students whose first >=4-term enrollment gap has not fully elapsed by term n_terms.

    At spans 0..GAP_TERMS this is every student, because a gap cannot have
    completed yet (term 1 is always an enrolled term).
    """
    if n_terms < 0:
        raise SchemaError("n_terms must be >= 0")
    ids, flags = cohort.enrollment_flags()
    if n_terms == 0:
        return set(ids)
    window = min(n_terms, cohort.n_terms_window)
    elapsed = _gap_elapsed_matrix(flags[:, :window])[:, -1]
    return {sid for sid, gone in zip(ids, elapsed) if not gone}


def label_cohort(cohort: Cohort) -> pd.DataFrame:
    """Full-window dropout labels, one row per student (sorted by id)."""
    ids, flags = cohort.enrollment_flags()
    grad = (
        cohort.students.set_index("student_id")["graduated"]
        .astype(bool)
        .reindex(ids)
        .to_numpy()
    )
    rows = []
    for sid, f, g in zip(ids, flags, grad):
        lab = label_dropout(f, bool(g), student_id=sid)
        rows.append((sid, lab.is_dropout, lab.first_gap_term))
    return pd.DataFrame(rows, columns=["student_id", "is_dropout", "first_gap_term"])


# ---------------------------------------------------------------------------
# CSV interface: students.csv / terms.csv / courses.csv
# booleans as 0/1, missing values as empty cells
# ---------------------------------------------------------------------------

def _encode_bool(df: pd.DataFrame, cols: Iterable[str]) -> pd.DataFrame:
    out = df.copy()
    for c in cols:
        col = out[c]
        mask = col.notna()
        enc = pd.Series(pd.NA, index=out.index, dtype="object")
        enc[mask] = col[mask].astype(bool).astype(int)
        out[c] = enc
    return out


def _decode_bool(df: pd.DataFrame, cols: Iterable[str]) -> pd.DataFrame:
    out = df.copy()
    for c in cols:
        col = pd.to_numeric(out[c], errors="coerce")
        dec = pd.Series(pd.NA, index=out.index, dtype="object")
        dec[col.notna()] = col[col.notna()] != 0
        out[c] = dec
    return out


def write_cohort_csv(cohort: Cohort, out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "students": out / "students.csv",
        "terms": out / "terms.csv",
        "courses": out / "courses.csv",
    }
    _encode_bool(cohort.students[STUDENT_COLUMNS], _STUDENT_BOOL).to_csv(
        paths["students"], index=False
    )
    _encode_bool(cohort.terms[TERM_COLUMNS], _TERM_BOOL).to_csv(paths["terms"], index=False)
    _encode_bool(cohort.courses[COURSE_COLUMNS], _COURSE_BOOL).to_csv(
        paths["courses"], index=False
    )
    return paths


def read_cohort_csv(in_dir: str | Path, n_terms_window: int | None = None) -> Cohort:
    src = Path(in_dir)
    students = _decode_bool(pd.read_csv(src / "students.csv", dtype={"student_id": str}), _STUDENT_BOOL)
    terms = _decode_bool(pd.read_csv(src / "terms.csv", dtype={"student_id": str}), _TERM_BOOL)
    courses = _decode_bool(
        pd.read_csv(src / "courses.csv", dtype={"student_id": str, "course_id": str}), _COURSE_BOOL
    )
    for df, cols in ((students, STUDENT_COLUMNS), (terms, TERM_COLUMNS), (courses, COURSE_COLUMNS)):
        missing = [c for c in cols if c not in df.columns]
        if missing:
            raise SchemaError(f"missing columns {missing}")
    if n_terms_window is None:
        n_terms_window = int(terms["term_index"].max()) if len(terms) else 1
    return Cohort(students=students, terms=terms, courses=courses, n_terms_window=n_terms_window)


def validate_cohort(cohort: Cohort) -> list[str]:
    """Schema and invariant check; returns a list of human-readable violations."""
    problems: list[str] = []
    students, terms, courses = cohort.students, cohort.terms, cohort.courses

    for df, cols, name in (
        (students, STUDENT_COLUMNS, "students"),
        (terms, TERM_COLUMNS, "terms"),
        (courses, COURSE_COLUMNS, "courses"),
    ):
        extra = [c for c in df.columns if c not in cols]
        if extra:
            problems.append(f"{name}: unexpected columns {extra}")

    if students["student_id"].duplicated().any():
        problems.append("students: duplicated student_id")

    hs = pd.to_numeric(students["household_size"], errors="coerce")
    if (hs.dropna() > 6).any() or (hs.dropna() < 1).any():
        problems.append("students: household_size outside [1, 6]")
    ap = pd.to_numeric(students["best_ap_score"], errors="coerce")
    if ((ap.dropna() < 0) | (ap.dropna() > 5)).any():
        problems.append("students: best_ap_score outside [0, 5]")
    gpa = pd.to_numeric(students["hs_gpa"], errors="coerce")
    if ((gpa.dropna() < 0) | (gpa.dropna() > 5)).any():
        problems.append("students: hs_gpa outside [0, 5]")

    grad = students["graduated"].astype(bool)
    has_term = students["graduation_term"].notna()
    if (grad != has_term).any():
        problems.append("students: graduation_term must be present iff graduated")

    for col, levels in (
        ("ethnicity", ETHNICITY_LEVELS),
        ("citizenship", CITIZENSHIP_LEVELS),
        ("residency", RESIDENCY_LEVELS),
        ("geographic_category", GEOGRAPHIC_LEVELS),
        ("parent1_education", PARENT_EDUCATION_LEVELS),
        ("parent2_education", PARENT_EDUCATION_LEVELS),
        ("entry_level", ENTRY_LEVELS),
    ):
        bad = ~students[col].dropna().isin(levels)
        if bad.any():
            problems.append(f"students: {col} has values outside {levels}")

    if len(terms):
        if (pd.to_numeric(terms["term_index"], errors="coerce") < 1).any():
            problems.append("terms: term_index must be >= 1")
        bad_year = ~terms["year_of_study"].dropna().astype(str).isin(YEAR_OF_STUDY_LEVELS)
        if bad_year.any():
            problems.append("terms: year_of_study has values outside the 1..5+ scale")
        unknown = ~terms["student_id"].isin(students["student_id"])
        if unknown.any():
            problems.append("terms: student_id not present in students")

    if len(courses):
        unknown = ~courses["student_id"].isin(students["student_id"])
        if unknown.any():
            problems.append("courses: student_id not present in students")
        for c in ("frac_same_gender", "frac_first_generation", "frac_same_ethnicity"):
            v = pd.to_numeric(courses[c], errors="coerce").dropna()
            if ((v < 0) | (v > 1)).any():
                problems.append(f"courses: {c} outside [0, 1]")
        if (pd.to_numeric(courses["credits"], errors="coerce").dropna() <= 0).any():
            problems.append("courses: credits must be positive")
        if (pd.to_numeric(courses["class_size"], errors="coerce").dropna() < 1).any():
            problems.append("courses: class_size must be >= 1")
        fg = pd.to_numeric(courses["final_grade"], errors="coerce").dropna()
        if ((fg < 0) | (fg > 4)).any():
            problems.append("courses: final_grade outside [0, 4]")

        enrolled_keys = set(
            zip(terms.loc[terms["enrolled"].astype(bool), "student_id"],
                pd.to_numeric(terms.loc[terms["enrolled"].astype(bool), "term_index"]))
        )
        course_keys = set(zip(courses["student_id"], pd.to_numeric(courses["term_index"])))
        orphans = course_keys - enrolled_keys
        if orphans:
            problems.append(
                f"courses: {len(orphans)} course rows without an enrolled term record"
            )
    return problems
