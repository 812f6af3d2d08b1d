"""Synthetic cohort generator with a planted discrete-time dropout hazard.

Each student gets pre-entry attributes, a potential academic trajectory
(per-term GPA, short enrollment gaps, a graduation horizon), and a per-term
logistic hazard of leaving for good.  Hazard intercepts are calibrated by
bisection on the exact expected rates, so that the realized prospective
dropout rates and the URM dropout rate hit their configured targets.  Every
draw comes from a per-student stream keyed by (seed, stage, student index),
which makes the output reproducible bit for bit and independent of worker
scheduling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from . import schema
from ._rng import stream
from .schema import Cohort

HAZARD_YEARS = 3          # piecewise-constant hazard weights: year 1, 2, 3+
GPA_DEFICIT_CENTER = 2.9  # deficit = (center - trailing GPA) / scale
GPA_DEFICIT_SCALE = 0.6
MISSED_TERMS_CAP = 4
CREDITS_PER_YEAR = 40.0   # earned credits per class-standing year

# population-level standardization constants for hazard inputs
_STD = {
    "hs_gpa": (3.55, 0.35),
    "sat_math": (615.0, 85.0),
    "sat_writing": (600.0, 85.0),
    "sat_reading": (605.0, 85.0),
    "age_at_enrollment": (18.3, 0.8),
    "distance_from_home": (900.0, 2200.0),
    "best_ap_score": (1.8, 1.8),
    "household_size": (3.6, 1.2),
}

SCHOOLS = [
    ("Engineering", True, 0.28),
    ("PhysicalSciences", True, 0.38),
    ("BiologicalSciences", True, 0.58),
    ("SocialSciences", False, 0.60),
    ("Humanities", False, 0.62),
    ("Business", False, 0.48),
    ("Education", False, 0.72),
    ("Arts", False, 0.60),
]
_STEM_SCHOOLS = [i for i, s in enumerate(SCHOOLS) if s[1]]
_NONSTEM_SCHOOLS = [i for i, s in enumerate(SCHOOLS) if not s[1]]
MAJORS_PER_SCHOOL = 4


class ConfigError(ValueError):
    pass


class CalibrationError(RuntimeError):
    """Raised when the intercept search cannot reach a configured target."""


@dataclass(frozen=True)
class MissingnessSpec:
    mechanism: str                 # MCAR | MAR
    rate: float
    conditioner: str | None = None  # observed predictor driving MAR deletion


def _default_group_fractions() -> dict[str, float]:
    return {
        "female": 0.52,
        "first_generation": 0.45,
        "low_income": 0.331,
        "urm": 0.25,
        "stem": 0.45,
    }


def _default_hazard() -> dict[str, tuple[float, float, float]]:
    return {
        "hs_gpa": (-0.55, -0.15, -0.10),
        "college_gpa_deficit": (0.85, 0.45, 0.35),
        "missed_terms": (0.0, 0.65, 0.50),
        "low_income": (0.18, 0.18, 0.18),
        "first_generation": (0.12, 0.12, 0.12),
        "english_language_learner": (-0.30, -0.30, -0.30),
        "female": (-0.06, -0.06, -0.06),
    }


def _default_targets() -> dict[str, float]:
    return {
        "rate_after_year1": 0.132,
        "rate_after_year2": 0.114,
        "urm_dropout_rate": 0.189,
    }


@dataclass
class GeneratorConfig:
    n_students: int
    seed: int
    group_fractions: dict[str, float] = field(default_factory=_default_group_fractions)
    hazard_coefficients: dict = field(default_factory=_default_hazard)
    target_rates: dict[str, float] = field(default_factory=_default_targets)
    missingness: dict[str, MissingnessSpec] = field(default_factory=dict)
    n_terms_window: int = 18
    # trajectory shape knobs
    correlate_predictors: bool = True
    skip_logit_mean: float = -3.0
    skip_logit_sd: float = 1.1
    mean_courses_per_term: float = 3.2
    calibration_tol: float = 1e-3
    calibration_max_iter: int = 60

    def validate(self) -> None:
        if self.n_students < 1:
            raise ConfigError("n_students must be positive")
        if self.n_terms_window < schema.GAP_TERMS + 1:
            raise ConfigError("window too short to observe any dropout")
        for k, v in self.group_fractions.items():
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"group fraction {k} outside [0, 1]")
        for k, v in self.target_rates.items():
            if not 0.0 < v < 1.0:
                raise ConfigError(f"target rate {k} outside (0, 1)")
        for k, spec in self.missingness.items():
            if spec.mechanism not in ("MCAR", "MAR"):
                raise ConfigError(f"unknown missingness mechanism {spec.mechanism!r}")
            if not 0.0 <= spec.rate <= 1.0:
                raise ConfigError(f"missingness rate for {k} outside [0, 1]")
            if spec.mechanism == "MAR" and not spec.conditioner:
                raise ConfigError(f"MAR on {k} needs a conditioner")


def default_config(n_students: int, seed: int) -> GeneratorConfig:
    return GeneratorConfig(n_students=n_students, seed=seed)


def shifting_hazard_config(n_students: int, seed: int) -> GeneratorConfig:
    """Hazard moves from high-school GPA (year 1) to enrollment continuity (later).

    The heavier short-gap tail raises the floor of early completed gaps, so
    the rate targets carry a wider year-1/year-2 spread than the default
    cohort's.
    """
    return GeneratorConfig(
        n_students=n_students,
        seed=seed,
        hazard_coefficients={
            "hs_gpa": (-1.10, -0.05, -0.05),
            "college_gpa_deficit": (0.30, 0.10, 0.10),
            "missed_terms": (0.0, 1.20, 1.00),
        },
        target_rates={"rate_after_year1": 0.18, "rate_after_year2": 0.15},
        skip_logit_mean=-2.6,
        skip_logit_sd=1.4,
    )


def single_signal_config(n_students: int, seed: int, predictor: str = "hs_gpa",
                         weight: float = -1.2) -> GeneratorConfig:
    """Exactly one predictor carries hazard weight; everything else is noise."""
    return GeneratorConfig(
        n_students=n_students,
        seed=seed,
        hazard_coefficients={predictor: (weight, weight, weight)},
        target_rates={"rate_after_year1": 0.132, "rate_after_year2": 0.114},
        correlate_predictors=False,
    )


def group_interaction_config(n_students: int, seed: int, group: str = "low_income",
                             signal: str = "college_gpa_deficit") -> GeneratorConfig:
    """The signal's hazard weight is twice as large inside the planted group."""
    coefs = _default_hazard()
    coefs[f"{signal}@{group}"] = coefs.get(signal, (0.85, 0.45, 0.35))
    return GeneratorConfig(n_students=n_students, seed=seed, hazard_coefficients=coefs)


def _coef_by_year(coefs: dict) -> dict[str, np.ndarray]:
    out = {}
    for k, v in coefs.items():
        arr = np.full(HAZARD_YEARS, float(v)) if np.isscalar(v) else np.asarray(v, dtype=float)
        if arr.shape != (HAZARD_YEARS,):
            raise ConfigError(f"hazard coefficient for {k} must be scalar or length {HAZARD_YEARS}")
        out[k] = arr
    return out


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


# ---------------------------------------------------------------------------
# pass 1: pre-entry attributes and potential trajectories
# ---------------------------------------------------------------------------

def _draw_students(cfg: GeneratorConfig) -> dict[str, np.ndarray]:
    n = cfg.n_students
    gf = cfg.group_fractions
    d: dict[str, list] = {k: [] for k in (
        "female", "first_generation", "low_income", "urm", "stem", "ethnicity",
        "international", "took_toefl", "citizenship", "geographic_category", "residency",
        "distance_from_home", "age_at_enrollment", "parent1_education", "parent2_education",
        "household_size", "single_parent", "english_language_learner", "hs_gpa",
        "sat_math", "sat_writing", "sat_reading", "best_ap_score", "entry_level",
        "cohort_year", "ability", "skip_propensity", "school", "honors_propensity",
        "grad_req", "entry_offset",
    )}
    eth_urm = (["Black", "Hispanic", "Indigenous"], [0.40, 0.48, 0.12])
    eth_non = (["AsianAmerican", "WhiteNonHispanic"], [0.45, 0.55])
    pe_first_gen = [0.10, 0.22, 0.38, 0.20, 0.07, 0.02, 0.01]
    pe_other = [0.01, 0.04, 0.16, 0.21, 0.14, 0.27, 0.17]
    hh_p = [0.05, 0.18, 0.22, 0.30, 0.15, 0.10]
    extra_p = [0.45, 0.30, 0.15, 0.10]

    for i in range(n):
        rng = stream(cfg.seed, "student", i)
        female = rng.random() < gf["female"]
        first_gen = rng.random() < gf["first_generation"]
        low_inc = rng.random() < gf["low_income"]
        urm = rng.random() < gf["urm"]
        stem = rng.random() < gf["stem"]
        levels, probs = eth_urm if urm else eth_non
        ethnicity = levels[rng.choice(len(levels), p=probs)]
        intl = rng.random() < 0.12
        toefl = bool(intl and rng.random() < 0.75)
        citizenship = "NotUSCitizen" if intl else ("PermanentResident" if rng.random() < 0.07 else "USCitizen")
        if intl:
            geo = "ForeignCountry"
        else:
            geo = ["OutOfState", "NorthernCalifornia", "SouthernCalifornia", "UniversityCounty"][
                rng.choice(4, p=[0.06, 0.22, 0.52, 0.20])
            ]
        if geo in ("ForeignCountry", "OutOfState"):
            residency = "OutOfState" if rng.random() < 0.9 else "BonaFide"
        else:
            residency = "InState" if rng.random() < 0.92 else "BonaFide"
        dist_mu = {"ForeignCountry": 8.8, "OutOfState": 7.9, "NorthernCalifornia": 6.3,
                   "SouthernCalifornia": 4.4, "UniversityCounty": 2.7}[geo]
        distance = float(np.exp(rng.normal(dist_mu, 0.8)))
        age = float(np.clip(17.0 + rng.gamma(2.2, 0.65), 16.0, 45.0))
        pe_p = pe_first_gen if first_gen else pe_other
        p1 = schema.PARENT_EDUCATION_LEVELS[rng.choice(7, p=pe_p)]
        p2 = schema.PARENT_EDUCATION_LEVELS[rng.choice(7, p=pe_p)]
        household = int(rng.choice(6, p=hh_p)) + 1
        single_par = rng.random() < 0.17
        ell = rng.random() < (0.80 if intl else 0.25)
        hs_gpa = float(np.clip(rng.normal(3.55, 0.35), 1.8, 5.0))
        if cfg.correlate_predictors:
            z_gpa = (hs_gpa - _STD["hs_gpa"][0]) / _STD["hs_gpa"][1]
            sat_base = 0.55 * z_gpa
        else:
            sat_base = 0.0
        sat_m = float(np.clip(615 + 85 * (sat_base + rng.normal(0, 0.85)), 200, 800))
        sat_w = float(np.clip(600 + 85 * (sat_base + rng.normal(0, 0.85)), 200, 800))
        sat_r = float(np.clip(605 + 85 * (sat_base + rng.normal(0, 0.85)), 200, 800))
        if rng.random() < 0.60:
            ap = int(np.clip(round(3.0 + 0.8 * sat_base + rng.normal(0, 1.2)), 1, 5))
        else:
            ap = 0
        entry = ["Freshman", "Sophomore", "JuniorSenior"][rng.choice(3, p=[0.85, 0.11, 0.04])]
        offset = {"Freshman": 0, "Sophomore": 1, "JuniorSenior": 2}[entry]
        if cfg.correlate_predictors:
            z_sat = (sat_m + sat_r + sat_w - 1820) / (3 * 85)
            ability = (0.45 * z_gpa + 0.22 * z_sat - 0.12 * (low_inc - 0.33)
                       - 0.08 * (first_gen - 0.45) + 0.85 * rng.normal())
        else:
            ability = rng.normal()
        skip_prop = _sigmoid(cfg.skip_logit_mean + cfg.skip_logit_sd * rng.normal())
        school = int(rng.choice(_STEM_SCHOOLS) if stem else rng.choice(_NONSTEM_SCHOOLS))
        honors_prop = _sigmoid(-2.6 + 1.1 * ability)
        grad_req = max(6, 12 - 3 * offset + int(rng.choice(4, p=extra_p)))
        year = 2011 + int(rng.choice(6))

        for k, v in (
            ("female", female), ("first_generation", first_gen), ("low_income", low_inc),
            ("urm", urm), ("stem", stem), ("ethnicity", ethnicity), ("international", intl),
            ("took_toefl", toefl), ("citizenship", citizenship), ("geographic_category", geo),
            ("residency", residency), ("distance_from_home", round(distance, 1)),
            ("age_at_enrollment", round(age, 2)), ("parent1_education", p1),
            ("parent2_education", p2), ("household_size", household),
            ("single_parent", single_par), ("english_language_learner", ell),
            ("hs_gpa", round(hs_gpa, 2)), ("sat_math", round(sat_m)), ("sat_writing", round(sat_w)),
            ("sat_reading", round(sat_r)), ("best_ap_score", ap), ("entry_level", entry),
            ("cohort_year", year), ("ability", ability), ("skip_propensity", skip_prop),
            ("school", school), ("honors_propensity", honors_prop), ("grad_req", grad_req),
            ("entry_offset", offset),
        ):
            d[k].append(v)
    return {k: np.asarray(v) for k, v in d.items()}


def _draw_trajectories(cfg: GeneratorConfig, stu: dict) -> dict[str, np.ndarray]:
    """Skip pattern, graduation horizon, and potential per-term GPA per student."""
    n, w = cfg.n_students, cfg.n_terms_window
    skips = np.zeros((n, w), dtype=bool)
    gpa_pot = np.zeros((n, w))
    grad_term = np.zeros(n, dtype=int)
    for i in range(n):
        rng = stream(cfg.seed, "trajectory", i)
        u = rng.random(w)
        eps = rng.normal(0, 1, w)
        p = stu["skip_propensity"][i]
        for t in range(1, w):  # term 1 (index 0) is always enrolled
            if skips[i, t - 1] and t >= 2 and skips[i, t - 2]:
                continue  # cap short gaps at two consecutive terms
            skips[i, t] = u[t] < p
        gpa_pot[i] = np.clip(2.95 + 0.50 * stu["ability"][i] + 0.28 * eps, 0.3, 4.0)
        cum = 0
        for t in range(w):
            if not skips[i, t]:
                cum += 1
                if cum == stu["grad_req"][i]:
                    grad_term[i] = t + 1
                    break
    return {"skips": skips, "gpa_potential": gpa_pot, "grad_term": grad_term}


# ---------------------------------------------------------------------------
# hazard design and exact expected-rate calibration
# ---------------------------------------------------------------------------

def _standardized_pre_entry(name: str, stu: dict) -> np.ndarray:
    if name in ("female", "first_generation", "low_income", "english_language_learner",
                "international", "single_parent", "urm", "stem"):
        x = stu[name].astype(float)
        return x - x.mean()
    if name in _STD:
        mu, sd = _STD[name]
        return (stu[name].astype(float) - mu) / sd
    raise ConfigError(f"no hazard support for predictor {name!r}")


def _hazard_design(cfg: GeneratorConfig, stu: dict, traj: dict):
    """Structural hazard logits (no intercept, no URM offset) for terms 2..window.

    A coefficient key "name@group" scopes the weight to students with the
    boolean group attribute set, planting a group interaction on top of any
    base weight for the same signal.
    """
    n, w = cfg.n_students, cfg.n_terms_window
    coefs = _coef_by_year(cfg.hazard_coefficients)
    years = np.minimum((np.arange(2, w + 1) - 1) // schema.TERMS_PER_YEAR, HAZARD_YEARS - 1)

    def indicator(group: str | None) -> np.ndarray:
        if group is None:
            return np.ones(n)
        if group not in stu:
            raise ConfigError(f"unknown hazard group {group!r}")
        return stu[group].astype(float)

    z = np.zeros((n, w - 1))
    gpa_entries: list[tuple[np.ndarray, np.ndarray]] = []
    miss_entries: list[tuple[np.ndarray, np.ndarray]] = []
    for name, by_year in coefs.items():
        base, _, group = name.partition("@")
        scope = indicator(group or None)
        if base == "college_gpa_deficit":
            gpa_entries.append((scope, by_year))
        elif base == "missed_terms":
            miss_entries.append((scope, by_year))
        else:
            z += np.outer(_standardized_pre_entry(base, stu) * scope, np.ones(w - 1)) * by_year[years]

    pot_enrolled = ~traj["skips"]
    for i in range(n):
        g = traj["grad_term"][i]
        if g > 0:
            pot_enrolled[i, g:] = False

    if gpa_entries or miss_entries:
        gpa = traj["gpa_potential"]
        trail = np.zeros((n, 3))
        trail[:] = gpa[:, [0]]
        filled = np.ones(n)
        missed = np.zeros(n)
        for t in range(2, w + 1):  # hazard term t uses history < t
            j = t - 2
            if gpa_entries:
                mean_trail = trail.sum(axis=1) / np.maximum(filled, 1)
                deficit = (GPA_DEFICIT_CENTER - mean_trail) / GPA_DEFICIT_SCALE
                for scope, by_year in gpa_entries:
                    z[:, j] += by_year[years[j]] * scope * deficit
            for scope, by_year in miss_entries:
                z[:, j] += by_year[years[j]] * scope * np.minimum(missed, MISSED_TERMS_CAP)
            enr = pot_enrolled[:, t - 1]
            trail[enr, 0] = trail[enr, 1]
            trail[enr, 1] = trail[enr, 2]
            trail[enr, 2] = gpa[enr, t - 1]
            filled[enr] = np.minimum(filled[enr] + 1, 3)
            missed += traj["skips"][:, t - 1]

    active = np.ones((n, w - 1), dtype=bool)
    for i in range(n):
        g = traj["grad_term"][i]
        if g > 0:
            active[i, g - 1:] = False   # τ candidates are 2..g
    return z, active, years


def _scenario_tables(cfg: GeneratorConfig, traj: dict):
    """For each leave-term τ in 2..window: dropout label and first gap start."""
    n, w = cfg.n_students, cfg.n_terms_window
    pot = ~traj["skips"]
    for i in range(n):
        g = traj["grad_term"][i]
        if g > 0:
            pot[i, g:] = False
    terms = np.arange(1, w + 1)
    labeled = np.zeros((n, w - 1), dtype=bool)
    gap_start = np.zeros((n, w - 1), dtype=int)
    for j, tau in enumerate(range(2, w + 1)):
        flags = pot & (terms < tau)
        run = np.zeros(n, dtype=int)
        gs = np.zeros(n, dtype=int)
        for t in range(w):
            run = np.where(flags[:, t], 0, run + 1)
            hit = (run == schema.GAP_TERMS) & (gs == 0)
            gs[hit] = t + 2 - schema.GAP_TERMS
        labeled[:, j] = gs > 0
        gap_start[:, j] = gs
    return labeled, gap_start, pot


def _expected_rates(z, active, years, labeled, gap_start, urm, intercepts, urm_offset,
                    exclusion_span: int):
    b = np.asarray(intercepts)[years]
    logits = z + b[None, :] + urm_offset * urm[:, None].astype(float)
    h = np.where(active, _sigmoid(logits), 0.0)
    surv = np.cumprod(1.0 - h, axis=1)
    prefix = np.concatenate([np.ones((h.shape[0], 1)), surv[:, :-1]], axis=1)
    p_tau = h * prefix
    p_drop = (p_tau * labeled).sum(axis=1)
    excluded = labeled & (gap_start > 0) & (gap_start + schema.GAP_TERMS - 1 <= exclusion_span)
    p_excl = (p_tau * excluded).sum(axis=1)
    return p_drop, p_excl


def _bisect(fn, lo: float, hi: float, tol: float, max_iter: int, target_name: str) -> float:
    flo, fhi = fn(lo), fn(hi)
    tries = 0
    while flo * fhi > 0 and tries < 8:
        lo, hi = lo - 4.0, hi + 4.0
        flo, fhi = fn(lo), fn(hi)
        tries += 1
    if flo * fhi > 0:
        raise CalibrationError(f"cannot bracket target {target_name}")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        fm = fn(mid)
        if abs(fm) < tol:
            return mid
        if flo * fm <= 0:
            hi = mid
        else:
            lo, flo = mid, fm
    raise CalibrationError(f"bisection for {target_name} did not converge")


def _calibrate(cfg: GeneratorConfig, z, active, years, labeled, gap_start, urm):
    r1 = cfg.target_rates["rate_after_year1"]
    r2 = cfg.target_rates.get("rate_after_year2")
    urm_target = cfg.target_rates.get("urm_dropout_rate")
    span2 = 2 * schema.TERMS_PER_YEAR
    e_target = (r1 - r2) / (1.0 - r2) if r2 is not None else None
    tol, max_iter = cfg.calibration_tol, cfg.calibration_max_iter

    def rates(b_early, b_late, off):
        p_drop, p_excl = _expected_rates(
            z, active, years, labeled, gap_start, urm,
            (b_early, b_late, b_late), off, span2,
        )
        overall = p_drop.mean()
        excl = min(p_excl.mean(), 1.0 - 1e-9)
        prospective2 = (overall - excl) / (1.0 - excl)
        urm_rate = p_drop[urm].mean() if urm.any() else 0.0
        return overall, prospective2, urm_rate, excl

    def solve_intercepts(off):
        if e_target is None:
            b = _bisect(lambda b: rates(b, b, off)[0] - r1,
                        -14.0, 4.0, tol * 0.3, max_iter, "rate_after_year1")
            return b, b
        b_early, b_late = -4.0, -3.0
        for _ in range(3):
            b_early = _bisect(
                lambda b: rates(b, b_late, off)[3] - e_target,
                -14.0, 4.0, tol * 0.3, max_iter, "rate_after_year2",
            )
            b_late = _bisect(
                lambda b: rates(b_early, b, off)[0] - r1,
                -14.0, 4.0, tol * 0.3, max_iter, "rate_after_year1",
            )
        return b_early, b_late

    offset = 0.0
    if urm_target is not None and urm.any():
        def gap(off):
            be, bl = solve_intercepts(off)
            return rates(be, bl, off)[2] - urm_target
        offset = _bisect(gap, -1.0, 2.5, tol, max_iter, "urm_dropout_rate")
    b_early, b_late = solve_intercepts(offset)
    achieved = rates(b_early, b_late, offset)
    return (b_early, b_late, b_late), offset, achieved


# ---------------------------------------------------------------------------
# pass 2: realize enrollment outcomes, term records, and courses
# ---------------------------------------------------------------------------

def generate_cohort(config: GeneratorConfig) -> Cohort:
    config.validate()
    cfg = config
    n, w = cfg.n_students, cfg.n_terms_window

    stu = _draw_students(cfg)
    traj = _draw_trajectories(cfg, stu)
    z, active, years = _hazard_design(cfg, stu, traj)
    labeled, gap_start, pot_flags = _scenario_tables(cfg, traj)
    intercepts, urm_offset, achieved = _calibrate(
        cfg, z, active, years, labeled, gap_start, stu["urm"].astype(bool)
    )

    b = np.asarray(intercepts)[years]
    logits = z + b[None, :] + urm_offset * stu["urm"].astype(float)[:, None]
    hazard = np.where(active, _sigmoid(logits), 0.0)
    surv = np.cumprod(1.0 - hazard, axis=1)
    prefix = np.concatenate([np.ones((n, 1)), surv[:, :-1]], axis=1)
    p_tau = hazard * prefix
    cdf = np.cumsum(p_tau, axis=1)

    ids = [f"s{i:06d}" for i in range(n)]
    pop_eth_share = _ethnicity_shares(cfg)
    fg_share = cfg.group_fractions["first_generation"]

    students_rows: dict[str, list] = {c: [] for c in schema.STUDENT_COLUMNS}
    term_rows: dict[str, list] = {c: [] for c in schema.TERM_COLUMNS}
    course_rows: dict[str, list] = {c: [] for c in schema.COURSE_COLUMNS}
    leave_terms = np.zeros(n, dtype=int)

    for i in range(n):
        rng = stream(cfg.seed, "realize", i)
        u = rng.random()
        j = int(np.searchsorted(cdf[i], u))
        tau = 2 + j if j < w - 1 and u < cdf[i, -1] else 0   # 0 = survives
        leave_terms[i] = tau
        grad = traj["grad_term"][i]
        flags = pot_flags[i].copy()
        if tau:
            flags[tau - 1:] = False
        graduated = bool(grad > 0 and tau == 0)
        grad_term = int(grad) if graduated else None

        _student_row(students_rows, ids[i], stu, i, graduated, grad_term)
        _term_and_course_rows(
            cfg, rng, term_rows, course_rows, ids[i], stu, traj, i, flags,
            pop_eth_share, fg_share,
        )

    students = pd.DataFrame(students_rows)
    terms = pd.DataFrame(term_rows)
    courses = pd.DataFrame(course_rows)
    ground_truth = {
        "hazard_coefficients": {k: list(v) for k, v in _coef_by_year(cfg.hazard_coefficients).items()},
        "intercepts": list(intercepts),
        "urm_offset": float(urm_offset),
        "achieved_rates": {
            "rate_after_year1": float(achieved[0]),
            "rate_after_year2": float(achieved[1]),
            "urm_dropout_rate": float(achieved[2]),
        },
        "latent": {
            "ability": stu["ability"].tolist(),
            "skip_propensity": stu["skip_propensity"].tolist(),
            "p_dropout": (p_tau * labeled).sum(axis=1).tolist(),
        },
    }
    return Cohort(
        students=students, terms=terms, courses=courses,
        n_terms_window=w, ground_truth=ground_truth,
    )


def _ethnicity_shares(cfg: GeneratorConfig) -> dict[str, float]:
    f = cfg.group_fractions["urm"]
    return {
        "Black": 0.40 * f,
        "Hispanic": 0.48 * f,
        "Indigenous": 0.12 * f,
        "AsianAmerican": 0.45 * (1 - f),
        "WhiteNonHispanic": 0.55 * (1 - f),
    }


def _student_row(rows, sid, stu, i, graduated, grad_term):
    vals = {
        "student_id": sid,
        "cohort_year": int(stu["cohort_year"][i]),
        "female": bool(stu["female"][i]),
        "age_at_enrollment": float(stu["age_at_enrollment"][i]),
        "international": bool(stu["international"][i]),
        "took_toefl": bool(stu["took_toefl"][i]),
        "ethnicity": stu["ethnicity"][i],
        "citizenship": stu["citizenship"][i],
        "residency": stu["residency"][i],
        "geographic_category": stu["geographic_category"][i],
        "distance_from_home": float(stu["distance_from_home"][i]),
        "first_generation": bool(stu["first_generation"][i]),
        "low_income": bool(stu["low_income"][i]),
        "parent1_education": stu["parent1_education"][i],
        "parent2_education": stu["parent2_education"][i],
        "household_size": int(stu["household_size"][i]),
        "single_parent": bool(stu["single_parent"][i]),
        "english_language_learner": bool(stu["english_language_learner"][i]),
        "hs_gpa": float(stu["hs_gpa"][i]),
        "sat_math": float(stu["sat_math"][i]),
        "sat_writing": float(stu["sat_writing"][i]),
        "sat_reading": float(stu["sat_reading"][i]),
        "best_ap_score": int(stu["best_ap_score"][i]),
        "entry_level": stu["entry_level"][i],
        "graduated": graduated,
        "graduation_term": grad_term,
    }
    for k, v in vals.items():
        rows[k].append(v)


def _term_and_course_rows(cfg, rng, term_rows, course_rows, sid, stu, traj, i, flags,
                          eth_share, fg_share):
    enrolled = np.flatnonzero(flags) + 1
    n_terms = len(enrolled)
    if n_terms == 0:
        return
    school_idx = int(stu["school"][i])
    major_idx = int(rng.choice(MAJORS_PER_SCHOOL))
    num_majors = 1 + int(rng.random() < 0.12)
    num_schools = num_majors if rng.random() < 0.5 else 1
    num_schools = max(num_schools, 1 + int(rng.random() < 0.03))
    female = bool(stu["female"][i])
    own_fg = bool(stu["first_generation"][i])
    own_eth = stu["ethnicity"][i]
    offset_years = int(stu["entry_offset"][i])
    gpa_pot = traj["gpa_potential"][i]
    pass_p = _sigmoid(1.3 + 0.9 * float(stu["ability"][i]))

    # term-level path (major/school changes are sequential)
    change_u = rng.random((n_terms, 2))
    change_target = rng.integers(0, MAJORS_PER_SCHOOL, n_terms)
    pool = _STEM_SCHOOLS if stu["stem"][i] else _NONSTEM_SCHOOLS
    school_target = rng.integers(0, len(pool), n_terms)
    honors = rng.random(n_terms) < float(stu["honors_propensity"][i])
    n_courses = 1 + np.minimum(rng.poisson(cfg.mean_courses_per_term, n_terms), 6)

    schools_path, majors_path = [], []
    for k in range(n_terms):
        if k > 0 and change_u[k, 0] < 0.05:
            major_idx = int(change_target[k])
            if change_u[k, 1] < 0.4:
                school_idx = int(pool[school_target[k]])
        schools_path.append(school_idx)
        majors_path.append(major_idx)

    school_names = [SCHOOLS[s][0] for s in schools_path]
    # course draws happen first so class standing can follow earned credits
    total = int(n_courses.sum())
    term_of = np.repeat(np.arange(n_terms), n_courses)
    credits = rng.choice([2.0, 3.0, 4.0, 5.0], size=total, p=[0.1, 0.35, 0.4, 0.15])
    term_credits = np.bincount(term_of, weights=credits, minlength=n_terms)
    earned_before = np.concatenate([[0.0], np.cumsum(term_credits)[:-1]])
    years = np.minimum(5, offset_years + 1 + (earned_before // CREDITS_PER_YEAR).astype(int))
    term_rows["student_id"].extend([sid] * n_terms)
    term_rows["term_index"].extend(enrolled.tolist())
    term_rows["enrolled"].extend([True] * n_terms)
    term_rows["num_majors"].extend([num_majors] * n_terms)
    term_rows["num_school_affiliations"].extend([num_schools] * n_terms)
    term_rows["primary_school"].extend(school_names)
    term_rows["primary_major"].extend(
        f"{SCHOOLS[s][0]}-M{m + 1}" for s, m in zip(schools_path, majors_path)
    )
    term_rows["honors_flag"].extend(honors.tolist())
    term_rows["stem_major"].extend(SCHOOLS[s][1] for s in schools_path)
    term_rows["year_of_study"].extend(schema.YEAR_OF_STUDY_LEVELS[y - 1] for y in years)

    # remaining course-level draws, batched over all courses of the student
    graded = rng.random(total) >= 0.15
    grades = np.round(np.clip(gpa_pot[enrolled[term_of] - 1] + rng.normal(0, 0.45, total), 0.0, 4.0), 2)
    sizes = np.clip(np.exp(rng.normal(math.log(70), 0.8, total)), 5, 400).astype(int)
    school_female = np.array([SCHOOLS[s][2] for s in schools_path])[term_of]
    fs = np.clip(rng.normal(school_female, 0.12), 0.03, 0.97)
    if not female:
        fs = 1.0 - fs
    ffg = np.clip(rng.normal(fg_share, 0.10, total) + 0.04 * own_fg, 0.02, 0.98)
    fse = np.clip(rng.normal(eth_share[own_eth], 0.08, total) + 0.05, 0.01, 0.97)
    own_school = rng.random(total) < 0.7
    other = rng.integers(0, len(SCHOOLS), total)
    passed = np.where(graded, grades >= 1.7, rng.random(total) < pass_p)
    course_num = rng.integers(100, 1000, total)

    course_rows["student_id"].extend([sid] * total)
    course_rows["term_index"].extend(enrolled[term_of].tolist())
    course_rows["course_id"].extend(
        f"C{schools_path[t]}{majors_path[t]}{c}" for t, c in zip(term_of, course_num)
    )
    course_rows["credits"].extend(credits.tolist())
    course_rows["passed"].extend(passed.tolist())
    course_rows["final_grade"].extend(
        g if ok else None for g, ok in zip(grades.tolist(), graded.tolist())
    )
    course_rows["class_size"].extend(sizes.tolist())
    course_rows["frac_same_gender"].extend(np.round(fs, 4).tolist())
    course_rows["frac_first_generation"].extend(np.round(ffg, 4).tolist())
    course_rows["frac_same_ethnicity"].extend(np.round(fse, 4).tolist())
    course_rows["offering_school"].extend(
        SCHOOLS[schools_path[t]][0] if own else SCHOOLS[int(o)][0]
        for t, own, o in zip(term_of, own_school.tolist(), other)
    )


# ---------------------------------------------------------------------------
# missingness injection
# ---------------------------------------------------------------------------

_DELETABLE = {
    "hs_gpa", "sat_math", "sat_writing", "sat_reading", "distance_from_home",
    "household_size", "parent1_education", "parent2_education", "age_at_enrollment",
    "best_ap_score",
}


def inject_missingness(cohort: Cohort, config: GeneratorConfig) -> Cohort:
    """Delete cells per the configured mechanisms; keeps a mask and the true values."""
    config.validate()
    if not config.missingness:
        return cohort
    students = cohort.students.copy()
    mask = pd.DataFrame({"student_id": students["student_id"]})
    withheld = pd.DataFrame({"student_id": students["student_id"]})

    for name, spec in config.missingness.items():
        if name not in _DELETABLE:
            raise ConfigError(f"predictor {name!r} does not support injected missingness")
        rng = stream(config.seed, "missing", name)
        nrows = len(students)
        if spec.mechanism == "MCAR":
            p = np.full(nrows, spec.rate)
        else:
            cond = spec.conditioner
            if cond in config.missingness:
                raise ConfigError(f"MAR conditioner {cond!r} is itself subject to missingness")
            if cond not in students.columns:
                raise ConfigError(f"unknown MAR conditioner {cond!r}")
            col = students[cond]
            if col.dropna().isin([True, False]).all():
                zc = col.astype(float) - col.astype(float).mean()
            else:
                num = pd.to_numeric(col, errors="coerce")
                zc = (num - num.mean()) / (num.std() or 1.0)
            weight = _sigmoid(1.5 * zc.to_numpy(dtype=float))
            p = np.clip(spec.rate * weight / weight.mean(), 0.0, 0.99)
        hit = rng.random(nrows) < p
        mask[name] = hit
        withheld[name] = students[name].where(pd.Series(hit, index=students.index))
        students.loc[hit, name] = np.nan

    return replace(
        cohort, students=students, missing_mask=mask, withheld_values=withheld,
        _flag_cache=None,
    )
