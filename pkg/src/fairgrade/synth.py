"""Seeded synthetic cohorts with configurable group mix, grade model and course affinity.

Grades come from a per-enrollment latent score (student ability + course
difficulty + group-by-course effect + noise). Within each group the latent
scores are ranked and cut at the configured token shares, so per-group
grade marginals hit their targets up to rounding while grades stay
correlated across a student's terms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .cohort import (
    DEFAULT_LETTERS,
    CohortDataset,
    Enrollment,
    GradeLabel,
    GradeScale,
    StudentDemographics,
    build_dataset,
)

TOP_GROUPS = ("White", "Asian", "International")
UNDERREPRESENTED = ("Chicano/Latino", "African American", "Native American", "Pacific Islander")


class GroupGradeModel(BaseModel):
    model_config = ConfigDict(extra="forbid")

    a_share: float = Field(ge=0, le=1)  # P(A category | letter graded)
    b_or_better: float = Field(ge=0, le=1)  # P(>= B | letter graded)
    letter_share: float = Field(0.85, ge=0, le=1)  # P(letter graded) vs P/NP
    pass_share: float = Field(ge=0, le=1)  # P(Pass | P/NP)
    graduation_rate: float = Field(ge=0, le=1)

    @model_validator(mode="after")
    def _ordered(self):
        if self.b_or_better < self.a_share:
            raise ValueError("b_or_better must be >= a_share")
        return self


def _default_groups() -> dict[str, GroupGradeModel]:
    # Shares within the 55-65% / 35-55% A-category bands and 90-95% / 85-90% Pass bands;
    # graduation rates are synthetic placeholders.
    top = dict(a_share=0.5865, b_or_better=0.86, pass_share=0.925)
    under = dict(a_share=0.45, b_or_better=0.74, pass_share=0.875)
    return {
        "White": GroupGradeModel(**top, graduation_rate=0.92),
        "Asian": GroupGradeModel(**top, graduation_rate=0.93),
        "International": GroupGradeModel(**top, graduation_rate=0.89),
        "Chicano/Latino": GroupGradeModel(**under, graduation_rate=0.84),
        "African American": GroupGradeModel(**under, graduation_rate=0.78),
        "Native American": GroupGradeModel(**under, graduation_rate=0.80),
        "Pacific Islander": GroupGradeModel(**under, graduation_rate=0.82),
        "Decline-to-State": GroupGradeModel(a_share=0.55, b_or_better=0.82, pass_share=0.90, graduation_rate=0.90),
    }


def _default_proportions() -> dict[str, float]:
    return {
        "White": 0.2700,
        "Asian": 0.3700,
        "International": 0.1342,
        "Chicano/Latino": 0.1150,
        "African American": 0.0400,
        "Native American": 0.0133,
        "Pacific Islander": 0.0020,
        "Decline-to-State": 0.0555,
    }


class SynthConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    seed: int = 0
    num_students: int = Field(5000, gt=0)
    num_courses: int = Field(100, gt=0)
    num_terms: int = Field(12, ge=1)
    # courses taken in an attended term -> probability; median 4
    courses_per_term: dict[int, float] = Field(
        default_factory=lambda: {2: 0.10, 3: 0.20, 4: 0.35, 5: 0.25, 6: 0.10}
    )
    attend_prob: float = Field(0.92, ge=0, le=1)
    letters: list[str] = Field(default_factory=lambda: list(DEFAULT_LETTERS))
    # token shares inside the A band, the B band and below B; each list is normalized
    band_splits: dict[str, list[float]] = Field(
        default_factory=lambda: {
            "A": [0.15, 0.55, 0.30],
            "B": [0.40, 0.35, 0.25],
            "rest": [0.24, 0.22, 0.15, 0.10, 0.08, 0.06, 0.15],
        }
    )
    group_proportions: dict[str, float] = Field(default_factory=_default_proportions)
    groups: dict[str, GroupGradeModel] = Field(default_factory=_default_groups)
    ability_strength: float = Field(0.75, ge=0, le=1)  # correlation of the latent with student ability
    course_difficulty_sd: float = Field(0.5, ge=0)
    group_course_effect_sd: float = Field(0.6, ge=0)
    affinity_skew: float = Field(1.0, ge=0)
    popularity_sd: float = Field(0.5, ge=0)
    genders: dict[str, float] = Field(default_factory=lambda: {"F": 0.5, "M": 0.48, "X": 0.02})
    income_brackets: dict[str, float] = Field(
        default_factory=lambda: {"low": 0.3, "middle": 0.45, "high": 0.25}
    )
    entry_statuses: dict[str, float] = Field(default_factory=lambda: {"freshman": 0.75, "transfer": 0.25})
    majors: list[str] = Field(default_factory=lambda: ["CS", "ECON", "BIO", "ENG", "HIST", "MATH", "PSYCH", "UND"])
    double_major_prob: float = Field(0.1, ge=0, le=1)
    min_course_enrollments: int = Field(20, ge=0)

    @model_validator(mode="after")
    def _check(self):
        for name, dist in (
            ("group_proportions", self.group_proportions),
            ("courses_per_term", self.courses_per_term),
            ("genders", self.genders),
            ("income_brackets", self.income_brackets),
            ("entry_statuses", self.entry_statuses),
        ):
            vals = list(dist.values())
            if not vals or any(not 0 <= v <= 1 for v in vals):
                raise ValueError(f"{name}: probabilities must lie in [0, 1]")
            if abs(sum(vals) - 1.0) > 1e-9:
                raise ValueError(f"{name}: probabilities must sum to 1 (got {sum(vals)!r})")
        if any(k < 1 for k in self.courses_per_term):
            raise ValueError("courses_per_term keys must be >= 1")
        if max(self.courses_per_term) > self.num_courses:
            raise ValueError("courses_per_term exceeds num_courses")
        missing = set(self.group_proportions) - set(self.groups)
        if missing:
            raise ValueError(f"no grade model for group(s): {sorted(missing)}")
        GradeScale(tuple(self.letters))
        sizes = _band_sizes(self.letters)
        for band, size in sizes.items():
            split = self.band_splits.get(band)
            if size and (split is None or len(split) != size):
                raise ValueError(f"band_splits[{band!r}] needs {size} entries")
            if split is not None and (any(v < 0 for v in split) or (size and sum(split) <= 0)):
                raise ValueError(f"band_splits[{band!r}] must be non-negative with positive sum")
        return self

    @property
    def group_list(self) -> tuple[str, ...]:
        return tuple(self.group_proportions)

    @property
    def scale(self) -> GradeScale:
        return GradeScale(tuple(self.letters))

    def letter_shares(self, group: str) -> np.ndarray:
        """Target share of every letter token among the group's letter-graded enrollments."""
        gm = self.groups[group]
        sizes = _band_sizes(self.letters)
        mass = {"A": gm.a_share, "B": gm.b_or_better - gm.a_share, "rest": 1.0 - gm.b_or_better}
        out = []
        for band in ("A", "B", "rest"):
            if not sizes[band]:
                continue
            split = np.asarray(self.band_splits[band], dtype=float)
            out.append(mass[band] * split / split.sum())
        return np.concatenate(out)

    def expected_a_share(self) -> float:
        w = {g: p * self.groups[g].letter_share for g, p in self.group_proportions.items()}
        return sum(w[g] * self.groups[g].a_share for g in w) / sum(w.values())


def _band_sizes(letters) -> dict[str, int]:
    bands = [("A" if t[0] == "A" else "B" if t[0] == "B" else "rest") for t in letters]
    if bands != sorted(bands, key=("A", "B", "rest").index):
        raise ValueError("letter scale must list A tokens, then B tokens, then the rest")
    return {b: bands.count(b) for b in ("A", "B", "rest")}


def _quota(n: int, probs: np.ndarray) -> np.ndarray:
    """Largest-remainder integer counts summing to n."""
    raw = np.asarray(probs, dtype=float) * n
    base = np.floor(raw).astype(np.int64)
    short = n - int(base.sum())
    if short > 0:
        order = np.argsort(-(raw - base), kind="stable")
        base[order[:short]] += 1
    return base


def _rank_assign(scores: np.ndarray, shares: np.ndarray) -> np.ndarray:
    """Category per score: best scores get category 0, cut at cumulative ``shares``."""
    n = scores.shape[0]
    bounds = np.rint(np.cumsum(shares) / shares.sum() * n).astype(np.int64)
    bounds[-1] = n
    ranks = np.empty(n, dtype=np.int64)
    ranks[np.argsort(-scores, kind="stable")] = np.arange(n)
    return np.searchsorted(bounds, ranks, side="right")


def _draw(rng, dist: dict, size: int) -> list:
    keys = list(dist)
    return [keys[i] for i in rng.choice(len(keys), size=size, p=np.asarray(list(dist.values())))]


def generate_enrollments(config: SynthConfig):
    """Draw demographics and enrollments (before course filtering)."""
    rng = np.random.default_rng(config.seed)
    S, n, T = config.num_students, config.num_courses, config.num_terms
    groups = config.group_list
    K = len(groups)

    race = np.repeat(np.arange(K), _quota(S, np.array(list(config.group_proportions.values()))))
    race = rng.permutation(race)
    genders = _draw(rng, config.genders, S)
    incomes = _draw(rng, config.income_brackets, S)
    entries = _draw(rng, config.entry_statuses, S)
    n_majors = 1 + (rng.random(S) < config.double_major_prob)
    majors = [tuple(sorted(rng.choice(config.majors, size=k, replace=False).tolist())) for k in n_majors]

    ability = rng.standard_normal(S)
    popularity = config.popularity_sd * rng.standard_normal(n)
    affinity = rng.standard_normal((K, n))
    difficulty = config.course_difficulty_sd * rng.standard_normal(n)
    group_course = config.group_course_effect_sd * rng.standard_normal((K, n))

    sizes = np.array(list(config.courses_per_term), dtype=np.int64)
    size_p = np.array(list(config.courses_per_term.values()))
    kmax = int(sizes.max())
    choice_logits = popularity[None, :] + config.affinity_skew * affinity[race]  # (S, n)

    stu, term, course = [], [], []
    for t in range(T):
        attend = rng.random(S) < config.attend_prob
        k = sizes[rng.choice(len(sizes), size=S, p=size_p)]
        gumbel = rng.gumbel(size=(S, n))
        top = np.argsort(-(choice_logits + gumbel), axis=1, kind="stable")[:, :kmax]
        for s in np.flatnonzero(attend):
            picked = np.sort(top[s, : k[s]])
            stu.append(np.full(picked.shape, s))
            term.append(np.full(picked.shape, t))
            course.append(picked)
    stu = np.concatenate(stu)
    term = np.concatenate(term)
    course = np.concatenate(course)
    E = stu.shape[0]

    rho = config.ability_strength
    latent = (
        rho * ability[stu]
        + math.sqrt(max(0.0, 1.0 - rho * rho)) * rng.standard_normal(E)
        - difficulty[course]
        - group_course[race[stu], course]
    )
    is_letter = np.empty(E, dtype=bool)
    letter_draw = rng.random(E)
    slot = np.empty(E, dtype=np.int64)  # letter index, or -1 Pass, -2 No-Pass
    for gi, g in enumerate(groups):
        gm = config.groups[g]
        in_g = race[stu] == gi
        is_letter[in_g] = letter_draw[in_g] < gm.letter_share
        idx = np.flatnonzero(in_g & is_letter)
        if idx.size:
            slot[idx] = _rank_assign(latent[idx], config.letter_shares(g))
        idx = np.flatnonzero(in_g & ~is_letter)
        if idx.size:
            pnp = _rank_assign(latent[idx], np.array([gm.pass_share, 1.0 - gm.pass_share]))
            slot[idx] = np.where(pnp == 0, -1, -2)

    demos = [
        StudentDemographics(f"S{s:05d}", groups[race[s]], genders[s], incomes[s], entries[s], majors[s])
        for s in range(S)
    ]
    enrollments = [
        Enrollment(
            f"S{s:05d}",
            int(t),
            f"C{c:03d}",
            GradeLabel("letter", int(g)) if g >= 0 else GradeLabel("pass" if g == -1 else "nopass"),
        )
        for s, t, c, g in zip(stu.tolist(), term.tolist(), course.tolist(), slot.tolist())
    ]
    return enrollments, demos


def generate(config: SynthConfig | None = None) -> CohortDataset:
    config = config or SynthConfig()
    enrollments, demos = generate_enrollments(config)
    return build_dataset(enrollments, demos, config.min_course_enrollments, config.group_list, config.scale)


@dataclass(frozen=True)
class StatCheck:
    statistic: str
    target: float
    observed: float
    passed: bool


def verify_statistics(dataset: CohortDataset, config: SynthConfig, tolerance: float = 0.01) -> list[StatCheck]:
    """Compare enrollment shares and per-group grade shares with the config targets.

    Statistics that cannot be computed (no data) are reported as NaN and fail.
    """
    scale = dataset.scale
    a_letters = scale.cutoff_letters("A")
    race_of = {s.student_id: s.race for s in dataset.students}
    total = {g: 0 for g in config.group_list}
    letter = dict(total)
    a_cat = dict(total)
    pnp = dict(total)
    passed = dict(total)
    for e in dataset.enrollments:
        g = race_of[e.student_id]
        if g not in total:
            continue
        total[g] += 1
        if e.grade.kind == "letter":
            letter[g] += 1
            a_cat[g] += e.grade.index in a_letters
        else:
            pnp[g] += 1
            passed[g] += e.grade.kind == "pass"

    def check(name, target, num, den):
        observed = num / den if den else float("nan")
        ok = bool(den) and abs(observed - target) <= tolerance
        return StatCheck(name, float(target), float(observed), ok)

    out = []
    n_all = sum(total.values())
    for g, p in config.group_proportions.items():
        out.append(check(f"enrollment_share[{g}]", p, total[g], n_all))
    for g in config.group_list:
        gm = config.groups[g]
        out.append(check(f"a_share[{g}]", gm.a_share, a_cat[g], letter[g]))
        out.append(check(f"pass_share[{g}]", gm.pass_share, passed[g], pnp[g]))
    out.append(check("a_share[overall]", config.expected_a_share(), sum(a_cat.values()), sum(letter.values())))
    return out
