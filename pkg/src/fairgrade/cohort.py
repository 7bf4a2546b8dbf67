"""Domain records, CSV ingestion and chronological splits for enrollment cohorts."""

from __future__ import annotations

import csv
import io
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

DEFAULT_LETTERS: tuple[str, ...] = (
    "A+", "A", "A-", "B+", "B", "B-", "C+", "C", "C-", "D+", "D", "D-", "F",
)
DEFAULT_GROUPS: tuple[str, ...] = (
    "White",
    "Asian",
    "International",
    "Chicano/Latino",
    "African American",
    "Native American",
    "Pacific Islander",
    "Decline-to-State",
)
DECLINE_TO_STATE = "Decline-to-State"
PASS_TOKEN = "P"
NOPASS_TOKEN = "NP"

ENROLLMENT_HEADER = ("student_id", "term", "course_id", "grade")
DEMOGRAPHIC_HEADER = ("student_id", "race", "gender", "income_bracket", "entry_status", "majors")


class DataError(ValueError):
    """Raised for malformed or inconsistent cohort input."""


@dataclass(frozen=True)
class GradeScale:
    """Ordered letter scale, best grade first.

    Block layout used everywhere downstream: letter ``i`` sits at position
    ``i``, Pass at ``m`` and No-Pass at ``m + 1``.
    """

    letters: tuple[str, ...] = DEFAULT_LETTERS

    def __post_init__(self):
        if not self.letters:
            raise DataError("letter scale is empty")
        if len(set(self.letters)) != len(self.letters):
            raise DataError("letter scale has duplicate tokens")
        if {PASS_TOKEN, NOPASS_TOKEN} & set(self.letters):
            raise DataError("letter scale may not contain P or NP")

    @property
    def m(self) -> int:
        return len(self.letters)

    @property
    def block(self) -> int:
        return self.m + 2

    def parse(self, token: str) -> "GradeLabel":
        token = token.strip()
        if token == PASS_TOKEN:
            return GradeLabel("pass")
        if token == NOPASS_TOKEN:
            return GradeLabel("nopass")
        try:
            return GradeLabel("letter", self.letters.index(token))
        except ValueError:
            raise DataError(f"unknown grade token {token!r}") from None

    def token(self, grade: "GradeLabel") -> str:
        if grade.kind == "pass":
            return PASS_TOKEN
        if grade.kind == "nopass":
            return NOPASS_TOKEN
        return self.letters[grade.index]

    def position(self, grade: "GradeLabel") -> int:
        """Index of the grade inside a course's (m + 2)-wide block."""
        if grade.kind == "pass":
            return self.m
        if grade.kind == "nopass":
            return self.m + 1
        return grade.index

    def cutoff_letters(self, cutoff: str = "A") -> frozenset[int]:
        """Letter indices counted as positive for a cutoff ("A" or "B").

        "A" is the A category (A+, A, A-); "B" means not lower than B.
        """
        allowed = {"A": ("A",), "B": ("A", "B")}.get(cutoff)
        if allowed is None:
            raise DataError(f"unknown cutoff {cutoff!r}; expected 'A' or 'B'")
        return frozenset(i for i, tok in enumerate(self.letters) if tok[0] in allowed)

    def in_a_category(self, grade: "GradeLabel") -> bool:
        return grade.kind == "letter" and grade.index in self.cutoff_letters("A")


@dataclass(frozen=True)
class GradeLabel:
    kind: str  # "letter" | "pass" | "nopass"
    index: int = -1

    def __post_init__(self):
        if self.kind not in ("letter", "pass", "nopass"):
            raise DataError(f"bad grade kind {self.kind!r}")
        if (self.kind == "letter") != (self.index >= 0):
            raise DataError("letter grades need an index, P/NP must not have one")


@dataclass(frozen=True)
class Enrollment:
    student_id: str
    term: int
    course_id: str
    grade: GradeLabel


@dataclass(frozen=True)
class StudentDemographics:
    student_id: str
    race: str
    gender: str = ""
    income_bracket: str = ""
    entry_status: str = ""
    majors: tuple[str, ...] = ()


@dataclass(frozen=True)
class StudentRecord:
    demographics: StudentDemographics
    # term -> ((course_id, grade), ...), ascending terms
    terms: tuple[tuple[int, tuple[tuple[str, GradeLabel], ...]], ...]

    @property
    def student_id(self) -> str:
        return self.demographics.student_id

    @property
    def race(self) -> str:
        return self.demographics.race

    def term_map(self) -> dict[int, tuple[tuple[str, GradeLabel], ...]]:
        return dict(self.terms)


@dataclass(frozen=True)
class CohortDataset:
    catalog: tuple[str, ...]
    students: tuple[StudentRecord, ...]
    term_count: int
    group_list: tuple[str, ...] = DEFAULT_GROUPS
    scale: GradeScale = field(default_factory=GradeScale)
    # enrollments in ingestion order; kept so serialization round-trips exactly
    enrollments: tuple[Enrollment, ...] = ()

    @property
    def n_courses(self) -> int:
        return len(self.catalog)

    def course_index(self) -> dict[str, int]:
        return {c: i for i, c in enumerate(self.catalog)}

    def race_index(self, race: str) -> int:
        return self.group_list.index(race)

    def to_csv(self, out_dir: str | Path) -> tuple[Path, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        enr_path = out_dir / "enrollments.csv"
        dem_path = out_dir / "demographics.csv"
        enr_path.write_text(format_enrollments(self.enrollments, self.scale), encoding="utf-8")
        dem_path.write_text(
            format_demographics([s.demographics for s in self.students]), encoding="utf-8"
        )
        return enr_path, dem_path


@dataclass(frozen=True)
class SplitSpec:
    train_terms: frozenset[int]
    val_terms: frozenset[int]
    test_terms: frozenset[int]

    @property
    def last_train_term(self) -> int:
        return max(self.train_terms)

    @property
    def val_term(self) -> int:
        return min(self.val_terms)

    @property
    def test_term(self) -> int:
        return min(self.test_terms)


def _read_text(source: str | Path | io.TextIOBase) -> str:
    if isinstance(source, io.TextIOBase):
        return source.read()
    path = Path(source)
    return path.read_text(encoding="utf-8")


def _rows(text: str, header: Sequence[str]) -> Iterable[tuple[int, list[str]]]:
    reader = csv.reader(io.StringIO(text))
    try:
        first = next(reader)
    except StopIteration:
        raise DataError("missing CSV header") from None
    if tuple(h.strip() for h in first) != tuple(header):
        raise DataError(f"expected header {','.join(header)}, got {','.join(first)}")
    for line_no, row in enumerate(reader, start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != len(header):
            raise DataError(f"expected {len(header)} fields at line {line_no}, got {len(row)}")
        yield line_no, row


def parse_enrollments(source, scale: GradeScale | None = None) -> list[Enrollment]:
    """Parse ``student_id,term,course_id,grade`` rows, preserving row order."""
    scale = scale or GradeScale()
    out: list[Enrollment] = []
    seen: set[tuple[str, int, str]] = set()
    for line_no, (sid, term, cid, grade) in _rows(_read_text(source), ENROLLMENT_HEADER):
        try:
            label = scale.parse(grade)
        except DataError:
            raise DataError(f"unknown grade token {grade.strip()!r} at line {line_no}") from None
        try:
            term_i = int(term)
        except ValueError:
            raise DataError(f"bad term {term!r} at line {line_no}") from None
        if term_i < 0:
            raise DataError(f"negative term at line {line_no}")
        key = (sid.strip(), term_i, cid.strip())
        if key in seen:
            raise DataError(f"duplicate enrollment {key} at line {line_no}")
        seen.add(key)
        out.append(Enrollment(key[0], term_i, key[2], label))
    return out


def parse_demographics(source, group_list: Sequence[str] = DEFAULT_GROUPS) -> list[StudentDemographics]:
    out = []
    seen = set()
    for line_no, (sid, race, gender, income, entry, majors) in _rows(
        _read_text(source), DEMOGRAPHIC_HEADER
    ):
        sid = sid.strip()
        if sid in seen:
            raise DataError(f"duplicate demographics record for {sid!r} at line {line_no}")
        seen.add(sid)
        race = race.strip()
        if race not in group_list:
            raise DataError(f"unknown race {race!r} at line {line_no}")
        major_set = tuple(m for m in (x.strip() for x in majors.split(";")) if m)
        out.append(
            StudentDemographics(sid, race, gender.strip(), income.strip(), entry.strip(), major_set)
        )
    return out


def format_enrollments(enrollments: Iterable[Enrollment], scale: GradeScale | None = None) -> str:
    scale = scale or GradeScale()
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ENROLLMENT_HEADER)
    for e in enrollments:
        w.writerow((e.student_id, e.term, e.course_id, scale.token(e.grade)))
    return buf.getvalue()


def format_demographics(records: Iterable[StudentDemographics]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(DEMOGRAPHIC_HEADER)
    for d in records:
        w.writerow((d.student_id, d.race, d.gender, d.income_bracket, d.entry_status, ";".join(d.majors)))
    return buf.getvalue()


def build_dataset(
    enrollments: Sequence[Enrollment],
    demographics: Sequence[StudentDemographics],
    min_course_enrollments: int = 20,
    group_list: Sequence[str] = DEFAULT_GROUPS,
    scale: GradeScale | None = None,
) -> CohortDataset:
    """Assemble a dataset, dropping courses with fewer than ``min_course_enrollments`` enrollments."""
    if min_course_enrollments < 0:
        raise DataError("min_course_enrollments must be >= 0")
    if not enrollments:
        raise DataError("empty dataset")
    scale = scale or GradeScale()
    group_list = tuple(group_list)

    demo_by_id = {}
    for d in demographics:
        if d.race not in group_list:
            raise DataError(f"student {d.student_id!r} has race {d.race!r} outside the group list")
        demo_by_id[d.student_id] = d
    missing = sorted({e.student_id for e in enrollments} - demo_by_id.keys())
    if missing:
        raise DataError(f"no demographics record for student(s): {', '.join(missing[:5])}")

    counts = Counter(e.course_id for e in enrollments)
    kept = tuple(e for e in enrollments if counts[e.course_id] >= min_course_enrollments)
    if not kept:
        raise DataError("empty dataset")

    keys = set()
    catalog: dict[str, None] = {}
    per_student: dict[str, dict[int, list[tuple[str, GradeLabel]]]] = {}
    for e in kept:
        key = (e.student_id, e.term, e.course_id)
        if key in keys:
            raise DataError(f"duplicate enrollment {key}")
        keys.add(key)
        catalog.setdefault(e.course_id, None)
        per_student.setdefault(e.student_id, {}).setdefault(e.term, []).append((e.course_id, e.grade))

    students = tuple(
        StudentRecord(
            d,
            tuple((t, tuple(per_student[d.student_id][t])) for t in sorted(per_student[d.student_id])),
        )
        for d in demographics
        if d.student_id in per_student
    )
    term_count = max(e.term for e in kept) + 1
    return CohortDataset(tuple(catalog), students, term_count, group_list, scale, kept)


def load_dataset(
    enrollments_path,
    demographics_path,
    min_course_enrollments: int = 20,
    group_list: Sequence[str] = DEFAULT_GROUPS,
    scale: GradeScale | None = None,
) -> CohortDataset:
    scale = scale or GradeScale()
    return build_dataset(
        parse_enrollments(enrollments_path, scale),
        parse_demographics(demographics_path, group_list),
        min_course_enrollments,
        group_list,
        scale,
    )


def chronological_split(dataset: CohortDataset | int, ratios=(13, 1, 1)) -> SplitSpec:
    """Trailing-term split: the last terms go to test, the ones before to validation.

    Validation and test sizes follow ``ratios`` rounded, with at least one term each.
    """
    term_count = dataset if isinstance(dataset, int) else dataset.term_count
    if term_count < 3:
        raise DataError(f"need at least 3 terms for a split, got {term_count}")
    total = sum(ratios)
    n_val = max(1, round(term_count * ratios[1] / total))
    n_test = max(1, round(term_count * ratios[2] / total))
    if term_count - n_val - n_test < 1:
        n_val = n_test = 1
    train_end = term_count - n_val - n_test
    return SplitSpec(
        frozenset(range(train_end)),
        frozenset(range(train_end, train_end + n_val)),
        frozenset(range(train_end + n_val, term_count)),
    )
