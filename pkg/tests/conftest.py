from __future__ import annotations

import pytest

from fairgrade.cohort import DEFAULT_GROUPS, Enrollment, GradeScale, StudentDemographics, build_dataset
from fairgrade.synth import SynthConfig, generate

SCALE = GradeScale()


def enr(student, term, course, token):
    return Enrollment(student, term, course, SCALE.parse(token))


def demo(student, race="White", **kw):
    return StudentDemographics(student, race, **kw)


@pytest.fixture(scope="session")
def tiny_config() -> SynthConfig:
    return SynthConfig(seed=11, num_students=240, num_courses=12, num_terms=5, min_course_enrollments=5)


@pytest.fixture(scope="session")
def tiny_dataset(tiny_config):
    return generate(tiny_config)


@pytest.fixture
def hand_dataset():
    """Two students, three courses, four terms; s2 skips term 1."""
    rows = [
        enr("s1", 0, "c0", "A"),
        enr("s1", 0, "c1", "B+"),
        enr("s1", 1, "c2", "P"),
        enr("s1", 2, "c0", "A-"),
        enr("s2", 0, "c1", "C"),
        enr("s2", 2, "c2", "NP"),
        enr("s2", 3, "c0", "A+"),
    ]
    demos = [demo("s1", "Asian", gender="F", majors=("CS",)), demo("s2", "White", gender="M", majors=("ECON", "MATH"))]
    return build_dataset(rows, demos, 0, DEFAULT_GROUPS)


# acceptance verdicts, printed once at the end of the session
VERDICTS: dict[int, tuple[bool, str]] = {}


def record(criterion: int, ok: bool, detail: str) -> None:
    VERDICTS[criterion] = (bool(ok), detail)
    print(f"criterion {criterion}: {'PASS' if ok else 'FAIL'} - {detail}")


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(VERDICTS):
        ok, detail = VERDICTS[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}")
