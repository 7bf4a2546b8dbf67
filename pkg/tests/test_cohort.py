from __future__ import annotations

import io

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fairgrade.cohort import (
    DEFAULT_GROUPS,
    DataError,
    GradeLabel,
    GradeScale,
    build_dataset,
    chronological_split,
    format_demographics,
    format_enrollments,
    load_dataset,
    parse_demographics,
    parse_enrollments,
)

from conftest import demo, enr

HEADER = "student_id,term,course_id,grade\n"


def test_letter_row_maps_fields():
    (e,) = parse_enrollments(io.StringIO(HEADER + "s1,0,CS61A,A-\n"))
    assert (e.student_id, e.term, e.course_id) == ("s1", 0, "CS61A")
    assert e.grade == GradeLabel("letter", 2)


def test_pass_row():
    (e,) = parse_enrollments(io.StringIO(HEADER + "s1,0,CS61A,P\n"))
    assert e.grade.kind == "pass"


def test_unknown_token_names_line():
    with pytest.raises(DataError, match="unknown grade token 'Q' at line 2"):
        parse_enrollments(io.StringIO(HEADER + "s1,0,CS61A,Q\n"))


def test_duplicate_key_rejected():
    with pytest.raises(DataError, match="duplicate"):
        parse_enrollments(io.StringIO(HEADER + "s1,0,X,A\ns1,0,X,B\n"))


def test_row_order_preserved():
    text = HEADER + "s2,1,Y,B\ns1,0,X,A\ns1,1,X,NP\n"
    assert [(e.student_id, e.term) for e in parse_enrollments(io.StringIO(text))] == [("s2", 1), ("s1", 0), ("s1", 1)]


def test_a_category():
    scale = GradeScale()
    assert scale.m == 13 and scale.block == 15
    cat = [t for t in scale.letters if scale.in_a_category(scale.parse(t))]
    assert cat == ["A+", "A", "A-"]
    assert not scale.in_a_category(scale.parse("P"))


def test_course_below_threshold_dropped():
    rows = [enr(f"s{i}", 0, "big", "A") for i in range(20)] + [enr(f"s{i}", 1, "small", "B") for i in range(19)]
    demos = [demo(f"s{i}") for i in range(20)]
    ds = build_dataset(rows, demos, 20)
    assert ds.catalog == ("big",)
    assert all(e.course_id == "big" for e in ds.enrollments)
    assert build_dataset(rows, demos, 0).catalog == ("big", "small")


def test_catalog_first_appearance_and_term_count(hand_dataset):
    assert hand_dataset.catalog == ("c0", "c1", "c2")
    assert hand_dataset.term_count == 4


def test_empty_dataset():
    with pytest.raises(DataError, match="empty dataset"):
        build_dataset([], [], 0)


def test_missing_demographics():
    with pytest.raises(DataError, match="demographics"):
        build_dataset([enr("s1", 0, "c", "A")], [], 0)


def test_unknown_race_rejected():
    text = "student_id,race,gender,income_bracket,entry_status,majors\ns1,Martian,F,low,freshman,CS\n"
    with pytest.raises(DataError):
        parse_demographics(io.StringIO(text), DEFAULT_GROUPS)


def test_terms_sorted_in_records(hand_dataset):
    for s in hand_dataset.students:
        terms = [t for t, _ in s.terms]
        assert terms == sorted(terms)


@pytest.mark.parametrize(
    "T, train, val, test",
    [(15, set(range(13)), {13}, {14}), (3, {0}, {1}, {2}), (12, set(range(10)), {10}, {11})],
)
def test_split_examples(T, train, val, test):
    sp = chronological_split(T)
    assert (set(sp.train_terms), set(sp.val_terms), set(sp.test_terms)) == (train, val, test)


def test_split_needs_three_terms():
    with pytest.raises(ValueError):
        chronological_split(2)


@given(st.integers(3, 200))
def test_split_partitions(T):
    sp = chronological_split(T)
    assert sp.train_terms | sp.val_terms | sp.test_terms == set(range(T))
    assert not (sp.train_terms & sp.val_terms or sp.val_terms & sp.test_terms or sp.train_terms & sp.test_terms)
    assert max(sp.train_terms) < min(sp.val_terms) <= max(sp.val_terms) < min(sp.test_terms)


def test_csv_round_trip(tiny_dataset, tmp_path):
    enr_path, dem_path = tiny_dataset.to_csv(tmp_path)
    back = load_dataset(enr_path, dem_path, 0, tiny_dataset.group_list, tiny_dataset.scale)
    assert back == tiny_dataset


def test_format_parse_inverse(hand_dataset):
    text = format_enrollments(hand_dataset.enrollments)
    assert tuple(parse_enrollments(io.StringIO(text))) == hand_dataset.enrollments
    dtext = format_demographics([s.demographics for s in hand_dataset.students])
    assert [d.majors for d in parse_demographics(io.StringIO(dtext))] == [("CS",), ("ECON", "MATH")]


def _raw_cohort():
    from fairgrade.synth import SynthConfig, generate_enrollments

    return generate_enrollments(SynthConfig(seed=4, num_students=150, num_courses=15, num_terms=4))


RAW = _raw_cohort()


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 80), st.integers(0, 80))
def test_filtering_monotone(a, b):
    lo, hi = sorted((a, b))
    rows, demos = RAW
    try:
        strict = set(build_dataset(rows, demos, hi).catalog)
    except DataError:
        strict = set()
    assert strict <= set(build_dataset(rows, demos, lo).catalog)
