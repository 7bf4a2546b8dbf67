from __future__ import annotations

import numpy as np
import pytest

from fairgrade.cohort import DEFAULT_GROUPS, build_dataset
from fairgrade.encoding import AttributeVocab, batch, encode_dataset, encode_student

from conftest import demo, enr


def _ten_course_dataset(rows, race="White"):
    # pad the catalog to 10 courses with a filler student so indices are stable
    filler = [enr("zz", 0, f"c{i}", "B") for i in range(10)]
    return build_dataset(filler + rows, [demo("zz"), demo("s1", race)], 0, DEFAULT_GROUPS)


def test_single_step_construction():
    ds = _ten_course_dataset([enr("s1", 0, "c3", "A"), enr("s1", 1, "c7", "P")])
    student = next(s for s in ds.students if s.student_id == "s1")
    seq = encode_student(student, ds, "none")
    assert seq.n_steps == 1
    step = seq.step(0)
    m, blk, n = 13, 15, 10
    assert step.grade_vec.shape == (blk * n,)
    assert np.flatnonzero(step.grade_vec).tolist() == [3 * blk + 1]
    assert np.flatnonzero(step.course_vec).tolist() == [7]
    assert np.flatnonzero(step.target).tolist() == [7 * blk + m]  # Pass slot of the P/NP pair
    assert np.array_equal(step.mask, np.eye(n)[7])
    assert step.attr_vec.shape == (0,)


def test_race_feature_one_hot():
    ds = _ten_course_dataset([enr("s1", 0, "c3", "A"), enr("s1", 1, "c7", "P")], race="International")
    student = next(s for s in ds.students if s.student_id == "s1")
    seq = encode_student(student, ds, "race")
    assert seq.race_index == 2
    assert np.array_equal(seq.step(0).attr_vec, np.eye(8)[2])


def test_skipped_term_masked(hand_dataset):
    s2 = next(s for s in hand_dataset.students if s.student_id == "s2")
    seq = encode_student(s2, hand_dataset)
    terms = seq.step_terms.tolist()
    assert terms == [1, 2, 3]
    step1 = seq.step(0)
    assert step1.mask.sum() == 0 and step1.target.sum() == 0
    # the term after the gap starts from an all-zero grade vector
    assert seq.step(1).grade_vec.sum() == 0


def test_unknown_course_is_internal_error(hand_dataset):
    student = hand_dataset.students[0]
    with pytest.raises(RuntimeError):
        encode_student(student, hand_dataset, course_index={"c0": 0})


def test_multi_feature_order(hand_dataset):
    vocab = AttributeVocab.from_dataset(hand_dataset)
    s2 = next(s for s in hand_dataset.students if s.student_id == "s2")
    f = vocab.encode(s2, "multi")
    assert f.shape == (vocab.width("multi"),)
    K = len(vocab.groups)
    assert f[:K].tolist() == np.eye(K)[0].tolist()  # race block first
    tail = f[-len(vocab.majors):]
    assert [m for m, on in zip(vocab.majors, tail) if on] == ["ECON", "MATH"]


def test_dimensional_contract_and_invariants(tiny_dataset):
    m, n = tiny_dataset.scale.m, tiny_dataset.n_courses
    blk = m + 2
    for seq in encode_dataset(tiny_dataset, "race")[:60]:
        for st in seq.steps():
            assert st.grade_vec.shape == ((m + 2) * n,) and st.target.shape == ((m + 2) * n,)
            assert st.course_vec.shape == (n,) and st.mask.shape == (n,)
            g = st.grade_vec.reshape(n, blk)
            assert (g.sum(axis=1) <= 1).all()
            t = st.target.reshape(n, blk)
            assert np.array_equal(t.sum(axis=1), st.mask)
            # each target lies in one sub-block only
            assert not ((t[:, :m].sum(axis=1) > 0) & (t[:, m:].sum(axis=1) > 0)).any()


def test_lossless_targets(tiny_dataset):
    scale = tiny_dataset.scale
    tokens = (*scale.letters, "P", "NP")
    seqs = encode_dataset(tiny_dataset)
    for student, seq in list(zip(tiny_dataset.students, seqs))[:60]:
        tm = student.term_map()
        for st in seq.steps():
            t = st.target.reshape(seq.n_courses, scale.block)
            decoded = {
                (tiny_dataset.catalog[i], tokens[int(np.argmax(t[i]))])
                for i in np.flatnonzero(st.mask)
            }
            expected = {(c, scale.token(g)) for c, g in tm.get(st.term, ())}
            assert decoded == expected


def test_batch_padding_example(hand_dataset):
    seqs = encode_dataset(hand_dataset)
    a, b = seqs
    three = [a, a, b]  # lengths 2, 2, 3
    out = batch(three, 2)
    assert [(x.size, x.n_steps) for x in out] == [(2, 2), (1, 3)]
    assert out[0].step_valid.all()


def test_batch_shapes_5():
    from fairgrade.encoding import EncodedSequence

    def seq(length, sid):
        courses = tuple(np.array([0], dtype=np.int64) for _ in range(length + 1))
        slots = tuple(np.array([1], dtype=np.int64) for _ in range(length + 1))
        return EncodedSequence(sid, 0, np.zeros(0), 0, courses, slots, 2, 4)

    out = batch([seq(2, "a"), seq(2, "b"), seq(5, "c")], 2)
    assert [(x.size, x.n_steps) for x in out] == [(2, 2), (1, 5)]
    assert batch([], 3) == []
    (single,) = batch([seq(3, "x")], 4)
    assert single.sequences[0].student_id == "x" and single.step_valid.all()


def test_batch_rows_match_steps(tiny_dataset):
    seqs = encode_dataset(tiny_dataset, "race")[:7]
    (b,) = batch(seqs, 7)
    dense = b.dense_inputs()
    for j, s in enumerate(seqs):
        for k, st in enumerate(s.steps()):
            assert np.array_equal(dense[k, j], np.concatenate([st.grade_vec, st.course_vec, st.attr_vec]))
            assert np.array_equal(b.masks[k, j], st.mask)
        assert not b.step_valid[s.n_steps :, j].any()
        assert (dense[s.n_steps :, j] == 0).all()


def test_batches_preserve_sequences(tiny_dataset):
    seqs = encode_dataset(tiny_dataset)
    out = batch(seqs, 17)
    assert [s.student_id for b in out for s in b.sequences] == [s.student_id for s in seqs]
