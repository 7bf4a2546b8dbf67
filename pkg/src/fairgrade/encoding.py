"""Multi-hot step encoding of enrollment histories and padded batching.

A course block holds ``m + 2`` slots: ``m`` letter grades, then Pass, then
No-Pass. Step ``k`` of a sequence feeds the grades of one term together with
the enrollments of the following term and predicts that following term's
grades.

Sequences are stored compactly (course/slot indices per term); the dense
arrays are materialized on demand by :meth:`EncodedSequence.step` and
:class:`PaddedBatch`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .cohort import CohortDataset, StudentRecord

FEATURE_MODES = ("none", "race", "multi")


@dataclass(frozen=True)
class AttributeVocab:
    """Fixed attribute order: race, gender, income bracket, entry status, majors."""

    groups: tuple[str, ...]
    genders: tuple[str, ...] = ()
    incomes: tuple[str, ...] = ()
    entries: tuple[str, ...] = ()
    majors: tuple[str, ...] = ()

    @classmethod
    def from_dataset(cls, dataset: CohortDataset) -> "AttributeVocab":
        demos = [s.demographics for s in dataset.students]
        return cls(
            tuple(dataset.group_list),
            tuple(sorted({d.gender for d in demos})),
            tuple(sorted({d.income_bracket for d in demos})),
            tuple(sorted({d.entry_status for d in demos})),
            tuple(sorted({m for d in demos for m in d.majors})),
        )

    def width(self, feature_mode: str) -> int:
        if feature_mode == "none":
            return 0
        if feature_mode == "race":
            return len(self.groups)
        if feature_mode == "multi":
            return sum(len(x) for x in (self.groups, self.genders, self.incomes, self.entries, self.majors))
        raise ValueError(f"unknown feature mode {feature_mode!r}; expected one of {FEATURE_MODES}")

    def encode(self, student: StudentRecord, feature_mode: str) -> np.ndarray:
        vec = np.zeros(self.width(feature_mode))
        if feature_mode == "none":
            return vec
        d = student.demographics
        vec[self.groups.index(d.race)] = 1.0
        if feature_mode == "race":
            return vec
        offset = len(self.groups)
        for vocab, value in ((self.genders, d.gender), (self.incomes, d.income_bracket), (self.entries, d.entry_status)):
            if value in vocab:
                vec[offset + vocab.index(value)] = 1.0
            offset += len(vocab)
        for m in d.majors:
            if m in self.majors:
                vec[offset + self.majors.index(m)] = 1.0
        return vec

    def to_json(self) -> dict:
        return {
            "groups": list(self.groups),
            "genders": list(self.genders),
            "incomes": list(self.incomes),
            "entries": list(self.entries),
            "majors": list(self.majors),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "AttributeVocab":
        return cls(*(tuple(obj[k]) for k in ("groups", "genders", "incomes", "entries", "majors")))


@dataclass(frozen=True)
class EncodedStep:
    grade_vec: np.ndarray  # (m+2)*n
    course_vec: np.ndarray  # n, enrollments of the predicted term
    attr_vec: np.ndarray
    target: np.ndarray  # (m+2)*n one-hot blocks for the predicted term
    mask: np.ndarray  # n
    term: int  # predicted term


@dataclass(frozen=True)
class EncodedSequence:
    student_id: str
    race_index: int
    attr: np.ndarray
    start_term: int
    # per term of the student's span: course indices and block slots (-1 = no grade known)
    term_courses: tuple[np.ndarray, ...]
    term_slots: tuple[np.ndarray, ...]
    n_courses: int
    block: int

    @property
    def n_steps(self) -> int:
        return max(1, len(self.term_courses) - 1)

    @property
    def step_terms(self) -> np.ndarray:
        """Predicted term of each step."""
        return self.start_term + 1 + np.arange(self.n_steps)

    @property
    def input_width(self) -> int:
        return self.block * self.n_courses + self.n_courses + self.attr.shape[0]

    def _next(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        if k + 1 < len(self.term_courses):
            return self.term_courses[k + 1], self.term_slots[k + 1]
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty

    def step(self, k: int) -> EncodedStep:
        n, blk = self.n_courses, self.block
        grade_vec = np.zeros(blk * n)
        courses, slots = self.term_courses[k], self.term_slots[k]
        known = slots >= 0
        grade_vec[courses[known] * blk + slots[known]] = 1.0
        nxt_courses, nxt_slots = self._next(k)
        course_vec = np.zeros(n)
        course_vec[nxt_courses] = 1.0
        target = np.zeros(blk * n)
        mask = np.zeros(n)
        known = nxt_slots >= 0
        target[nxt_courses[known] * blk + nxt_slots[known]] = 1.0
        mask[nxt_courses[known]] = 1.0
        return EncodedStep(grade_vec, course_vec, self.attr.copy(), target, mask, int(self.step_terms[k]))

    def steps(self) -> list[EncodedStep]:
        return [self.step(k) for k in range(self.n_steps)]

    def truncate(self, last_term: int) -> "EncodedSequence | None":
        """Keep only steps predicting terms up to ``last_term``."""
        keep_terms = last_term - self.start_term + 1
        if keep_terms < 2:
            return None
        if keep_terms >= len(self.term_courses):
            return self
        return EncodedSequence(
            self.student_id,
            self.race_index,
            self.attr,
            self.start_term,
            self.term_courses[:keep_terms],
            self.term_slots[:keep_terms],
            self.n_courses,
            self.block,
        )

    def with_next_term(self, course_indices: Sequence[int]) -> "EncodedSequence":
        """Append an ungraded term, so the last step predicts grades for ``course_indices``."""
        courses = np.asarray(list(course_indices), dtype=np.int64)
        return EncodedSequence(
            self.student_id,
            self.race_index,
            self.attr,
            self.start_term,
            self.term_courses + (courses,),
            self.term_slots + (np.full(courses.shape, -1, dtype=np.int64),),
            self.n_courses,
            self.block,
        )

    def n_targets(self, terms=None) -> int:
        total = 0
        for k, term in enumerate(self.step_terms):
            if terms is None or int(term) in terms:
                total += int((self._next(k)[1] >= 0).sum())
        return total


def encode_student(
    student: StudentRecord,
    dataset: CohortDataset,
    feature_mode: str = "none",
    vocab: AttributeVocab | None = None,
    course_index: dict[str, int] | None = None,
) -> EncodedSequence:
    if feature_mode not in FEATURE_MODES:
        raise ValueError(f"unknown feature mode {feature_mode!r}; expected one of {FEATURE_MODES}")
    vocab = vocab or AttributeVocab.from_dataset(dataset)
    course_index = course_index if course_index is not None else dataset.course_index()
    scale = dataset.scale
    terms = student.term_map()
    if not terms:
        raise ValueError(f"student {student.student_id!r} has no enrollments")
    start, end = min(terms), max(terms)
    courses, slots = [], []
    for t in range(start, end + 1):
        rows = terms.get(t, ())
        try:
            courses.append(np.array([course_index[c] for c, _ in rows], dtype=np.int64))
        except KeyError as exc:
            raise RuntimeError(f"course {exc.args[0]!r} is not in the catalog") from None
        slots.append(np.array([scale.position(g) for _, g in rows], dtype=np.int64))
    return EncodedSequence(
        student.student_id,
        vocab.groups.index(student.race),
        vocab.encode(student, feature_mode),
        start,
        tuple(courses),
        tuple(slots),
        len(course_index),
        scale.block,
    )


def encode_dataset(dataset: CohortDataset, feature_mode: str = "none", vocab: AttributeVocab | None = None):
    vocab = vocab or AttributeVocab.from_dataset(dataset)
    index = dataset.course_index()
    return [encode_student(s, dataset, feature_mode, vocab, index) for s in dataset.students]


@dataclass
class PaddedBatch:
    """Time-major padded batch. Row ``t * size + b`` of ``inputs`` is step ``t`` of sequence ``b``."""

    sequences: list[EncodedSequence]
    inputs: sp.csr_matrix  # (T*B, D)
    target_slots: np.ndarray  # (T, B, n) int, -1 where no target
    step_valid: np.ndarray  # (T, B) bool
    races: np.ndarray  # (B,)
    n_courses: int
    block: int
    attr_width: int

    @property
    def n_steps(self) -> int:
        return self.step_valid.shape[0]

    @property
    def size(self) -> int:
        return self.step_valid.shape[1]

    @property
    def input_width(self) -> int:
        return self.inputs.shape[1]

    @property
    def masks(self) -> np.ndarray:
        return (self.target_slots >= 0).astype(float)

    @property
    def targets(self) -> np.ndarray:
        """Dense one-hot targets, shape (T, B, n, m + 2)."""
        T, B, n = self.target_slots.shape
        out = np.zeros((T, B, n, self.block))
        t, b, c = np.nonzero(self.target_slots >= 0)
        out[t, b, c, self.target_slots[t, b, c]] = 1.0
        return out

    def dense_inputs(self) -> np.ndarray:
        return self.inputs.toarray().reshape(self.n_steps, self.size, -1)


def _make_batch(seqs: list[EncodedSequence], target_terms) -> PaddedBatch:
    first = seqs[0]
    n, blk = first.n_courses, first.block
    attr_w = first.attr.shape[0]
    width = blk * n + n + attr_w
    T, B = max(s.n_steps for s in seqs), len(seqs)
    rows, cols = [], []
    target_slots = np.full((T, B, n), -1, dtype=np.int64)
    step_valid = np.zeros((T, B), dtype=bool)
    for b, s in enumerate(seqs):
        if s.n_courses != n or s.block != blk or s.attr.shape[0] != attr_w:
            raise ValueError("sequences in a batch must share dimensions")
        attr_nz = blk * n + n + np.flatnonzero(s.attr)
        for k in range(s.n_steps):
            r = k * B + b
            courses, slots = s.term_courses[k], s.term_slots[k]
            known = slots >= 0
            nxt_c, nxt_s = s._next(k)
            c = np.concatenate([courses[known] * blk + slots[known], blk * n + nxt_c, attr_nz])
            cols.append(c)
            rows.append(np.full(c.shape, r, dtype=np.int64))
            step_valid[k, b] = True
            term = int(s.start_term + 1 + k)
            if target_terms is None or term in target_terms:
                known = nxt_s >= 0
                target_slots[k, b, nxt_c[known]] = nxt_s[known]
    rows = np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64)
    cols = np.concatenate(cols) if cols else np.zeros(0, dtype=np.int64)
    # attribute entries may be non-binary in principle; read their values
    data = np.ones(rows.shape[0])
    attr_sel = cols >= blk * n + n
    if attr_sel.any():
        b_idx = rows[attr_sel] % B
        data[attr_sel] = [seqs[b].attr[c - blk * n - n] for b, c in zip(b_idx, cols[attr_sel])]
    inputs = sp.csr_matrix((data, (rows, cols)), shape=(T * B, width))
    races = np.array([s.race_index for s in seqs], dtype=np.int64)
    return PaddedBatch(list(seqs), inputs, target_slots, step_valid, races, n, blk, attr_w)


def batch(sequences: Sequence[EncodedSequence], max_batch: int, target_terms=None) -> list[PaddedBatch]:
    """Chunk sequences in order into zero-padded batches of at most ``max_batch``.

    ``target_terms`` restricts which predicted terms carry targets; steps
    predicting other terms still run but are masked out.
    """
    if max_batch < 1:
        raise ValueError("max_batch must be >= 1")
    seqs = list(sequences)
    return [_make_batch(seqs[i : i + max_batch], target_terms) for i in range(0, len(seqs), max_batch)]
