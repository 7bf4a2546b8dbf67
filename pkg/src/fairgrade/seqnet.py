"""Single-layer LSTM grade predictor with an adversarial race head.

Everything is float64 numpy with a hand-written backward pass. Gate order
inside the fused gate matrices is input, forget, cell, output.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np
import scipy.sparse as sp

from .encoding import PaddedBatch

MODES = ("train", "infer_full", "infer_rmv")
TENSOR_ORDER = ("W_x", "W_h", "b", "W_grade", "b_grade", "W_race", "b_race")


class NonFiniteGradient(FloatingPointError):
    pass


@dataclass(frozen=True)
class ModelDims:
    n_courses: int
    n_letters: int
    hidden_size: int = 64
    attr_size: int = 0
    race_classes: int = 8

    def __post_init__(self):
        for f in ("n_courses", "n_letters", "hidden_size", "race_classes"):
            if getattr(self, f) <= 0:
                raise ValueError(f"{f} must be positive, got {getattr(self, f)}")
        if self.attr_size < 0:
            raise ValueError("attr_size must be >= 0")

    @property
    def block(self) -> int:
        return self.n_letters + 2

    @property
    def grade_output_size(self) -> int:
        return self.block * self.n_courses

    @property
    def input_size(self) -> int:
        return self.grade_output_size + self.n_courses + self.attr_size

    def shapes(self) -> dict[str, tuple[int, ...]]:
        H = self.hidden_size
        return {
            "W_x": (self.input_size, 4 * H),
            "W_h": (H, 4 * H),
            "b": (4 * H,),
            "W_grade": (H, self.grade_output_size),
            "b_grade": (self.grade_output_size,),
            "W_race": (H, self.race_classes),
            "b_race": (self.race_classes,),
        }


@dataclass
class ModelParams:
    W_x: np.ndarray
    W_h: np.ndarray
    b: np.ndarray
    W_grade: np.ndarray
    b_grade: np.ndarray
    W_race: np.ndarray
    b_race: np.ndarray

    def tensors(self) -> list[tuple[str, np.ndarray]]:
        return [(f.name, getattr(self, f.name)) for f in fields(self)]

    def copy(self) -> "ModelParams":
        return ModelParams(**{k: v.copy() for k, v in self.tensors()})

    @classmethod
    def zeros_like(cls, other: "ModelParams") -> "ModelParams":
        return cls(**{k: np.zeros_like(v) for k, v in other.tensors()})

    def dims(self, n_letters: int) -> ModelDims:
        H = self.W_h.shape[0]
        n = self.W_grade.shape[1] // (n_letters + 2)
        return ModelDims(n, n_letters, H, self.W_x.shape[0] - (n_letters + 3) * n, self.W_race.shape[1])


ParamGrads = ModelParams


def init_params(dims: ModelDims, seed: int) -> ModelParams:
    """Glorot-uniform weights, zero biases except the forget gate at 1.0."""
    rng = np.random.default_rng(seed)
    H, D = dims.hidden_size, dims.input_size

    def glorot(fan_in, fan_out, shape):
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-lim, lim, size=shape)

    gates = glorot(D + H, H, (D + H, 4 * H))
    b = np.zeros(4 * H)
    b[H : 2 * H] = 1.0
    return ModelParams(
        W_x=gates[:D].copy(),
        W_h=gates[D:].copy(),
        b=b,
        W_grade=glorot(H, dims.grade_output_size, (H, dims.grade_output_size)),
        b_grade=np.zeros(dims.grade_output_size),
        W_race=glorot(H, dims.race_classes, (H, dims.race_classes)),
        b_race=np.zeros(dims.race_classes),
    )


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def log_softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = z - z.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


@dataclass
class ForwardTrace:
    inputs: object  # (T*B, D) sparse or dense
    gates: np.ndarray  # (T, B, 4H) post-activation i, f, g, o
    cells: np.ndarray  # (T, B, H)
    hidden: np.ndarray  # (T, B, H)
    grade_logp: np.ndarray  # (T, B, n, m+2) letter and P/NP blocks log-normalized separately
    race_logp: np.ndarray | None  # (T, B, K)
    n_letters: int

    @property
    def grade_probs(self) -> np.ndarray:
        return np.exp(self.grade_logp)

    @property
    def race_probs(self) -> np.ndarray | None:
        return None if self.race_logp is None else np.exp(self.race_logp)


def _grade_log_probs(logits: np.ndarray, m: int) -> np.ndarray:
    out = np.empty_like(logits)
    out[..., :m] = log_softmax(logits[..., :m])
    out[..., m:] = log_softmax(logits[..., m:])
    return out


def forward(
    params: ModelParams,
    batch: PaddedBatch,
    mode: str = "train",
    n_letters: int | None = None,
    with_race: bool = True,
) -> ForwardTrace:
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    m = batch.block - 2 if n_letters is None else n_letters
    T, B = batch.n_steps, batch.size
    H = params.W_h.shape[0]
    D = params.W_x.shape[0]
    if batch.input_width != D:
        raise ValueError(f"input width {batch.input_width} does not match model input size {D}")
    n = batch.n_courses
    if params.W_grade.shape[1] != n * (m + 2):
        raise ValueError("grade head does not match the batch's course count")

    X = batch.inputs
    if mode == "infer_rmv" and batch.attr_width:
        keep = np.ones(D)
        keep[D - batch.attr_width :] = 0.0
        X = (X @ sp.diags(keep)).tocsr()
    Zx = np.asarray(X @ params.W_x).reshape(T, B, 4 * H) + params.b

    gates = np.empty((T, B, 4 * H))
    cells = np.empty((T, B, H))
    hidden = np.empty((T, B, H))
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    for t in range(T):
        z = Zx[t] + h @ params.W_h
        gt = gates[t]
        gt[:, : 2 * H] = _sigmoid(z[:, : 2 * H])
        gt[:, 2 * H : 3 * H] = np.tanh(z[:, 2 * H : 3 * H])
        gt[:, 3 * H :] = _sigmoid(z[:, 3 * H :])
        c = gt[:, H : 2 * H] * c + gt[:, :H] * gt[:, 2 * H : 3 * H]
        h = gt[:, 3 * H :] * np.tanh(c)
        cells[t] = c
        hidden[t] = h

    flat_h = hidden.reshape(T * B, H)
    logits = (flat_h @ params.W_grade + params.b_grade).reshape(T, B, n, m + 2)
    race_logp = None
    if with_race:
        race_logp = log_softmax(flat_h @ params.W_race + params.b_race).reshape(T, B, params.W_race.shape[1])
    return ForwardTrace(X, gates, cells, hidden, _grade_log_probs(logits, m), race_logp, m)


def backward(
    params: ModelParams,
    trace: ForwardTrace,
    grade_grad: np.ndarray,
    race_grad: np.ndarray | None = None,
    alpha: float = 0.0,
    reversal: bool = True,
) -> ParamGrads:
    """Backpropagate logit gradients through both heads and the LSTM.

    ``grade_grad`` is (T, B, n, m+2) and ``race_grad`` is (T, B, K), both
    w.r.t. pre-softmax logits. With ``reversal`` the race head receives the
    plain gradient while the trunk receives it scaled by ``-alpha``; without
    it every parameter receives ``-alpha`` times the race gradient, i.e. the
    single objective ``grade_loss - alpha * race_loss``.
    """
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    T, B, H = trace.hidden.shape
    flat_h = trace.hidden.reshape(T * B, H)
    g_flat = grade_grad.reshape(T * B, -1)

    grads = ModelParams.zeros_like(params)
    grads.W_grade = flat_h.T @ g_flat
    grads.b_grade = g_flat.sum(axis=0)
    dH = (g_flat @ params.W_grade.T).reshape(T, B, H)

    if race_grad is not None:
        r_flat = race_grad.reshape(T * B, -1)
        head_scale = 1.0 if reversal else -alpha
        grads.W_race = head_scale * (flat_h.T @ r_flat)
        grads.b_race = head_scale * r_flat.sum(axis=0)
        if alpha != 0.0:
            dH = dH - alpha * (r_flat @ params.W_race.T).reshape(T, B, H)

    gates, cells = trace.gates, trace.cells
    dZ = np.empty((T, B, 4 * H))
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        i, f, g, o = (gates[t][:, k * H : (k + 1) * H] for k in range(4))
        tanh_c = np.tanh(cells[t])
        c_prev = cells[t - 1] if t > 0 else np.zeros((B, H))
        dh = dH[t] + dh_next
        dc = dh * o * (1.0 - tanh_c**2) + dc_next
        dz = dZ[t]
        dz[:, :H] = dc * g * i * (1.0 - i)
        dz[:, H : 2 * H] = dc * c_prev * f * (1.0 - f)
        dz[:, 2 * H : 3 * H] = dc * i * (1.0 - g**2)
        dz[:, 3 * H :] = dh * tanh_c * o * (1.0 - o)
        dc_next = dc * f
        dh_next = dz @ params.W_h.T

    dZ_flat = dZ.reshape(T * B, 4 * H)
    grads.W_x = np.asarray(trace.inputs.T @ dZ_flat)
    if T > 1:
        grads.W_h = trace.hidden[:-1].reshape((T - 1) * B, H).T @ dZ[1:].reshape((T - 1) * B, 4 * H)
    grads.b = dZ_flat.sum(axis=0)

    for name, g in grads.tensors():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient in {name}")
    return grads


def predict_term(
    params: ModelParams,
    history,
    course_indices,
    mode: str = "infer_full",
    n_letters: int | None = None,
) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    """Letter and P/NP distributions for the courses a student takes next term.

    ``history`` is the student's :class:`EncodedSequence` up to the last
    observed term.
    """
    from .encoding import batch as make_batches

    course_indices = [int(c) for c in course_indices]
    if not course_indices:
        return {}
    n = history.n_courses
    bad = [c for c in course_indices if not 0 <= c < n]
    if bad:
        raise KeyError(f"unknown course index {bad[0]}")
    seq = history.with_next_term(course_indices)
    (b,) = make_batches([seq], 1)
    trace = forward(params, b, mode, n_letters, with_race=False)
    probs = trace.grade_probs[seq.n_steps - 1, 0]
    m = trace.n_letters
    return {c: (probs[c, :m].copy(), probs[c, m:].copy()) for c in course_indices}
