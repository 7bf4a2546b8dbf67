from __future__ import annotations

import numpy as np
import pytest
import scipy.sparse as sp

from fairgrade import gradcheck
from fairgrade.encoding import EncodedSequence, PaddedBatch, batch, encode_dataset
from fairgrade.losses import adversarial_loss, masked_ce
from fairgrade.seqnet import (
    ModelDims,
    ModelParams,
    NonFiniteGradient,
    backward,
    forward,
    init_params,
    predict_term,
)


def _setup(seed=0, n=3, m=4, H=5, A=3, K=3, count=4):
    dims = ModelDims(n, m, H, A, K)
    rng = np.random.default_rng(seed)
    params = gradcheck._perturb(init_params(dims, seed), rng)
    seqs = gradcheck.random_sequences(dims, rng, count=count)
    return dims, params, seqs


def test_init_deterministic_and_forget_bias():
    dims = ModelDims(7, 5, 6, 2, 4)
    a, b = init_params(dims, 3), init_params(dims, 3)
    for (name, x), (_, y) in zip(a.tensors(), b.tensors()):
        assert np.array_equal(x, y), name
    H = dims.hidden_size
    assert np.all(a.b[H : 2 * H] == 1.0)
    assert not a.b[:H].any() and not a.b[2 * H :].any()
    assert not a.b_grade.any() and not a.b_race.any()
    limit = np.sqrt(6.0 / (dims.input_size + 2 * H))  # per gate over [x; h]
    assert np.abs(a.W_x).max() <= limit
    assert not np.array_equal(a.W_x, init_params(dims, 4).W_x)


def test_zero_hidden_rejected():
    with pytest.raises(ValueError):
        ModelDims(3, 4, 0)


def test_shapes():
    dims = ModelDims(10, 13, 64, 8, 8)
    assert dims.input_size == 15 * 10 + 10 + 8
    assert dims.grade_output_size == 150
    s = dims.shapes()
    assert s["W_x"] == (168, 256) and s["W_h"] == (64, 256) and s["W_race"] == (64, 8)


def test_zero_weights_give_uniform_outputs():
    dims = ModelDims(1, 4, 3, 0, 2)
    params = ModelParams.zeros_like(init_params(dims, 0))
    seq = EncodedSequence("x", 0, np.zeros(0), 0, (np.array([0]), np.array([0])), (np.array([1]), np.array([4])), 1, 6)
    (b,) = batch([seq], 1)
    tr = forward(params, b, "train")
    assert np.allclose(tr.grade_probs[0, 0, 0, :4], 0.25, atol=0, rtol=1e-15)
    assert np.allclose(tr.grade_probs[0, 0, 0, 4:], 0.5, atol=0, rtol=1e-15)
    assert np.allclose(tr.race_probs, 0.5)


def test_zero_length_batch_gives_empty_trace():
    dims = ModelDims(2, 3, 4, 0, 2)
    params = init_params(dims, 0)
    empty = PaddedBatch([], sp.csr_matrix((0, dims.input_size)), np.zeros((0, 0, 2), np.int64), np.zeros((0, 0), bool), np.zeros(0, np.int64), 2, 5, 0)
    tr = forward(params, empty, "train")
    assert tr.hidden.shape == (0, 0, 4) and tr.grade_logp.size == 0


def test_softmax_normalization():
    dims, params, seqs = _setup(seed=5)
    (b,) = batch(seqs, 8)
    tr = forward(params, b, "train")
    p = tr.grade_probs
    m = dims.n_letters
    assert np.abs(p[..., :m].sum(-1) - 1).max() <= 1e-9
    assert np.abs(p[..., m:].sum(-1) - 1).max() <= 1e-9
    assert np.abs(tr.race_probs.sum(-1) - 1).max() <= 1e-9


def test_dimension_mismatch():
    dims, params, seqs = _setup()
    other = init_params(ModelDims(3, 4, 5, 2, 3), 0)
    (b,) = batch(seqs, 8)
    with pytest.raises(ValueError):
        forward(other, b, "train")
    with pytest.raises(ValueError):
        forward(params, b, "predict")


def test_infer_rmv_identity_without_attributes():
    dims, params, seqs = _setup(A=0)
    (b,) = batch(seqs, 8)
    a = forward(params, b, "infer_full").grade_logp
    r = forward(params, b, "infer_rmv").grade_logp
    assert np.array_equal(a, r)


def test_infer_rmv_matches_zeroed_attributes():
    dims, params, seqs = _setup()
    zeroed = [EncodedSequence(s.student_id, s.race_index, np.zeros_like(s.attr), s.start_term, s.term_courses, s.term_slots, s.n_courses, s.block) for s in seqs]
    (b,) = batch(seqs, 8)
    (bz,) = batch(zeroed, 8)
    assert np.allclose(forward(params, b, "infer_rmv").grade_logp, forward(params, bz, "infer_full").grade_logp, rtol=0, atol=1e-14)


def _grads(params, b, m, alpha=0.0, with_race=True):
    tr = forward(params, b, "train", m, with_race=with_race)
    loss, g = masked_ce(tr.grade_logp, b.targets, b.masks, m)
    rg = adversarial_loss(tr.race_logp, b.races, b.step_valid)[1] if with_race else None
    return loss, backward(params, tr, g, rg, alpha)


def test_alpha_zero_matches_no_race_head():
    dims, params, seqs = _setup(seed=2)
    (b,) = batch(seqs, 8)
    _, with_head = _grads(params, b, dims.n_letters, 0.0, True)
    _, without = _grads(params, b, dims.n_letters, 0.0, False)
    for name in ("W_x", "W_h", "b", "W_grade", "b_grade"):
        assert np.max(np.abs(getattr(with_head, name) - getattr(without, name))) <= 1e-12, name


def test_zero_loss_grads_give_zero_param_grads():
    dims, params, seqs = _setup(seed=3)
    (b,) = batch(seqs, 8)
    tr = forward(params, b, "train")
    g = backward(params, tr, np.zeros_like(tr.grade_logp), np.zeros_like(tr.race_logp), 0.7)
    assert all(not x.any() for _, x in g.tensors())


def test_negative_alpha_rejected():
    dims, params, seqs = _setup()
    (b,) = batch(seqs, 8)
    tr = forward(params, b, "train")
    with pytest.raises(ValueError):
        backward(params, tr, np.zeros_like(tr.grade_logp), None, -0.1)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_gradient_names_tensor():
    dims, params, seqs = _setup()
    (b,) = batch(seqs, 8)
    tr = forward(params, b, "train")
    rg = np.zeros_like(tr.race_logp)
    rg[0, 0, 0] = np.inf
    # alpha 0 keeps the blow-up inside the race head
    with pytest.raises(NonFiniteGradient, match="W_race"):
        backward(params, tr, np.zeros_like(tr.grade_logp), rg, 0.0)


def test_mask_neutrality_appended_step():
    dims, params, seqs = _setup(seed=4, count=1)
    (s,) = seqs
    longer = s.with_next_term([])  # one more step with nothing to predict
    l1, g1 = _grads(params, batch([s], 1)[0], dims.n_letters, with_race=False)
    l2, g2 = _grads(params, batch([longer], 1)[0], dims.n_letters, with_race=False)
    assert l1 == l2
    for (name, a), (_, c) in zip(g1.tensors(), g2.tensors()):
        assert np.array_equal(a, c), name


def test_batch_equivalence():
    dims, params, seqs = _setup(seed=6, count=5)
    m = dims.n_letters
    total_loss, total = _grads(params, batch(seqs, 5)[0], m, alpha=0.3)
    parts = [_grads(params, batch([s], 1)[0], m, alpha=0.3) for s in seqs]
    assert total_loss == pytest.approx(sum(p[0] for p in parts), rel=1e-12)
    for name, g in total.tensors():
        summed = sum(getattr(p[1], name) for p in parts)
        scale = max(np.abs(summed).max(), 1e-300)
        assert np.abs(g - summed).max() / scale <= 1e-9, name


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_gradcheck_all_variants(seed):
    results = gradcheck.check(seed)
    assert {r.variant for r in results} == set(gradcheck.VARIANTS)
    for r in results:
        assert r.passed, (r.variant, r.max_rel_error, r.worst_tensor)


def test_gradcheck_minimal_dims():
    assert all(r.passed for r in gradcheck.check(0, n_courses=1, n_letters=2))


def test_gradcheck_negative_control():
    results = gradcheck.check(0, variants=("plain",), corrupt=True)
    assert not results[0].passed


def test_predict_term(tiny_dataset):
    from fairgrade.trainer import StrategyConfig, TrainConfig, train

    ckpt, _ = train(tiny_dataset, None, StrategyConfig.from_id("race_feature"), TrainConfig(hidden_size=8, max_epochs=2))
    seqs = encode_dataset(tiny_dataset, "race")
    history = seqs[0]
    m = tiny_dataset.scale.m
    assert predict_term(ckpt.params, history, [], n_letters=m) == {}
    with pytest.raises(KeyError):
        predict_term(ckpt.params, history, [tiny_dataset.n_courses], n_letters=m)
    full = predict_term(ckpt.params, history, [0, 3], "infer_full", m)
    rmv = predict_term(ckpt.params, history, [0, 3], "infer_rmv", m)
    assert set(full) == {0, 3}
    for c, (letters, pnp) in full.items():
        assert letters.shape == (m,) and pnp.shape == (2,)
        assert abs(letters.sum() - 1) <= 1e-9 and abs(pnp.sum() - 1) <= 1e-9
    assert any(not np.allclose(full[c][0], rmv[c][0], rtol=0, atol=1e-12) for c in full)
