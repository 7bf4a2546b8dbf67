"""Central finite-difference check of the analytic gradients for every loss variant."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoding import EncodedSequence, PaddedBatch, batch
from .losses import adversarial_loss, combined_loss, masked_ce
from .seqnet import ModelDims, ModelParams, backward, forward, init_params

VARIANTS = ("plain", "sample_weighted", "label_weighted", "both_weighted", "race_only", "adversarial_a0.1", "adversarial_a1.0", "adversarial_literal")


@dataclass
class VariantResult:
    variant: str
    max_rel_error: float
    worst_tensor: str
    passed: bool


def random_sequences(dims: ModelDims, rng: np.random.Generator, count: int = 3, max_terms: int = 4):
    """Random histories with letter, P/NP, ungraded and skipped-term entries."""
    n, blk = dims.n_courses, dims.block
    seqs = []
    for s in range(count):
        n_terms = int(rng.integers(2, max_terms + 1))
        courses, slots = [], []
        for t in range(n_terms):
            k = int(rng.integers(0 if t else 1, n + 1))
            c = np.sort(rng.choice(n, size=k, replace=False)).astype(np.int64)
            sl = rng.integers(-1, blk, size=k).astype(np.int64)
            if t == n_terms - 1 and k:
                sl[0] = max(sl[0], 0)
            courses.append(c)
            slots.append(sl)
        race = int(rng.integers(dims.race_classes))
        attr = rng.integers(0, 2, size=dims.attr_size).astype(float)
        seqs.append(EncodedSequence(f"g{s}", race, attr, 0, tuple(courses), tuple(slots), n, blk))
    return seqs


def _perturb(params: ModelParams, rng: np.random.Generator, scale: float = 0.5) -> ModelParams:
    # init biases are mostly zero; random ones exercise every path
    p = params.copy()
    for _, arr in p.tensors():
        arr += scale * rng.standard_normal(arr.shape)
    return p


def objectives(variant: str, b: PaddedBatch, m: int, sigma, lam):
    """Return (alpha, reversal, uses_race, trunk_loss_fn, head_loss_fn) for a variant.

    The loss functions map a trace to a scalar whose gradient the analytic
    backward pass must reproduce for the trunk (LSTM + grade head) and the
    race head respectively.
    """
    t, mk = b.targets, b.masks

    def grade(trace, s=None, l=None):
        return combined_loss(trace.grade_logp, t, mk, m, s, l)

    def race(trace):
        return adversarial_loss(trace.race_logp, b.races, b.step_valid)

    if variant == "plain":
        return 0.0, True, False, lambda tr: masked_ce(tr.grade_logp, t, mk, m)[0], None
    if variant == "sample_weighted":
        return 0.0, True, False, lambda tr: grade(tr, None, lam)[0], None
    if variant == "label_weighted":
        return 0.0, True, False, lambda tr: grade(tr, sigma, None)[0], None
    if variant == "both_weighted":
        return 0.0, True, False, lambda tr: grade(tr, sigma, lam)[0], None
    if variant == "race_only":
        # race loss alone, ascended by every parameter (literal form with alpha = 1, no grade term)
        return 1.0, False, True, lambda tr: -race(tr)[0], lambda tr: -race(tr)[0]
    if variant.startswith("adversarial_a"):
        a = float(variant[len("adversarial_a"):])
        return a, True, True, lambda tr: grade(tr)[0] - a * race(tr)[0], lambda tr: race(tr)[0]
    if variant == "adversarial_literal":
        a = 0.5
        f = lambda tr: grade(tr)[0] - a * race(tr)[0]  # noqa: E731
        return a, False, True, f, f
    raise ValueError(f"unknown variant {variant!r}")


def analytic(params, b, variant, m, sigma, lam) -> ModelParams:
    alpha, reversal, uses_race, _, _ = objectives(variant, b, m, sigma, lam)
    trace = forward(params, b, "train", m, with_race=uses_race)
    if variant == "plain":
        _, g = masked_ce(trace.grade_logp, b.targets, b.masks, m)
    elif variant == "race_only":
        g = np.zeros_like(trace.grade_logp)
    else:
        s = sigma if variant in ("label_weighted", "both_weighted") else None
        l = lam if variant in ("sample_weighted", "both_weighted") else None
        _, g = combined_loss(trace.grade_logp, b.targets, b.masks, m, s, l)
    rg = adversarial_loss(trace.race_logp, b.races, b.step_valid)[1] if uses_race else None
    return backward(params, trace, g, rg, alpha, reversal)


def numeric(params, b, variant, m, sigma, lam, h=1e-5) -> ModelParams:
    _, _, uses_race, trunk_fn, head_fn = objectives(variant, b, m, sigma, lam)
    out = ModelParams.zeros_like(params)
    for name, arr in params.tensors():
        fn = head_fn if name in ("W_race", "b_race") else trunk_fn
        g = getattr(out, name)
        if fn is None:
            continue  # no race head in play: its gradient is zero
        flat, gflat = arr.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = fn(forward(params, b, "train", m, with_race=uses_race))
            flat[i] = orig - h
            down = fn(forward(params, b, "train", m, with_race=uses_race))
            flat[i] = orig
            gflat[i] = (up - down) / (2 * h)
    return out


def rel_error(a: np.ndarray, n: np.ndarray, floor: float = 1e-5) -> float:
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)))


def check(
    seed: int = 0,
    n_courses: int = 3,
    n_letters: int = 4,
    hidden: int = 5,
    attr_size: int = 3,
    race_classes: int = 3,
    variants=VARIANTS,
    tolerance: float = 1e-4,
    corrupt: bool = False,
) -> list[VariantResult]:
    rng = np.random.default_rng(seed)
    dims = ModelDims(n_courses, n_letters, hidden, attr_size, race_classes)
    params = _perturb(init_params(dims, seed), rng)
    (b,) = batch(random_sequences(dims, rng), 8)
    sigma = rng.uniform(0.2, 3.0, size=b.masks.shape)
    lam = rng.uniform(0.2, 3.0, size=b.size)
    results = []
    for v in variants:
        a = analytic(params, b, v, n_letters, sigma, lam)
        if corrupt:
            a.W_h *= 1.01
            a.W_h.reshape(-1)[0] += 1e-3
        nm = numeric(params, b, v, n_letters, sigma, lam)
        errs = {name: rel_error(ga, getattr(nm, name)) for name, ga in a.tensors()}
        worst = max(errs, key=errs.get)
        results.append(VariantResult(v, errs[worst], worst, errs[worst] <= tolerance))
    return results
