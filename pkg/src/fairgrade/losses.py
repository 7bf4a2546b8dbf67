"""Masked two-block cross-entropy, grade-label and sample weights, adversarial race loss.

All loss functions return ``(loss, grad)`` where ``grad`` is taken w.r.t.
the pre-softmax logits that produced the given log-probabilities. Losses are
plain sums over enrollments (grade) or sequences (race), so batch gradients
are sums of per-sequence gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class LabelWeightScheme:
    mode: str = "off"  # off | minibatch_inverse
    normalization: str = "mean_one"  # literal | mean_one

    def __post_init__(self):
        if self.mode not in ("off", "minibatch_inverse"):
            raise ValueError(f"unknown label weighting mode {self.mode!r}")
        if self.normalization not in ("literal", "mean_one"):
            raise ValueError(f"unknown label weight normalization {self.normalization!r}")


@dataclass(frozen=True)
class SampleWeightScheme:
    mode: str = "off"  # off | equal | grad_rate
    group_proportions: tuple[float, ...] | None = None  # r, for equal
    graduation_rates: tuple[float, ...] | None = None  # d, for grad_rate

    def __post_init__(self):
        if self.mode not in ("off", "equal", "grad_rate"):
            raise ValueError(f"unknown sample weighting mode {self.mode!r}")
        if self.group_proportions is not None:
            r = np.asarray(self.group_proportions, dtype=float)
            if np.any(r < 0) or abs(r.sum() - 1.0) > 1e-9:
                raise ValueError("group proportions must be non-negative and sum to 1")
        if self.graduation_rates is not None:
            d = np.asarray(self.graduation_rates, dtype=float)
            if np.any((d < 0) | (d > 1)):
                raise ValueError("graduation rates must lie in [0, 1]")


def _split_blocks(targets: np.ndarray, masks: np.ndarray, m: int):
    letter_on = targets[..., :m].sum(axis=-1)
    pnp_on = targets[..., m:].sum(axis=-1)
    if np.any((masks > 0) & (letter_on + pnp_on == 0)):
        raise ValueError("mask is set for a course with an all-zero target")
    return letter_on, pnp_on


def _grad(log_probs: np.ndarray, targets: np.ndarray, letter_on, pnp_on, m: int) -> np.ndarray:
    # softmax minus one-hot inside whichever block holds the target; zero elsewhere
    probs = np.exp(log_probs)
    grad = probs - targets
    grad[..., :m] *= letter_on[..., None]
    grad[..., m:] *= pnp_on[..., None]
    return grad


def masked_ce(log_probs: np.ndarray, targets: np.ndarray, masks: np.ndarray, n_letters: int):
    """Unweighted two-level masked cross-entropy.

    ``log_probs`` and ``targets`` are (..., n, m+2); ``masks`` is (..., n).
    """
    m = n_letters
    letter_on, pnp_on = _split_blocks(targets, masks, m)
    letter_on = letter_on * masks
    pnp_on = pnp_on * masks
    per_course = -(targets * log_probs).sum(axis=-1) * masks
    loss = per_course.sum()
    return float(loss), _grad(log_probs, targets, letter_on, pnp_on, m)


def combined_loss(
    log_probs: np.ndarray,
    targets: np.ndarray,
    masks: np.ndarray,
    n_letters: int,
    sigma: np.ndarray | None = None,
    lam: np.ndarray | None = None,
):
    """Masked cross-entropy with each enrolled-course term scaled by ``lam[b] * sigma[..., i]``.

    ``sigma`` matches ``masks``; ``lam`` holds one weight per sequence (axis 1
    of (T, B, n) shaped inputs).
    """
    m = n_letters
    letter_on, pnp_on = _split_blocks(targets, masks, m)
    w = masks.astype(float)
    if sigma is not None:
        sigma = np.asarray(sigma, dtype=float)
        if np.any(sigma < 0):
            raise ValueError("negative label weight")
        w = w * sigma
    if lam is not None:
        lam = np.asarray(lam, dtype=float)
        if np.any(lam < 0):
            raise ValueError("negative sample weight")
        w = w * lam[None, :, None] if w.ndim == 3 else w * lam
    per_course = -(targets * log_probs).sum(axis=-1) * w
    loss = per_course.sum()
    return float(loss), _grad(log_probs, targets, letter_on * w, pnp_on * w, m)


def label_weights(labels: Sequence[int] | np.ndarray, scheme: LabelWeightScheme = LabelWeightScheme("minibatch_inverse")):
    """Per-enrollment weights inversely proportional to each label's minibatch frequency.

    ``labels`` are the grade-token ids of every graded enrollment in the
    minibatch. ``literal`` normalization makes the weights sum to one;
    ``mean_one`` rescales them to average one.
    """
    labels = np.asarray(labels)
    if labels.size == 0:
        return np.zeros(0)
    if scheme.mode == "off":
        return np.ones(labels.shape[0])
    values, inverse, counts = np.unique(labels, return_inverse=True, return_counts=True)
    p = counts[inverse] / labels.shape[0]
    inv = 1.0 / p
    sigma = inv / inv.sum()
    if scheme.normalization == "mean_one":
        sigma = sigma * labels.shape[0]
    return sigma


def raw_group_weights(scheme: SampleWeightScheme, n_groups: int) -> np.ndarray:
    """Unnormalized per-group weights: 1/r for ``equal``, 1-d for ``grad_rate``."""
    if scheme.mode == "off":
        return np.ones(n_groups)
    if scheme.mode == "equal":
        if scheme.group_proportions is None:
            raise ValueError("equal weighting needs group proportions")
        r = np.asarray(scheme.group_proportions, dtype=float)
        with np.errstate(divide="ignore"):
            return np.where(r > 0, 1.0 / np.where(r > 0, r, 1.0), np.inf)
    if scheme.graduation_rates is None:
        raise ValueError("grad_rate weighting needs graduation rates")
    return 1.0 - np.asarray(scheme.graduation_rates, dtype=float)


def sample_weights(
    races: Sequence[int] | np.ndarray,
    scheme: SampleWeightScheme,
    reference_races: Sequence[int] | np.ndarray | None = None,
    n_groups: int | None = None,
) -> np.ndarray:
    """Per-student weights for ``races``.

    With ``reference_races`` (one entry per training enrollment) the weights
    are rescaled so their mean over the reference is one.
    """
    races = np.asarray(races, dtype=np.int64)
    ref = None if reference_races is None else np.asarray(reference_races, dtype=np.int64)
    if n_groups is None:
        sizes = [len(x) for x in (scheme.group_proportions, scheme.graduation_rates) if x is not None]
        n_groups = sizes[0] if sizes else int(max(races.max(initial=0), -1 if ref is None else ref.max(initial=0)) + 1)
    table = raw_group_weights(scheme, n_groups)
    if races.size and not np.all(np.isfinite(table[races])):
        bad = sorted(set(races[~np.isfinite(table[races])].tolist()))
        raise ValueError(f"group(s) {bad} have zero proportion but appear in the batch")
    if ref is not None and ref.size:
        ref_w = table[ref]
        if not np.all(np.isfinite(ref_w)):
            raise ValueError("reference contains a group with zero proportion")
        mean = ref_w.mean()
        if mean <= 0:
            raise ValueError("sample weights average to zero over the reference set")
        table = table / mean
    return table[races]


def adversarial_loss(race_log_probs: np.ndarray, races: np.ndarray, valid: np.ndarray):
    """Race cross-entropy, averaged over each sequence's valid steps and summed over sequences.

    ``race_log_probs`` is (T, B, K), ``races`` holds B group indices and
    ``valid`` is (T, B). Sequences without valid steps contribute zero.
    """
    T, B, K = race_log_probs.shape
    onehot = np.zeros((B, K))
    onehot[np.arange(B), races] = 1.0
    valid = valid.astype(float)
    n_valid = valid.sum(axis=0)
    scale = np.divide(1.0, n_valid, out=np.zeros(B), where=n_valid > 0)
    w = valid * scale[None, :]  # (T, B)
    per_step = -(onehot[None] * race_log_probs).sum(axis=-1)
    loss = float((per_step * w).sum())
    grad = (np.exp(race_log_probs) - onehot[None]) * w[..., None]
    return loss, grad
