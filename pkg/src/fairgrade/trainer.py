"""Bias-mitigation strategies, the training loop, evaluation and strategy matrices."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .checkpoint import Checkpoint
from .cohort import CohortDataset, SplitSpec, chronological_split
from .encoding import AttributeVocab, EncodedSequence, PaddedBatch, batch, encode_dataset
from .losses import (
    LabelWeightScheme,
    SampleWeightScheme,
    adversarial_loss,
    combined_loss,
    label_weights,
    masked_ce,
    sample_weights,
)
from .seqnet import ModelDims, ModelParams, backward, forward, init_params

log = logging.getLogger(__name__)

STRATEGY_IDS = (
    "default",
    "grade_label_weighted",
    "alone",
    "grad_rate_wgh",
    "equal_wgh",
    "race_feature",
    "multi",
    "adversarial",
    "infer_rmv",
)
COMPARISON_STRATEGIES = ("default", "grad_rate_wgh", "equal_wgh", "race_feature", "adversarial")


class StrategyError(ValueError):
    pass


class TrainingDiverged(FloatingPointError):
    pass


@dataclass(frozen=True)
class StrategyConfig:
    id: str
    label_weighting: LabelWeightScheme = LabelWeightScheme()
    sample_weighting: SampleWeightScheme = SampleWeightScheme()
    feature_mode: str = "none"
    alpha: float | None = None  # None: no adversary attached
    inference_mode: str = "infer_full"
    group: str | None = None  # for ``alone``
    literal_adversarial: bool = False

    @property
    def name(self) -> str:
        return f"alone({self.group})" if self.id == "alone" else self.id

    @classmethod
    def from_id(
        cls,
        strategy_id: str,
        *,
        label_weighting: bool = True,
        label_normalization: str = "mean_one",
        alpha: float | None = None,
        group: str | None = None,
        group_proportions=None,
        graduation_rates=None,
        rmv_feature_mode: str = "race",
        literal_adversarial: bool = False,
    ) -> "StrategyConfig":
        """Resolve a strategy id into its concrete settings.

        ``label_weighting`` switches minibatch grade-label weighting on for
        every strategy; ``grade_label_weighted`` always has it on.
        """
        if strategy_id not in STRATEGY_IDS:
            raise StrategyError(f"unknown strategy {strategy_id!r}; valid ids: {', '.join(STRATEGY_IDS)}")
        on = label_weighting or strategy_id == "grade_label_weighted"
        lw = LabelWeightScheme("minibatch_inverse" if on else "off", label_normalization)
        kw: dict = {"label_weighting": lw, "literal_adversarial": literal_adversarial}
        if strategy_id == "alone":
            if not group:
                raise StrategyError("strategy 'alone' needs a group")
            kw["group"] = group
        elif strategy_id == "grad_rate_wgh":
            if graduation_rates is None:
                raise StrategyError("strategy 'grad_rate_wgh' needs graduation rates")
            kw["sample_weighting"] = SampleWeightScheme("grad_rate", graduation_rates=tuple(graduation_rates))
        elif strategy_id == "equal_wgh":
            r = None if group_proportions is None else tuple(group_proportions)
            kw["sample_weighting"] = SampleWeightScheme("equal", group_proportions=r)
        elif strategy_id == "race_feature":
            kw["feature_mode"] = "race"
        elif strategy_id == "multi":
            kw["feature_mode"] = "multi"
        elif strategy_id == "adversarial":
            kw["alpha"] = 0.1 if alpha is None else float(alpha)
            if kw["alpha"] < 0:
                raise StrategyError("alpha must be >= 0")
        elif strategy_id == "infer_rmv":
            if rmv_feature_mode == "none":
                raise StrategyError("infer_rmv needs a feature mode other than 'none'")
            kw["feature_mode"] = rmv_feature_mode
            kw["inference_mode"] = "infer_rmv"
        return cls(strategy_id, **kw)

    def to_json(self) -> dict:
        out = dataclasses.asdict(self)
        out["name"] = self.name
        return out


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    seed: int = 0
    hidden_size: int = Field(64, gt=0)
    batch_size: int = Field(32, gt=0)
    learning_rate: float = Field(1e-3, gt=0)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    eps: float = Field(1e-8, gt=0)
    max_epochs: int = Field(50, gt=0)
    patience: int = Field(5, gt=0)
    apply_label_weighting_everywhere: bool = True


class Adam:
    def __init__(self, params: ModelParams, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = ModelParams.zeros_like(params)
        self.v = ModelParams.zeros_like(params)
        self.t = 0

    def step(self, params: ModelParams, grads: ModelParams) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for name, g in grads.tensors():
            m = getattr(self.m, name)
            v = getattr(self.v, name)
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p = getattr(params, name)
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float


@dataclass
class TrainContext:
    """Everything derived from (dataset, split, strategy) that training needs."""

    vocab: AttributeVocab
    train_seqs: list[EncodedSequence]
    val_seqs: list[EncodedSequence]
    group_table: np.ndarray | None
    dims: ModelDims


def _select(seqs, last_term, terms):
    out = []
    for s in seqs:
        cut = s.truncate(last_term)
        if cut is not None and cut.n_targets(terms) > 0:
            out.append(cut)
    return out


def prepare(dataset: CohortDataset, split: SplitSpec, strategy: StrategyConfig, hidden_size: int) -> TrainContext:
    vocab = AttributeVocab.from_dataset(dataset)
    seqs = encode_dataset(dataset, strategy.feature_mode, vocab)
    train_seqs = _select(seqs, split.last_train_term, split.train_terms)
    val_seqs = _select(seqs, max(split.val_terms), split.val_terms)
    if strategy.id == "alone":
        if strategy.group not in dataset.group_list:
            raise StrategyError(f"unknown group {strategy.group!r}")
        gi = dataset.group_list.index(strategy.group)
        train_seqs = [s for s in train_seqs if s.race_index == gi]
        if not train_seqs:
            raise StrategyError(f"group {strategy.group!r} has no training enrollments")
        group_val = [s for s in val_seqs if s.race_index == gi]
        val_seqs = group_val or val_seqs
    if not train_seqs:
        raise StrategyError("no training enrollments")

    group_table = None
    K = len(dataset.group_list)
    sw = strategy.sample_weighting
    if sw.mode != "off":
        ref = np.concatenate([np.full(s.n_targets(split.train_terms), s.race_index) for s in train_seqs])
        if sw.mode == "equal" and sw.group_proportions is None:
            counts = np.bincount(ref, minlength=K)
            sw = dataclasses.replace(sw, group_proportions=tuple((counts / counts.sum()).tolist()))
        present = np.flatnonzero(np.bincount(ref, minlength=K))
        group_table = np.zeros(K)
        try:
            group_table[present] = sample_weights(present, sw, ref, K)
        except ValueError as exc:
            raise StrategyError(str(exc)) from None
    dims = ModelDims(
        dataset.n_courses, dataset.scale.m, hidden_size, vocab.width(strategy.feature_mode), K
    )
    return TrainContext(vocab, train_seqs, val_seqs, group_table, dims)


def batch_objective(
    params: ModelParams,
    b: PaddedBatch,
    strategy: StrategyConfig,
    group_table: np.ndarray | None,
    n_letters: int,
):
    """Per-batch training objective and its gradients.

    The weighted grade loss is divided by the batch's target-enrollment
    count; the race loss (already averaged over steps per sequence) by the
    number of sequences.
    """
    with_race = strategy.alpha is not None
    trace = forward(params, b, "train", n_letters, with_race=with_race)
    masks = b.masks
    targets = b.targets
    n_enr = masks.sum()
    sigma = None
    if strategy.label_weighting.mode != "off":
        sel = b.target_slots >= 0
        sigma = np.zeros(masks.shape)
        sigma[sel] = label_weights(b.target_slots[sel], strategy.label_weighting)
    lam = None if group_table is None else group_table[b.races]
    loss, g = combined_loss(trace.grade_logp, targets, masks, n_letters, sigma, lam)
    scale = 1.0 / max(n_enr, 1.0)
    loss *= scale
    g *= scale
    race_grad = None
    race_loss = 0.0
    if with_race:
        race_loss, race_grad = adversarial_loss(trace.race_logp, b.races, b.step_valid)
        n_seq = max(int(b.step_valid.any(axis=0).sum()), 1)
        race_loss /= n_seq
        race_grad /= n_seq
    grads = backward(
        params, trace, g, race_grad, strategy.alpha or 0.0, reversal=not strategy.literal_adversarial
    )
    return loss, race_loss, grads


def validation_loss(params: ModelParams, batches: list[PaddedBatch], n_letters: int) -> float:
    """Mean unweighted masked cross-entropy per target enrollment."""
    total, count = 0.0, 0.0
    for b in batches:
        trace = forward(params, b, "infer_full", n_letters, with_race=False)
        loss, _ = masked_ce(trace.grade_logp, b.targets, b.masks, n_letters)
        total += loss
        count += b.masks.sum()
    return total / count if count else float("nan")


def _manifest(dataset, strategy, config, ctx, best_epoch) -> dict:
    return {
        "dims": dataclasses.asdict(ctx.dims),
        "letters": list(dataset.scale.letters),
        "groups": list(dataset.group_list),
        "catalog": list(dataset.catalog),
        "feature_mode": strategy.feature_mode,
        "vocab": ctx.vocab.to_json(),
        "strategy": strategy.to_json(),
        "seed": config.seed,
        "train_config": config.model_dump(),
        "best_epoch": best_epoch,
    }


def train(
    dataset: CohortDataset,
    split: SplitSpec | None,
    strategy: StrategyConfig,
    config: TrainConfig = TrainConfig(),
    on_epoch=None,
) -> tuple[Checkpoint, list[EpochRecord]]:
    """Train with early stopping on validation loss; returns the best-validation checkpoint."""
    split = split or chronological_split(dataset)
    ctx = prepare(dataset, split, strategy, config.hidden_size)
    m = dataset.scale.m
    params = init_params(ctx.dims, config.seed)
    opt = Adam(params, config.learning_rate, config.beta1, config.beta2, config.eps)
    val_batches = batch(ctx.val_seqs, max(config.batch_size, 256), split.val_terms)

    history: list[EpochRecord] = []
    best = (np.inf, params.copy(), 0)
    wait = 0
    for epoch in range(1, config.max_epochs + 1):
        rng = np.random.default_rng([config.seed, epoch])
        order = rng.permutation(len(ctx.train_seqs))
        batches = batch([ctx.train_seqs[i] for i in order], config.batch_size, split.train_terms)
        losses = []
        for bi, b in enumerate(batches):
            loss, _, grads = batch_objective(params, b, strategy, ctx.group_table, m)
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, batch {bi}")
            opt.step(params, grads)
            losses.append(loss)
        val = validation_loss(params, val_batches, m) if val_batches else float(np.mean(losses))
        if not np.isfinite(val):
            raise TrainingDiverged(f"non-finite validation loss at epoch {epoch}")
        history.append(EpochRecord(epoch, float(np.mean(losses)), val))
        log.info("%s epoch %d train %.5f val %.5f", strategy.name, epoch, history[-1].train_loss, val)
        if on_epoch is not None:
            on_epoch(epoch, params)
        if val < best[0]:
            best = (val, params.copy(), epoch)
            wait = 0
        else:
            wait += 1
            if wait >= config.patience:
                break
    ckpt = Checkpoint(best[1], _manifest(dataset, strategy, config, ctx, best[2]))
    return ckpt, history


def history_csv(history: list[EpochRecord]) -> str:
    lines = ["epoch,train_loss,val_loss"]
    lines += [f"{h.epoch},{h.train_loss!r},{h.val_loss!r}" for h in history]
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class PredictionRecord:
    student_id: str
    course_id: str
    group: str
    term: int
    true_slot: int  # position in the (m + 2) block
    letter_probs: np.ndarray
    pnp_probs: np.ndarray


@dataclass
class PredictionSet:
    strategy: str
    letters: tuple[str, ...]
    groups: tuple[str, ...]
    records: list[PredictionRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)


def evaluate(
    checkpoint: Checkpoint,
    dataset: CohortDataset,
    split: SplitSpec | None = None,
    inference_mode: str | None = None,
    terms=None,
) -> PredictionSet:
    """Predict every graded enrollment of the test terms (or ``terms``)."""
    split = split or chronological_split(dataset)
    if checkpoint.catalog != dataset.catalog:
        raise ValueError("checkpoint course catalog does not match the dataset")
    if checkpoint.letters != dataset.scale.letters:
        raise ValueError("checkpoint letter scale does not match the dataset")
    if checkpoint.groups != dataset.group_list:
        raise ValueError("checkpoint group list does not match the dataset")
    mode = inference_mode or checkpoint.manifest["strategy"]["inference_mode"]
    terms = frozenset(terms) if terms is not None else split.test_terms
    vocab = AttributeVocab.from_json(checkpoint.manifest["vocab"])
    seqs = _select(encode_dataset(dataset, checkpoint.feature_mode, vocab), max(terms), terms)
    m = dataset.scale.m
    out = PredictionSet(checkpoint.strategy, dataset.scale.letters, dataset.group_list)
    for b in batch(seqs, 256, terms):
        trace = forward(checkpoint.params, b, mode, m, with_race=False)
        probs = trace.grade_probs
        t_idx, b_idx, c_idx = np.nonzero(b.target_slots >= 0)
        for t, bi, c in zip(t_idx, b_idx, c_idx):
            s = b.sequences[bi]
            out.records.append(
                PredictionRecord(
                    s.student_id,
                    dataset.catalog[c],
                    dataset.group_list[s.race_index],
                    int(s.start_term + 1 + t),
                    int(b.target_slots[t, bi, c]),
                    probs[t, bi, c, :m].copy(),
                    probs[t, bi, c, m:].copy(),
                )
            )
    return out


@dataclass
class MatrixEntry:
    strategy: StrategyConfig
    checkpoint: Checkpoint | None = None
    predictions: PredictionSet | None = None
    history: list[EpochRecord] | None = None
    error: str | None = None


def run_matrix(
    dataset: CohortDataset,
    strategies: list[StrategyConfig],
    config: TrainConfig = TrainConfig(),
    split: SplitSpec | None = None,
) -> dict[str, MatrixEntry]:
    """Train and evaluate each strategy on one shared split; failures are recorded, not raised."""
    split = split or chronological_split(dataset)
    out: dict[str, MatrixEntry] = {}
    for strategy in strategies:
        entry = MatrixEntry(strategy)
        try:
            entry.checkpoint, entry.history = train(dataset, split, strategy, config)
            entry.predictions = evaluate(entry.checkpoint, dataset, split)
        except Exception as exc:  # isolate sibling strategies
            log.warning("strategy %s failed: %s", strategy.name, exc)
            entry.error = f"{type(exc).__name__}: {exc}"
        out[strategy.name] = entry
    return out
