"""Run configuration: one YAML document with data, model, strategy, train and report sections."""

from __future__ import annotations

from pathlib import Path

import yaml
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .cohort import DECLINE_TO_STATE, DEFAULT_GROUPS, DEFAULT_LETTERS, CohortDataset, GradeScale, load_dataset
from .synth import SynthConfig, generate
from .trainer import STRATEGY_IDS, StrategyConfig, StrategyError, TrainConfig

DEFAULT_CONFIG = Path(__file__).with_name("data") / "default_config.yaml"


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DataSection(_Section):
    enrollments: Path | None = None
    demographics: Path | None = None
    synth: SynthConfig | None = None
    min_course_enrollments: int = Field(20, ge=0)
    letters: list[str] = Field(default_factory=lambda: list(DEFAULT_LETTERS))
    group_list: list[str] = Field(default_factory=lambda: list(DEFAULT_GROUPS))

    @model_validator(mode="after")
    def _one_source(self):
        paths = self.enrollments is not None, self.demographics is not None
        if self.synth is not None and any(paths):
            raise ValueError("data: give either enrollments/demographics paths or a synth block, not both")
        if self.synth is None and not all(paths):
            raise ValueError("data: needs both enrollments and demographics paths, or a synth block")
        return self

    def load(self) -> CohortDataset:
        if self.synth is not None:
            return generate(self.synth)
        return self.load_csv(self.enrollments, self.demographics)

    def load_csv(self, enrollments, demographics) -> CohortDataset:
        if self.synth is not None:
            groups, letters, min_n = self.synth.group_list, self.synth.letters, self.synth.min_course_enrollments
        else:
            groups, letters, min_n = self.group_list, self.letters, self.min_course_enrollments
        return load_dataset(enrollments, demographics, min_n, tuple(groups), GradeScale(tuple(letters)))


class ModelSection(_Section):
    hidden_size: int = Field(64, gt=0)
    seed: int = 0


class StrategySection(_Section):
    id: str = "default"
    group: str | None = None
    alpha: float | None = None
    label_normalization: str = "mean_one"
    group_proportions: dict[str, float] | None = None
    graduation_rates: dict[str, float] | None = None
    rmv_feature_mode: str = "race"
    literal_adversarial: bool = False

    @model_validator(mode="after")
    def _known(self):
        if self.id not in STRATEGY_IDS:
            raise ValueError(f"unknown strategy {self.id!r}; valid ids: {', '.join(STRATEGY_IDS)}")
        if self.label_normalization not in ("literal", "mean_one"):
            raise ValueError("label_normalization must be 'literal' or 'mean_one'")
        return self


class TrainSection(_Section):
    batch_size: int = Field(32, gt=0)
    learning_rate: float = Field(1e-3, gt=0)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    eps: float = Field(1e-8, gt=0)
    max_epochs: int = Field(50, gt=0)
    patience: int = Field(5, gt=0)
    apply_label_weighting_everywhere: bool = True


class ReportSection(_Section):
    cutoff: str = "A"
    exclude_groups: list[str] = Field(default_factory=lambda: [DECLINE_TO_STATE])
    pass_as_positive: bool = False
    out: Path = Path("runs")

    @model_validator(mode="after")
    def _cutoff(self):
        if self.cutoff not in ("A", "B"):
            raise ValueError("report.cutoff must be 'A' or 'B'")
        return self


class RunConfig(_Section):
    data: DataSection = Field(default_factory=lambda: DataSection(synth=SynthConfig()))
    model: ModelSection = Field(default_factory=ModelSection)
    strategy: StrategySection = Field(default_factory=StrategySection)
    train: TrainSection = Field(default_factory=TrainSection)
    report: ReportSection = Field(default_factory=ReportSection)

    @classmethod
    def from_yaml(cls, path: str | Path) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
        if raw is None:
            raw = {}
        if not isinstance(raw, dict):
            raise ValueError(f"{path}: top level must be a mapping")
        return cls.model_validate(raw)

    def train_config(self) -> TrainConfig:
        return TrainConfig(seed=self.model.seed, hidden_size=self.model.hidden_size, **self.train.model_dump())

    def _per_group(self, values: dict[str, float] | None, group_list) -> list[float] | None:
        if values is None:
            return None
        missing = [g for g in group_list if g not in values]
        if missing:
            raise StrategyError(f"no value for group(s) {missing}")
        return [values[g] for g in group_list]

    def strategy_config(self, group_list) -> StrategyConfig:
        s = self.strategy
        grad = s.graduation_rates
        if grad is None and self.data.synth is not None:
            grad = {g: m.graduation_rate for g, m in self.data.synth.groups.items()}
        return StrategyConfig.from_id(
            s.id,
            label_weighting=self.train.apply_label_weighting_everywhere,
            label_normalization=s.label_normalization,
            alpha=s.alpha,
            group=s.group,
            group_proportions=self._per_group(s.group_proportions, group_list),
            graduation_rates=self._per_group(grad, group_list) if s.id == "grad_rate_wgh" else None,
            rmv_feature_mode=s.rmv_feature_mode,
            literal_adversarial=s.literal_adversarial,
        )
