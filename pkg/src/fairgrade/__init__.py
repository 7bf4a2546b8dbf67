"""Fairness-aware grade prediction: cohorts, a numpy LSTM, bias-mitigation strategies and group metrics."""

from .cohort import CohortDataset, GradeScale, SplitSpec, chronological_split, load_dataset
from .synth import SynthConfig, generate
from .trainer import STRATEGY_IDS, StrategyConfig, TrainConfig, evaluate, train

__all__ = [
    "STRATEGY_IDS",
    "CohortDataset",
    "GradeScale",
    "SplitSpec",
    "StrategyConfig",
    "SynthConfig",
    "TrainConfig",
    "chronological_split",
    "evaluate",
    "generate",
    "load_dataset",
    "train",
]
