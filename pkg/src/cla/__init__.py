"""Continual learning augmentation: an explicit memory of past base models,
recalled by sampled DTW similarity and blended into the live forecast."""

from .base_model import BaseParams, TrainConfig, predict, train
from .data import Dataset, PanelWindow, RegimeSpec, generate_synthetic_regimes, load_panel
from .engine import Engine, EngineConfig, RunResult, StepTrace, run
from .memory import MemoryStore, ModelMemory
from .similarity import DtwConfig, dtw_distance, expected_distance

__all__ = [
    "BaseParams",
    "Dataset",
    "DtwConfig",
    "Engine",
    "EngineConfig",
    "MemoryStore",
    "ModelMemory",
    "PanelWindow",
    "RegimeSpec",
    "RunResult",
    "StepTrace",
    "TrainConfig",
    "dtw_distance",
    "expected_distance",
    "generate_synthetic_regimes",
    "load_panel",
    "predict",
    "run",
    "train",
]
