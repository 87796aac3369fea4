from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest
import torch

from cocaclaw.augment import AugmentConfig
from cocaclaw.data import TimeSeriesObject
from cocaclaw.detect import ThresholdConfig
from cocaclaw.model import ModelConfig, build_model
from cocaclaw.objective import ObjectiveConfig
from cocaclaw.runtime_config import PerfConfig, RunConfig, SynthSuiteConfig
from cocaclaw.train import TrainConfig

PROJECT_ROOT = Path(__file__).resolve().parents[1]


@pytest.fixture
def toy_model_cfg() -> ModelConfig:
    """T=8, d=1, K=4, P=6: small enough for element-wise finite differences."""
    return ModelConfig(
        in_channels=1,
        window_length=8,
        repre_channels=4,
        conv_channels=(4, 4),
        hidden_size=4,
        project_channels=6,
        num_layers=3,
        dropout_rate=0.0,
    )


@pytest.fixture
def small_model_cfg() -> ModelConfig:
    return ModelConfig(
        in_channels=1,
        window_length=16,
        repre_channels=8,
        conv_channels=(8, 8),
        hidden_size=8,
        project_channels=8,
        num_layers=1,
        dropout_rate=0.1,
    )


@pytest.fixture
def toy_model(toy_model_cfg):
    torch.manual_seed(0)
    return build_model(toy_model_cfg, dtype=torch.float64)


@pytest.fixture
def sine_object() -> TimeSeriesObject:
    t = np.arange(640, dtype=np.float64)
    values = np.sin(2 * np.pi * t / 32)
    labels = np.zeros(640, dtype=np.int64)
    labels[500:510] = 1
    return TimeSeriesObject(id="sine", values=values, labels=labels, train_end=320)


@pytest.fixture
def tiny_run(tmp_path) -> RunConfig:
    """Seconds-scale run on a shrunken synthetic suite."""
    return RunConfig(
        variant="full",
        synth=SynthSuiteConfig(train_windows=16, anomaly_rate=0.05, subsequence_length=8, period=16),
        model=ModelConfig(
            window_length=8,
            repre_channels=4,
            conv_channels=(4, 4),
            hidden_size=4,
            project_channels=6,
            num_layers=1,
            dropout_rate=0.0,
        ),
        objective=ObjectiveConfig(),
        train=TrainConfig(batch_size=8, max_epochs=3, center_freeze_epoch=1, learning_rate=3e-4, seed=0),
        augment=AugmentConfig(),
        threshold=ThresholdConfig(mode="search", p_min=0.01, p_max=0.2, p_step=0.01),
        perf=PerfConfig(max_workers_prepare=2, max_workers_score=2),
        output_dir=tmp_path / "out",
        repeats=2,
    )


@pytest.fixture
def project_root() -> Path:
    return PROJECT_ROOT
