"""detect.py

CocaClaw - window scoring, thresholds and point predictions

Decision rule: a window is anomalous iff its score is strictly greater than tau; the
decision covers every point of the window's span. Points outside all spans stay 0.

Thresholds
----------
- search     p over a grid (default 0.0001 .. 0.0030 step 0.0001); tau_p is the
             nearest-rank (1-p)-quantile of the pooled scores; the p with the best
             aggregated RPA F1 wins, ties go to the smaller p
- max_score  tau = largest score below the maximum, so only the top window(s) fire
- fixed      tau from config
"""

from __future__ import annotations

import concurrent.futures
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd
import torch

from cocaclaw.errors import CenterNotFrozenError, ConfigError, EmptyBatchError, LengthMismatchError
from cocaclaw.metrics import aggregate, f1, rpa_counts
from cocaclaw.model import CocaNet, to_tensor
from cocaclaw.objective import Center, anomaly_scores, l2_normalize, nearest_rank_index, scoring_pair

logger = logging.getLogger(__name__)

THRESHOLD_MODES = ("search", "max_score", "fixed")


@dataclass
class ThresholdConfig:
    mode: str = "search"
    p_min: float = 0.0001
    p_max: float = 0.0030
    p_step: float = 0.0001
    tau: float | None = None

    def __post_init__(self) -> None:
        self.mode = str(self.mode).strip().lower()
        if self.mode not in THRESHOLD_MODES:
            raise ConfigError(f"unknown threshold mode {self.mode!r}; expected one of {THRESHOLD_MODES}")
        if self.mode == "fixed" and self.tau is None:
            raise ConfigError("threshold mode=fixed needs tau")
        if self.mode == "search":
            if not 0.0 < self.p_min <= self.p_max < 1.0 or self.p_step <= 0:
                raise ConfigError(f"bad p grid: min={self.p_min} max={self.p_max} step={self.p_step}")

    def grid(self) -> np.ndarray:
        return p_grid(self.p_min, self.p_max, self.p_step)


@dataclass
class Detection:
    window_scores: np.ndarray
    threshold: float
    point_predictions: np.ndarray
    selected_rate: float | None = None

    @property
    def window_predictions(self) -> np.ndarray:
        return (self.window_scores > self.threshold).astype(np.int64)


@dataclass
class ScoredSeries:
    """Scores of one object plus the point labels of the region they cover."""

    object_id: str
    scores: np.ndarray
    spans: np.ndarray  # relative to `labels`
    labels: np.ndarray


@dataclass
class ThresholdChoice:
    tau: float
    p: float | None
    f1: float


# -------------------------
# Scoring
# -------------------------
def _score_windows(model: CocaNet, center: Center, windows: np.ndarray, variant: str, chunk: int) -> np.ndarray:
    out = []
    with torch.no_grad():
        for start in range(0, len(windows), chunk):
            q, q_prime = model(to_tensor(windows[start : start + chunk], model))
            a, b = scoring_pair(variant, q, q_prime)
            ce = center.values.to(device=a.device, dtype=a.dtype)
            out.append(anomaly_scores(l2_normalize(a), l2_normalize(b), ce).cpu().numpy())
    if not out:
        return np.zeros(0, dtype=np.float64)
    return np.concatenate(out).astype(np.float64)


def score_dataset(
    model: CocaNet,
    center: Center,
    windows: np.ndarray,
    *,
    variant: str = "full",
    chunk: int = 512,
) -> np.ndarray:
    """Anomaly score per window in eval mode; requires the frozen training center."""
    if not center.frozen:
        raise CenterNotFrozenError("scoring needs the frozen training center")
    model.eval()
    return _score_windows(model, center, np.asarray(windows), variant, chunk)


def score_objects(
    model: CocaNet,
    center: Center,
    window_sets: Sequence[np.ndarray],
    *,
    variant: str = "full",
    max_workers: int = 1,
    chunk: int = 512,
) -> list[np.ndarray]:
    """Score several objects' windows; threads share the read-only eval-mode model."""
    if not center.frozen:
        raise CenterNotFrozenError("scoring needs the frozen training center")
    model.eval()
    jobs = [np.asarray(w) for w in window_sets]
    if max_workers > 1 and len(jobs) > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=max_workers) as ex:
            futures = [ex.submit(_score_windows, model, center, w, variant, chunk) for w in jobs]
            return [f.result() for f in futures]
    return [_score_windows(model, center, w, variant, chunk) for w in jobs]


# -------------------------
# Thresholds
# -------------------------
def p_grid(p_min: float = 0.0001, p_max: float = 0.0030, p_step: float = 0.0001) -> np.ndarray:
    n = int(round((p_max - p_min) / p_step)) + 1
    return np.round(p_min + p_step * np.arange(n), 10)


def quantile_threshold(scores: np.ndarray, p: float) -> float:
    """Nearest-rank (1-p)-quantile of the scores."""
    s = np.sort(np.asarray(scores, dtype=np.float64).reshape(-1))
    if s.size == 0:
        raise EmptyBatchError("threshold of an empty score set")
    return float(s[nearest_rank_index(s.size, 1.0 - p)])


def max_score_threshold(scores: np.ndarray) -> float:
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    if s.size == 0:
        raise EmptyBatchError("threshold of an empty score set")
    below = s[s < s.max()]
    return float(below.max()) if below.size else float("-inf")


def classify(scores: np.ndarray, tau: float, spans: np.ndarray, length: int | None = None) -> Detection:
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    spans = np.asarray(spans, dtype=np.int64).reshape(-1, 2)
    if spans.shape[0] != scores.shape[0]:
        raise LengthMismatchError(f"{scores.shape[0]} scores for {spans.shape[0]} spans")
    if length is None:
        length = int(spans[:, 1].max()) if spans.size else 0
    points = np.zeros(length, dtype=np.int64)
    for (start, end), flagged in zip(spans, scores > tau):
        if flagged:
            points[start:end] = 1
    return Detection(window_scores=scores, threshold=float(tau), point_predictions=points)


def select_threshold_dataset(series: Sequence[ScoredSeries], grid: Sequence[float] | None = None) -> ThresholdChoice:
    """One tau for the whole dataset: pooled-score quantiles, RPA counts summed over objects."""
    grid = p_grid() if grid is None else np.asarray(grid, dtype=np.float64).reshape(-1)
    if len(grid) == 0:
        raise ValueError("empty p grid")
    pooled = np.concatenate([np.asarray(s.scores, dtype=np.float64) for s in series]) if series else np.zeros(0)
    best: ThresholdChoice | None = None
    for p in sorted(float(x) for x in grid):
        tau = quantile_threshold(pooled, p)
        counts = aggregate(
            (rpa_counts(s.labels, classify(s.scores, tau, s.spans, len(s.labels)).point_predictions) for s in series),
            "RPA",
        )
        score = f1(counts)
        if best is None or score > best.f1:
            best = ThresholdChoice(tau=tau, p=p, f1=score)
    logger.info("[detect] threshold search p=%s tau=%.6f rpa_f1=%.4f", best.p, best.tau, best.f1)
    return best


def select_threshold(
    scores: np.ndarray,
    point_labels: np.ndarray,
    spans: np.ndarray,
    grid: Sequence[float] | None = None,
) -> tuple[float, float | None, float]:
    choice = select_threshold_dataset(
        [ScoredSeries(object_id="", scores=np.asarray(scores), spans=np.asarray(spans), labels=np.asarray(point_labels))],
        grid,
    )
    return choice.tau, choice.p, choice.f1


# -------------------------
# Export
# -------------------------
SCORE_COLUMNS = ["object_id", "window_index", "start", "end", "score", "predicted"]


def score_rows(object_id: str, spans: np.ndarray, detection: Detection) -> pd.DataFrame:
    spans = np.asarray(spans, dtype=np.int64).reshape(-1, 2)
    return pd.DataFrame(
        {
            "object_id": object_id,
            "window_index": np.arange(len(detection.window_scores), dtype=np.int64),
            "start": spans[:, 0],
            "end": spans[:, 1],
            "score": detection.window_scores,
            "predicted": detection.window_predictions,
        },
        columns=SCORE_COLUMNS,
    )


def write_scores_csv(path: str | Path, frames: Sequence[pd.DataFrame]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    table = pd.concat(list(frames), ignore_index=True) if frames else pd.DataFrame(columns=SCORE_COLUMNS)
    table.to_csv(path, index=False, float_format="%.10f", lineterminator="\n")
    return path
