"""data.py

CocaClaw - time series ingest, normalization and windowing

Purpose
-------
Turn labeled series (CSV files or synthetic objects) into fixed-length, non-overlapping
windows that the network consumes.

It:
1) Loads one labeled series per CSV file (`load_csv`), columns picked by a `CsvSchema`.
2) Fits per-channel mean/std on the training split only (`fit_normalizer`).
3) Applies the training-split stats to the whole series (`normalize`).
4) Cuts windows with stride == window length (`make_windows`); a window is abnormal when
   any of its points is labeled 1. The trailing remainder shorter than T is dropped.

CSV format
----------
Header row, UTF-8, one row per time step. Value columns are numeric; the label column holds
exactly "0" or "1". Without a label column every label is 0 and `labels_absent` is set.

    timestamp,value,label
    0,1.0,0
    1,2.0,0
    2,9.0,1

Spans
-----
`WindowBatch.spans[i] = (start, end)` with `end` exclusive, both indices into the source
series.
"""

from __future__ import annotations

import concurrent.futures
import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Sequence

import numpy as np
import pandas as pd

from cocaclaw.errors import (
    CsvParseError,
    DimensionMismatchError,
    EmptyBatchError,
    SchemaError,
)

logger = logging.getLogger(__name__)

Split = Literal["train", "test", "all"]

DEGENERATE_STD = 1e-8


# -------------------------
# Domain types
# -------------------------
@dataclass
class TimeSeriesObject:
    id: str
    values: np.ndarray
    labels: np.ndarray
    train_end: int
    labels_absent: bool = False

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim == 1:
            values = values.reshape(-1, 1)
        if values.ndim != 2 or values.shape[1] < 1:
            raise DimensionMismatchError(f"values must be [length x d], got shape {values.shape}")
        labels = np.asarray(self.labels).astype(np.int64).reshape(-1)
        if labels.shape[0] != values.shape[0]:
            raise DimensionMismatchError(
                f"labels length {labels.shape[0]} != values length {values.shape[0]} (object={self.id})"
            )
        if labels.size and not np.isin(labels, (0, 1)).all():
            raise ValueError(f"labels must be 0/1 (object={self.id})")
        if not 0 < int(self.train_end) < values.shape[0]:
            raise ValueError(
                f"train_end must satisfy 0 < train_end < length, got {self.train_end} "
                f"for length {values.shape[0]} (object={self.id})"
            )
        self.values = values
        self.labels = labels
        self.train_end = int(self.train_end)

    @property
    def length(self) -> int:
        return int(self.values.shape[0])

    @property
    def d(self) -> int:
        return int(self.values.shape[1])

    @property
    def anomaly_rate(self) -> float:
        return float(self.labels.mean()) if self.length else 0.0

    def split_bounds(self, split: Split) -> tuple[int, int]:
        if split == "train":
            return 0, self.train_end
        if split == "test":
            return self.train_end, self.length
        if split == "all":
            return 0, self.length
        raise ValueError(f"unknown split: {split!r}")


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    @property
    def d(self) -> int:
        return int(np.asarray(self.mean).shape[0])


@dataclass
class WindowBatch:
    windows: np.ndarray
    window_labels: np.ndarray
    spans: np.ndarray
    object_id: str

    def __post_init__(self) -> None:
        self.windows = np.asarray(self.windows, dtype=np.float64)
        self.window_labels = np.asarray(self.window_labels, dtype=np.int64).reshape(-1)
        self.spans = np.asarray(self.spans, dtype=np.int64).reshape(-1, 2)
        if self.windows.ndim != 3:
            raise DimensionMismatchError(f"windows must be [N x T x d], got shape {self.windows.shape}")
        n = self.windows.shape[0]
        if self.window_labels.shape[0] != n or self.spans.shape[0] != n:
            raise DimensionMismatchError(
                f"window count mismatch: windows={n} labels={self.window_labels.shape[0]} "
                f"spans={self.spans.shape[0]}"
            )

    def __len__(self) -> int:
        return int(self.windows.shape[0])

    @property
    def window_length(self) -> int:
        return int(self.windows.shape[1])

    @property
    def d(self) -> int:
        return int(self.windows.shape[2])

    def with_windows(self, windows: np.ndarray) -> "WindowBatch":
        """Same labels/spans/id, new window contents."""
        return WindowBatch(
            windows=windows,
            window_labels=self.window_labels.copy(),
            spans=self.spans.copy(),
            object_id=self.object_id,
        )

    def take(self, index: np.ndarray) -> "WindowBatch":
        return WindowBatch(
            windows=self.windows[index],
            window_labels=self.window_labels[index],
            spans=self.spans[index],
            object_id=self.object_id,
        )

    @classmethod
    def concat(cls, batches: Sequence["WindowBatch"]) -> "WindowBatch":
        if not batches:
            raise EmptyBatchError("nothing to concatenate")
        ids: list[str] = []
        for b in batches:
            if b.object_id not in ids:
                ids.append(b.object_id)
        return cls(
            windows=np.concatenate([b.windows for b in batches], axis=0),
            window_labels=np.concatenate([b.window_labels for b in batches], axis=0),
            spans=np.concatenate([b.spans for b in batches], axis=0),
            object_id=",".join(ids),
        )


@dataclass
class CsvSchema:
    value_columns: list[str] = field(default_factory=list)
    label_column: str | None = "label"
    timestamp_column: str | None = None
    train_end: int | None = None
    train_fraction: float = 0.5
    object_id: str | None = None


# -------------------------
# CSV I/O
# -------------------------
def _resolve_train_end(schema: CsvSchema, length: int) -> int:
    if schema.train_end is not None:
        return int(schema.train_end)
    return min(max(1, int(math.floor(schema.train_fraction * length))), max(1, length - 1))


def load_csv(path: str | Path, schema: CsvSchema | None = None) -> TimeSeriesObject:
    """Load one labeled series from a header-row CSV file.

    Line numbers in errors are 1-based file lines (the header is line 1).
    """
    schema = schema or CsvSchema()
    path = Path(path)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.ParserError as e:
        raise SchemaError(f"inconsistent column count in {path}: {e}") from e
    except pd.errors.EmptyDataError as e:
        raise SchemaError(f"empty csv file: {path}") from e

    columns = [str(c).strip() for c in frame.columns]
    frame.columns = columns

    label_col = schema.label_column if schema.label_column in columns else None
    if label_col is None:
        logger.info("[data] no label column %r in %s, labels default to 0", schema.label_column, path)

    reserved = {c for c in (label_col, schema.timestamp_column) if c}
    value_cols = list(schema.value_columns) or [c for c in columns if c not in reserved]
    missing = [c for c in value_cols if c not in columns]
    if missing:
        raise SchemaError(f"value column(s) {missing} not found in {path}; header={columns}")
    if not value_cols:
        raise SchemaError(f"no value columns in {path}")
    if schema.timestamp_column and schema.timestamp_column not in columns:
        raise SchemaError(f"timestamp column {schema.timestamp_column!r} not found in {path}")

    used = value_cols + ([label_col] if label_col else [])
    short_rows = frame[used].isna().any(axis=1)
    if short_rows.any():
        first = int(np.flatnonzero(short_rows.to_numpy())[0])
        raise SchemaError(f"inconsistent column count at line {first + 2} in {path}")

    values = np.empty((len(frame), len(value_cols)), dtype=np.float64)
    for j, col in enumerate(value_cols):
        numeric = pd.to_numeric(frame[col].str.strip(), errors="coerce")
        bad = numeric.isna().to_numpy()
        if bad.any():
            first = int(np.flatnonzero(bad)[0])
            raise CsvParseError(
                f"non-numeric value {frame[col].iloc[first]!r} in column {col!r} of {path}",
                line=first + 2,
            )
        values[:, j] = numeric.to_numpy(dtype=np.float64)

    labels_absent = label_col is None
    if labels_absent:
        labels = np.zeros(len(frame), dtype=np.int64)
    else:
        raw = frame[label_col].str.strip()
        ok = raw.isin(["0", "1"]).to_numpy()
        if not ok.all():
            first = int(np.flatnonzero(~ok)[0])
            raise CsvParseError(
                f"label must be exactly 0 or 1, got {raw.iloc[first]!r} in {path}",
                line=first + 2,
            )
        labels = (raw == "1").to_numpy().astype(np.int64)

    if schema.timestamp_column:
        ts_raw = frame[schema.timestamp_column].str.strip()
        ts_key = pd.to_numeric(ts_raw, errors="coerce")
        if ts_key.isna().any():
            ts_key = pd.to_datetime(ts_raw, errors="coerce")
        if ts_key.isna().any():
            first = int(np.flatnonzero(ts_key.isna().to_numpy())[0])
            raise CsvParseError(f"unparseable timestamp {ts_raw.iloc[first]!r} in {path}", line=first + 2)
        order = np.argsort(ts_key.to_numpy(), kind="mergesort")
        values = values[order]
        labels = labels[order]

    if len(frame) < 2:
        raise SchemaError(f"need at least 2 rows to split train/test, got {len(frame)} in {path}")

    return TimeSeriesObject(
        id=schema.object_id or path.stem,
        values=values,
        labels=labels,
        train_end=_resolve_train_end(schema, len(frame)),
        labels_absent=labels_absent,
    )


def write_csv(ts: TimeSeriesObject, path: str | Path) -> Path:
    """Write `ts` in the format `load_csv` reads (value columns, then label)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if ts.d == 1:
        cols = {"value": ts.values[:, 0]}
    else:
        cols = {f"value_{j}": ts.values[:, j] for j in range(ts.d)}
    frame = pd.DataFrame(cols)
    frame["label"] = ts.labels.astype(np.int64)
    frame.to_csv(path, index=False, float_format="%.10g", lineterminator="\n")
    return path


# -------------------------
# Normalization
# -------------------------
def fit_normalizer(ts: TimeSeriesObject) -> NormStats:
    """Per-channel mean / population std over the training split."""
    if ts.train_end < 2:
        raise ValueError(f"train_end must be >= 2 to fit a normalizer, got {ts.train_end} (object={ts.id})")
    train = ts.values[: ts.train_end]
    mean = train.mean(axis=0)
    std = train.std(axis=0)
    guarded = std < DEGENERATE_STD
    if guarded.any():
        logger.debug("[data] object=%s constant channels %s, std set to 1", ts.id, np.flatnonzero(guarded).tolist())
    std = np.where(guarded, 1.0, std)
    return NormStats(mean=mean, std=std)


def normalize(ts: TimeSeriesObject, stats: NormStats) -> TimeSeriesObject:
    mean = np.asarray(stats.mean, dtype=np.float64).reshape(-1)
    std = np.asarray(stats.std, dtype=np.float64).reshape(-1)
    if mean.shape[0] != ts.d or std.shape[0] != ts.d:
        raise DimensionMismatchError(f"stats have d={mean.shape[0]}, object {ts.id} has d={ts.d}")
    return dataclasses.replace(ts, values=(ts.values - mean) / std, labels=ts.labels.copy())


# -------------------------
# Windowing
# -------------------------
def make_windows(ts: TimeSeriesObject, T: int, split: Split = "train") -> WindowBatch:
    """Non-overlapping length-T windows over one split; the remainder < T is dropped."""
    if T < 2:
        raise ValueError(f"window length must be >= 2, got {T}")
    lo, hi = ts.split_bounds(split)
    n = (hi - lo) // T
    if n < 1:
        raise EmptyBatchError(
            f"split={split} of object {ts.id} has {hi - lo} points, shorter than window length {T}"
        )
    stop = lo + n * T
    windows = ts.values[lo:stop].reshape(n, T, ts.d)
    window_labels = ts.labels[lo:stop].reshape(n, T).max(axis=1)
    starts = lo + np.arange(n, dtype=np.int64) * T
    spans = np.stack([starts, starts + T], axis=1)
    return WindowBatch(windows=windows.copy(), window_labels=window_labels, spans=spans, object_id=ts.id)


@dataclass
class PreparedObject:
    source: TimeSeriesObject
    normalized: TimeSeriesObject
    stats: NormStats
    batch: WindowBatch


def _prepare_one(job: tuple[TimeSeriesObject, int, Split]) -> PreparedObject | None:
    ts, T, split = job
    stats = fit_normalizer(ts)
    normed = normalize(ts, stats)
    try:
        batch = make_windows(normed, T, split)
    except EmptyBatchError as e:
        logger.warning("[data] skip object=%s: %s", ts.id, e)
        return None
    return PreparedObject(source=ts, normalized=normed, stats=stats, batch=batch)


def prepare_windows(
    objects: Sequence[TimeSeriesObject],
    T: int,
    split: Split,
    *,
    max_workers: int = 1,
) -> list[PreparedObject]:
    """Normalize each object with its own training stats and window the chosen split.

    Runs on a thread pool when `max_workers > 1`; output order follows `objects`.
    """
    jobs = [(ts, T, split) for ts in objects]
    if max_workers > 1 and len(jobs) > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=max_workers) as ex:
            results = list(ex.map(_prepare_one, jobs))
    else:
        results = [_prepare_one(j) for j in jobs]

    prepared = [r for r in results if r is not None]
    if not prepared:
        raise EmptyBatchError(f"no {split} windows of length {T} in {len(objects)} object(s)")
    logger.info(
        "[data] split=%s objects=%d windows=%d T=%d",
        split,
        len(prepared),
        sum(len(p.batch) for p in prepared),
        T,
    )
    return prepared
