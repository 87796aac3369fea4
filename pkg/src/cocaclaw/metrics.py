"""metrics.py

CocaClaw - point-wise (PW), point-adjusted (PA) and revised point-adjusted (RPA) counting

- PW   element-wise tp / fp / fn
- PA   a true segment with at least one predicted point counts all its points as predicted,
       then PW counting
- RPA  one tp per true segment overlapped by a predicted run, one fn per missed true
       segment, one fp per predicted run touching no true segment

Counts are summed over all objects of a dataset before F1 is taken.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from cocaclaw.errors import LengthMismatchError, ProtocolMismatchError

PROTOCOLS = ("PW", "PA", "RPA")


@dataclass(frozen=True)
class Segment:
    start: int
    end: int  # inclusive

    def __len__(self) -> int:
        return self.end - self.start + 1


@dataclass(frozen=True)
class MetricCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    protocol: str | None = None

    def __add__(self, other: "MetricCounts") -> "MetricCounts":
        if self.protocol and other.protocol and self.protocol != other.protocol:
            raise ProtocolMismatchError(f"cannot add {self.protocol} and {other.protocol} counts")
        return MetricCounts(
            tp=self.tp + other.tp,
            fp=self.fp + other.fp,
            fn=self.fn + other.fn,
            protocol=self.protocol or other.protocol,
        )


def normalize_protocol(name: str) -> str:
    p = str(name or "").strip().upper()
    if p not in PROTOCOLS:
        raise ProtocolMismatchError(f"unknown protocol {name!r}; expected one of {PROTOCOLS}")
    return p


def _as_binary(x: Any) -> np.ndarray:
    return (np.asarray(x).reshape(-1) != 0).astype(np.int8)


def _check_lengths(labels: Any, preds: Any) -> tuple[np.ndarray, np.ndarray]:
    y, p = _as_binary(labels), _as_binary(preds)
    if y.shape[0] != p.shape[0]:
        raise LengthMismatchError(f"labels length {y.shape[0]} != predictions length {p.shape[0]}")
    return y, p


def segments(labels: Any) -> list[Segment]:
    """Maximal runs of 1s."""
    y = _as_binary(labels)
    if y.size == 0:
        return []
    edges = np.diff(np.concatenate(([0], y, [0])).astype(np.int8))
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1) - 1
    return [Segment(int(s), int(e)) for s, e in zip(starts, ends)]


def pw_counts(labels: Any, preds: Any) -> MetricCounts:
    y, p = _check_lengths(labels, preds)
    return MetricCounts(
        tp=int(np.sum((y == 1) & (p == 1))),
        fp=int(np.sum((y == 0) & (p == 1))),
        fn=int(np.sum((y == 1) & (p == 0))),
        protocol="PW",
    )


def point_adjust(labels: Any, preds: Any) -> np.ndarray:
    y, p = _check_lengths(labels, preds)
    adjusted = p.copy()
    for seg in segments(y):
        if p[seg.start : seg.end + 1].any():
            adjusted[seg.start : seg.end + 1] = 1
    return adjusted


def pa_counts(labels: Any, preds: Any) -> MetricCounts:
    y, p = _check_lengths(labels, preds)
    counts = pw_counts(y, point_adjust(y, p))
    return dataclasses.replace(counts, protocol="PA")


def rpa_counts(labels: Any, preds: Any) -> MetricCounts:
    y, p = _check_lengths(labels, preds)
    true_segs = segments(y)
    tp = sum(1 for s in true_segs if p[s.start : s.end + 1].any())
    fp = sum(1 for s in segments(p) if not y[s.start : s.end + 1].any())
    return MetricCounts(tp=tp, fp=fp, fn=len(true_segs) - tp, protocol="RPA")


COUNTERS: dict[str, Callable[[Any, Any], MetricCounts]] = {
    "PW": pw_counts,
    "PA": pa_counts,
    "RPA": rpa_counts,
}


def counts_for(protocol: str, labels: Any, preds: Any) -> MetricCounts:
    return COUNTERS[normalize_protocol(protocol)](labels, preds)


def f1(counts: MetricCounts) -> float:
    denom = 2 * counts.tp + counts.fp + counts.fn
    return 0.0 if denom == 0 else 2.0 * counts.tp / denom


def precision(counts: MetricCounts) -> float:
    denom = counts.tp + counts.fp
    return 0.0 if denom == 0 else counts.tp / denom


def recall(counts: MetricCounts) -> float:
    denom = counts.tp + counts.fn
    return 0.0 if denom == 0 else counts.tp / denom


def aggregate(countss: Iterable[MetricCounts], protocol: str | None = None) -> MetricCounts:
    """Component-wise sum; every element must share one protocol."""
    total = MetricCounts(protocol=protocol)
    for c in countss:
        total = total + c
    return total


# -------------------------
# Scorecard
# -------------------------
@dataclass
class ScorecardRow:
    object_id: str
    protocol: str
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_counts(cls, object_id: str, counts: MetricCounts) -> "ScorecardRow":
        return cls(
            object_id=object_id,
            protocol=counts.protocol or "",
            tp=counts.tp,
            fp=counts.fp,
            fn=counts.fn,
            precision=precision(counts),
            recall=recall(counts),
            f1=f1(counts),
        )

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


def scorecard(
    evaluated: Sequence[tuple[str, Any, Any]],
    protocols: Sequence[str] = PROTOCOLS,
) -> list[ScorecardRow]:
    """Rows per (object, protocol) plus one aggregated `ALL` row per protocol.

    `evaluated` holds (object_id, point_labels, point_predictions).
    """
    rows: list[ScorecardRow] = []
    for proto in (normalize_protocol(p) for p in protocols):
        per_object = [(oid, counts_for(proto, y, p)) for oid, y, p in evaluated]
        rows.extend(ScorecardRow.from_counts(oid, c) for oid, c in per_object)
        rows.append(ScorecardRow.from_counts("ALL", aggregate((c for _, c in per_object), proto)))
    return rows


def evaluate(labels: Any, preds: Any, protocols: Sequence[str] = PROTOCOLS) -> dict[str, MetricCounts]:
    """Counts of a single (labels, preds) pair under each requested protocol."""
    return {p: counts_for(p, labels, preds) for p in (normalize_protocol(x) for x in protocols)}
