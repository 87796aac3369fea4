"""synth.py

CocaClaw - deterministic synthetic series with injected anomalies

Base signals
------------
- sine     amplitude * sin(2*pi*t/period + phase_j) + small Gaussian noise
- ar1      x_t = ar_coef * x_{t-1} + e_t, unit innovations
- mixture  sine + mixture_weight * ar1

Injections
----------
- global_point  one point set to mean + magnitude * max|x - mean| (far outside the series range)
- local_point   one point pushed above its neighborhood max by magnitude * (neighborhood range)
- subsequence   a contiguous run replaced by a fast oscillation (period = period / magnitude,
                at least 2) swinging across the series' own range, so each point on its own
                stays inside [min, max] while the run's shape is foreign

Labels are 1 exactly on injected points. Same spec (seed included) -> same object.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from cocaclaw.data import TimeSeriesObject
from cocaclaw.errors import InjectionOverlapError

InjectionKind = Literal["global_point", "local_point", "subsequence"]
BASES = ("sine", "ar1", "mixture")
INJECTION_KINDS = ("global_point", "local_point", "subsequence")

DEFAULT_MAGNITUDE = {"global_point": 10.0, "local_point": 0.5, "subsequence": 8.0}


@dataclass
class Injection:
    kind: InjectionKind
    start: int
    length: int = 1
    magnitude: float | None = None

    @property
    def end(self) -> int:
        return self.start + self.length

    @property
    def strength(self) -> float:
        return DEFAULT_MAGNITUDE[self.kind] if self.magnitude is None else float(self.magnitude)


@dataclass
class SynthSpec:
    length: int = 3200
    d: int = 1
    base: str = "sine"
    period: int = 32
    amplitude: float = 1.0
    noise_std: float = 0.05
    ar_coef: float = 0.9
    mixture_weight: float = 0.3
    injections: list[Injection] = field(default_factory=list)
    train_fraction: float = 0.5
    seed: int = 0
    object_id: str = "synth"

    def validate(self) -> None:
        if self.base not in BASES:
            raise ValueError(f"unknown base {self.base!r}; expected one of {BASES}")
        if self.length < 2 or self.d < 1 or self.period < 2:
            raise ValueError(f"bad spec: length={self.length} d={self.d} period={self.period}")
        ordered = sorted(self.injections, key=lambda inj: inj.start)
        for inj in ordered:
            if inj.kind not in INJECTION_KINDS:
                raise ValueError(f"unknown injection kind {inj.kind!r}")
            if inj.kind != "subsequence" and inj.length != 1:
                raise ValueError(f"{inj.kind} injections have length 1, got {inj.length}")
            if inj.length < 1 or inj.start < 0 or inj.end > self.length:
                raise ValueError(f"injection {inj} outside [0, {self.length})")
        for prev, cur in zip(ordered, ordered[1:]):
            if cur.start < prev.end:
                raise InjectionOverlapError(f"injections overlap: {prev} and {cur}")

    @property
    def train_end(self) -> int:
        return min(max(1, int(math.floor(self.train_fraction * self.length))), self.length - 1)


def _base_signal(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    t = np.arange(spec.length, dtype=np.float64)
    phases = 2.0 * np.pi * np.arange(spec.d) / max(spec.d, 1)
    sine = spec.amplitude * np.sin(2.0 * np.pi * t[:, None] / spec.period + phases[None, :])
    sine = sine + spec.noise_std * rng.normal(size=(spec.length, spec.d))
    if spec.base == "sine":
        return sine

    innovations = rng.normal(size=(spec.length, spec.d))
    ar = np.zeros((spec.length, spec.d))
    ar[0] = innovations[0]
    for i in range(1, spec.length):
        ar[i] = spec.ar_coef * ar[i - 1] + innovations[i]
    if spec.base == "ar1":
        return ar
    return sine + spec.mixture_weight * ar


@dataclass
class _Reference:
    mean: np.ndarray
    spread: np.ndarray


def _inject(x: np.ndarray, inj: Injection, spec: SynthSpec, ref: _Reference) -> None:
    if inj.kind == "global_point":
        x[inj.start] = ref.mean + inj.strength * ref.spread
    elif inj.kind == "local_point":
        w = max(2, spec.period // 4)
        lo, hi = max(0, inj.start - w), min(len(x), inj.start + w + 1)
        hood = np.concatenate([x[lo : inj.start], x[inj.start + 1 : hi]], axis=0)
        top, bottom = hood.max(axis=0), hood.min(axis=0)
        x[inj.start] = top + inj.strength * np.maximum(top - bottom, 1e-3)
    else:
        k = np.arange(inj.length, dtype=np.float64)
        fast_period = max(2.0, spec.period / inj.strength)
        x[inj.start : inj.end] = ref.mean + ref.spread * np.cos(2.0 * np.pi * k[:, None] / fast_period)


def generate(spec: SynthSpec) -> TimeSeriesObject:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    values = _base_signal(spec, rng)
    mean = values.mean(axis=0)
    ref = _Reference(mean=mean, spread=np.abs(values - mean).max(axis=0))
    labels = np.zeros(spec.length, dtype=np.int64)
    for inj in sorted(spec.injections, key=lambda i: i.start):
        _inject(values, inj, spec, ref)
        labels[inj.start : inj.end] = 1
    return TimeSeriesObject(id=spec.object_id, values=values, labels=labels, train_end=spec.train_end)


def random_injections(
    length: int,
    train_end: int,
    rate: float,
    kinds: Sequence[str],
    rng: np.random.Generator,
    *,
    subsequence_length: int = 40,
    max_attempts: int = 10_000,
) -> list[Injection]:
    """Disjoint, non-adjacent injections inside [train_end, length) covering exactly
    round(rate * (length - train_end)) points. Kinds are used in turn."""
    kinds = [str(k) for k in kinds]
    if not kinds:
        raise ValueError("no injection kinds")
    target = int(round(rate * (length - train_end)))
    placed: list[Injection] = []
    taken = np.zeros(length + 1, dtype=bool)
    remaining, turn, attempts = target, 0, 0
    while remaining > 0:
        kind = kinds[turn % len(kinds)]
        size = min(subsequence_length, remaining) if kind == "subsequence" else 1
        start = int(rng.integers(train_end + 1, length - size))
        lo, hi = start - 1, start + size + 1
        if taken[max(lo, 0) : hi].any():
            attempts += 1
            if attempts > max_attempts:
                raise InjectionOverlapError(f"could not place {target} anomalous points in the test split")
            continue
        taken[start : start + size] = True
        placed.append(Injection(kind=kind, start=start, length=size))  # type: ignore[arg-type]
        remaining -= size
        turn += 1
    return sorted(placed, key=lambda inj: inj.start)


def standard_suite(
    seed: int = 0,
    *,
    window_length: int = 16,
    train_windows: int = 200,
    bases: Sequence[str] = ("sine", "ar1"),
    anomaly_rate: float = 0.02,
    kinds: Sequence[str] = ("subsequence", "global_point"),
    subsequence_length: int = 20,
    period: int = 32,
    d: int = 1,
) -> list[TimeSeriesObject]:
    """One object per base; `train_windows` training windows in total, equal-length test
    split, anomalies only in the test split."""
    per_object = max(1, train_windows // len(bases))
    train_len = per_object * window_length
    objects = []
    for i, base in enumerate(bases):
        rng = np.random.default_rng(seed * 1009 + i)
        length = 2 * train_len
        spec = SynthSpec(
            length=length,
            d=d,
            base=base,
            period=period,
            injections=random_injections(
                length, train_len, anomaly_rate, kinds, rng, subsequence_length=subsequence_length
            ),
            train_fraction=0.5,
            seed=seed * 1009 + i,
            object_id=f"{base}_{seed}",
        )
        objects.append(generate(spec))
    return objects
