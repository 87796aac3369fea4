from __future__ import annotations

import configparser
import dataclasses
import io
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

from cocaclaw.augment import AugmentConfig
from cocaclaw.data import CsvSchema
from cocaclaw.detect import ThresholdConfig
from cocaclaw.errors import ConfigError, ProtocolMismatchError
from cocaclaw.metrics import PROTOCOLS, normalize_protocol
from cocaclaw.model import ModelConfig
from cocaclaw.objective import ObjectiveConfig, normalize_variant_name
from cocaclaw.train import TrainConfig

# run-level variants: noaug is the full objective without augmentation
RUN_VARIANTS = ("full", "noaug", "nooc", "nocl", "novar", "coca_vi")
DATA_SOURCES = ("synth", "csv")


@dataclass
class DataConfig:
    source: str = "synth"
    paths: list[str] = field(default_factory=list)
    schema: CsvSchema = field(default_factory=CsvSchema)


@dataclass
class SynthSuiteConfig:
    bases: list[str] = field(default_factory=lambda: ["sine", "ar1"])
    train_windows: int = 200
    anomaly_rate: float = 0.02
    kinds: list[str] = field(default_factory=lambda: ["subsequence", "global_point"])
    subsequence_length: int = 20
    period: int = 32
    d: int = 1


@dataclass
class PerfConfig:
    max_workers_prepare: int = 1
    max_workers_score: int = 1


@dataclass
class RunConfig:
    variant: str = "full"
    data: DataConfig = field(default_factory=DataConfig)
    synth: SynthSuiteConfig = field(default_factory=SynthSuiteConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    threshold: ThresholdConfig = field(default_factory=ThresholdConfig)
    perf: PerfConfig = field(default_factory=PerfConfig)
    protocols: list[str] = field(default_factory=lambda: list(PROTOCOLS))
    output_dir: Path = Path("data/runs/latest")
    repeats: int = 3
    log_level: str = "INFO"

    @property
    def seed(self) -> int:
        return self.train.seed

    def to_ini(self) -> str:
        return dump_run_config(self)


def _normalize_run_variant(name: str) -> str:
    v = normalize_variant_name(name)
    if v not in RUN_VARIANTS:
        raise ConfigError(f"unknown variant {name!r}; expected one of {RUN_VARIANTS}")
    return v


# -------------------------
# INI helpers
# -------------------------
def _read(
    cfg: configparser.ConfigParser,
    section: str,
    key: str,
    default: Any,
    conv: Callable[[str], Any],
) -> Any:
    if not cfg.has_section(section):
        return default
    raw = cfg.get(section, key, fallback="").strip()
    if raw == "":
        return default
    try:
        return conv(raw)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"[{section}] {key} = {raw!r}: {e}") from e


def _to_bool(raw: str) -> bool:
    s = raw.strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected a boolean")


def _to_list(raw: str) -> list[str]:
    return [x.strip() for x in raw.split(",") if x.strip()]


def _to_int_list(raw: str) -> list[int]:
    return [int(x) for x in _to_list(raw)]


def _section(cfg: configparser.ConfigParser, name: str, spec: dict[str, tuple[Any, Callable[[str], Any]]]) -> dict[str, Any]:
    return {key: _read(cfg, name, key, default, conv) for key, (default, conv) in spec.items()}


def _fields(cls: type, conv_overrides: dict[str, Callable[[str], Any]] | None = None) -> dict[str, tuple[Any, Callable[[str], Any]]]:
    """(default, converter) per dataclass field, converter picked from the default's type."""
    conv_overrides = conv_overrides or {}
    out: dict[str, tuple[Any, Callable[[str], Any]]] = {}
    for f in dataclasses.fields(cls):
        default = f.default if f.default is not dataclasses.MISSING else f.default_factory()  # type: ignore[misc]
        if f.name in conv_overrides:
            conv = conv_overrides[f.name]
        elif isinstance(default, bool):
            conv = _to_bool
        elif isinstance(default, int):
            conv = int
        elif isinstance(default, float):
            conv = float
        elif isinstance(default, (list, tuple)):
            conv = _to_list
        else:
            conv = str
        out[f.name] = (default, conv)
    return out


def _build(cls: type, values: dict[str, Any]) -> Any:
    try:
        return cls(**values)
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{cls.__name__}: {e}") from e


# -------------------------
# Load
# -------------------------
def load_run_config(
    args: Any = None,
    *,
    config_path: Path | None = None,
    project_root: Path | None = None,
) -> tuple[configparser.ConfigParser, RunConfig]:
    """Resolve a run configuration from config.ini + CLI overrides (`variant`, `seed`, `out`).

    Missing sections/keys fall back to the dataclass defaults; bad values raise ConfigError.
    """
    cfg = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    if config_path is not None:
        config_path = Path(config_path)
        if not config_path.exists():
            raise ConfigError(f"config file not found: {config_path}")
        cfg.read(config_path, encoding="utf-8")
    project_root = project_root or Path.cwd()

    model_raw = _section(
        cfg,
        "model",
        _fields(ModelConfig, {"conv_channels": _to_int_list, "project_hidden": int}),
    )
    objective_raw = _section(cfg, "objective", _fields(ObjectiveConfig, {"eta": float}))
    train_raw = _section(cfg, "train", _fields(TrainConfig))
    augment_raw = _section(cfg, "augment", _fields(AugmentConfig))
    threshold_raw = _section(cfg, "threshold", _fields(ThresholdConfig, {"tau": float}))
    perf_raw = _section(cfg, "perf", _fields(PerfConfig))
    synth_raw = _section(cfg, "synth", _fields(SynthSuiteConfig))
    schema_raw = _section(
        cfg,
        "csv",
        _fields(CsvSchema, {"train_end": int, "label_column": str, "timestamp_column": str, "object_id": str}),
    )
    data_raw = _section(cfg, "data", {"source": ("synth", str), "paths": ([], _to_list)})
    run_raw = _section(
        cfg,
        "run",
        {
            "variant": ("full", str),
            "repeats": (3, int),
            "protocols": (list(PROTOCOLS), _to_list),
        },
    )
    output_dir = _read(cfg, "output", "dir", "data/runs/latest", str)
    log_level = _read(cfg, "logging", "level", "INFO", str)

    # CLI overrides
    variant = getattr(args, "variant", None) or run_raw["variant"]
    seed = getattr(args, "seed", None)
    if seed is not None:
        train_raw["seed"] = int(seed)
    out = getattr(args, "out", None)
    if out:
        output_dir = out

    variant = _normalize_run_variant(variant)
    if variant == "noaug":
        objective_raw["variant"] = "full"
        augment_raw["enabled"] = False
    else:
        objective_raw["variant"] = variant
    augment_raw["seed"] = train_raw["seed"]

    source = str(data_raw["source"]).strip().lower()
    if source not in DATA_SOURCES:
        raise ConfigError(f"[data] source must be one of {DATA_SOURCES}, got {source!r}")
    paths = [str((project_root / p).resolve()) if not os.path.isabs(p) else p for p in data_raw["paths"]]
    if source == "csv" and not paths:
        raise ConfigError("[data] source=csv needs paths")

    if run_raw["repeats"] < 1:
        raise ConfigError(f"[run] repeats must be >= 1, got {run_raw['repeats']}")

    try:
        protocols = [normalize_protocol(p) for p in run_raw["protocols"]]
    except ProtocolMismatchError as e:
        raise ConfigError(f"[run] protocols: {e}") from e

    out_path = Path(output_dir)
    if not out_path.is_absolute():
        out_path = (project_root / out_path).resolve()

    run = RunConfig(
        variant=variant,
        data=DataConfig(source=source, paths=paths, schema=_build(CsvSchema, schema_raw)),
        synth=_build(SynthSuiteConfig, synth_raw),
        model=_build(ModelConfig, model_raw),
        objective=_build(ObjectiveConfig, objective_raw),
        train=_build(TrainConfig, train_raw),
        augment=_build(AugmentConfig, augment_raw),
        threshold=_build(ThresholdConfig, threshold_raw),
        perf=_build(PerfConfig, perf_raw),
        protocols=protocols,
        output_dir=out_path,
        repeats=int(run_raw["repeats"]),
        log_level=str(log_level).upper(),
    )
    return cfg, run


def with_variant(run: RunConfig, variant: str, *, seed: int | None = None) -> RunConfig:
    """Copy of `run` switched to another run-level variant (and optionally another seed)."""
    variant = _normalize_run_variant(variant)
    seed = run.train.seed if seed is None else int(seed)
    objective = dataclasses.replace(run.objective, variant="full" if variant == "noaug" else variant)
    augment = dataclasses.replace(run.augment, enabled=variant != "noaug", seed=seed)
    return dataclasses.replace(
        run,
        variant=variant,
        objective=objective,
        augment=augment,
        train=dataclasses.replace(run.train, seed=seed),
    )


# -------------------------
# Dump (config.echo)
# -------------------------
def _fmt(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def dump_run_config(run: RunConfig) -> str:
    cfg = configparser.ConfigParser()
    cfg["run"] = {
        "variant": run.variant,
        "repeats": _fmt(run.repeats),
        "protocols": _fmt(run.protocols),
    }
    cfg["data"] = {"source": run.data.source, "paths": _fmt(run.data.paths)}
    cfg["csv"] = {k: _fmt(v) for k, v in dataclasses.asdict(run.data.schema).items()}
    cfg["synth"] = {k: _fmt(v) for k, v in dataclasses.asdict(run.synth).items()}
    cfg["model"] = {k: _fmt(v) for k, v in run.model.to_dict().items()}
    objective = dataclasses.asdict(run.objective)
    objective.pop("variant")  # carried by [run] variant
    cfg["objective"] = {k: _fmt(v) for k, v in objective.items()}
    cfg["train"] = {k: _fmt(v) for k, v in dataclasses.asdict(run.train).items()}
    augment = dataclasses.asdict(run.augment)
    augment.pop("seed")  # follows [train] seed
    cfg["augment"] = {k: _fmt(v) for k, v in augment.items()}
    cfg["threshold"] = {k: _fmt(v) for k, v in dataclasses.asdict(run.threshold).items()}
    cfg["perf"] = {k: _fmt(v) for k, v in dataclasses.asdict(run.perf).items()}
    cfg["output"] = {"dir": str(run.output_dir)}
    cfg["logging"] = {"level": run.log_level}
    buf = io.StringIO()
    cfg.write(buf)
    return buf.getvalue()
