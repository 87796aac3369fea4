"""pipeline.py

CocaClaw - stage orchestration behind the CLI commands

Stages
------
config -> load -> train -> detect -> evaluate -> write

Any failure inside a stage is re-raised as `StageError(stage, cause)`; the CLI turns it
into `[run] failed stage=<stage>: <message>` and exit status 1. `UsageError` passes through
untouched (exit status 2).

Commands
--------
- run_pipeline          train + detect + evaluate + write every artifact
- train_only            train, write config echo / checkpoint / history / summary
- detect_from_checkpoint load checkpoint, score the test splits, threshold, evaluate
- evaluate_files        score third-party predictions (or scores + tau) against labels
- run_ablation          every variant x repeats on shared data and seeds
- run_sweep             one setting of nu or center_freeze_epoch per row, repeated like an ablation
"""

from __future__ import annotations

import contextlib
import dataclasses
import logging
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Any, Iterator, Sequence

import numpy as np
import pandas as pd
import torch

from cocaclaw import artifacts
from cocaclaw.data import TimeSeriesObject, load_csv, prepare_windows, write_csv
from cocaclaw.detect import (
    Detection,
    ScoredSeries,
    ThresholdChoice,
    ThresholdConfig,
    classify,
    max_score_threshold,
    score_objects,
    score_rows,
    select_threshold_dataset,
    write_scores_csv,
)
from cocaclaw.errors import CocaError, ConfigError, DimensionMismatchError, UsageError
from cocaclaw.metrics import ScorecardRow, aggregate, f1, rpa_counts, scorecard
from cocaclaw.model import CocaNet, ModelConfig, load_checkpoint, save_checkpoint
from cocaclaw.objective import Center
from cocaclaw.runtime_config import RunConfig, with_variant
from cocaclaw.synth import standard_suite
from cocaclaw.train import CollapseReport, TrainResult, collapse_probe, train

logger = logging.getLogger(__name__)

STAGES = ("config", "load", "train", "detect", "evaluate", "write")


class StageError(CocaError):
    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"{type(cause).__name__}: {cause}")


@contextlib.contextmanager
def stage(name: str) -> Iterator[None]:
    try:
        yield
    except (StageError, UsageError):
        raise
    except Exception as e:
        raise StageError(name, e) from e


@dataclass
class DetectOutcome:
    series: list[ScoredSeries]
    detections: list[Detection]
    choice: ThresholdChoice
    frames: list[pd.DataFrame]


@dataclass
class RunOutcome:
    run: RunConfig
    train: TrainResult | None = None
    collapse: CollapseReport | None = None
    detect: DetectOutcome | None = None
    rows: list[ScorecardRow] = field(default_factory=list)
    summary: dict[str, Any] = field(default_factory=dict)

    def f1_all(self, protocol: str) -> float | None:
        for r in self.rows:
            if r.object_id == "ALL" and r.protocol == protocol:
                return r.f1
        return None


# -------------------------
# load
# -------------------------
def load_objects(run: RunConfig) -> list[TimeSeriesObject]:
    if run.data.source == "synth":
        s = run.synth
        objects = standard_suite(
            run.seed,
            window_length=run.model.window_length,
            train_windows=s.train_windows,
            bases=s.bases,
            anomaly_rate=s.anomaly_rate,
            kinds=s.kinds,
            subsequence_length=s.subsequence_length,
            period=s.period,
            d=s.d,
        )
    else:
        schema = run.data.schema
        if len(run.data.paths) > 1 and schema.object_id:
            schema = dataclasses.replace(schema, object_id=None)
        objects = [load_csv(p, schema) for p in run.data.paths]
    logger.info(
        "[load] source=%s objects=%d ids=%s",
        run.data.source,
        len(objects),
        ",".join(o.id for o in objects),
    )
    return objects


def fit_model_config(model_cfg: ModelConfig, objects: Sequence[TimeSeriesObject]) -> ModelConfig:
    """Model input width follows the data; every object must share one d."""
    dims = sorted({o.d for o in objects})
    if len(dims) != 1:
        raise DimensionMismatchError(f"objects disagree on d: {dims}")
    if model_cfg.in_channels != dims[0]:
        model_cfg = dataclasses.replace(model_cfg, in_channels=dims[0])
    return model_cfg


# -------------------------
# detect
# -------------------------
def choose_threshold(cfg: ThresholdConfig, series: Sequence[ScoredSeries]) -> ThresholdChoice:
    if cfg.mode == "search":
        return select_threshold_dataset(series, cfg.grid())
    pooled = np.concatenate([s.scores for s in series]) if series else np.zeros(0)
    tau = max_score_threshold(pooled) if cfg.mode == "max_score" else float(cfg.tau)  # type: ignore[arg-type]
    counts = aggregate(
        (rpa_counts(s.labels, classify(s.scores, tau, s.spans, len(s.labels)).point_predictions) for s in series),
        "RPA",
    )
    return ThresholdChoice(tau=tau, p=None, f1=f1(counts))


def detect_objects(
    run: RunConfig,
    model: CocaNet,
    center: Center,
    objects: Sequence[TimeSeriesObject],
    *,
    variant: str,
) -> DetectOutcome:
    if run.threshold.mode == "search" and any(o.labels_absent for o in objects):
        raise ConfigError("threshold search needs labels; use [threshold] mode=max_score or fixed")
    prepared = prepare_windows(
        objects, model.cfg.window_length, "test", max_workers=run.perf.max_workers_prepare
    )
    scores = score_objects(
        model,
        center,
        [p.batch.windows for p in prepared],
        variant=variant,
        max_workers=run.perf.max_workers_score,
    )
    series = []
    for p, s in zip(prepared, scores):
        lo, hi = p.source.split_bounds("test")
        series.append(
            ScoredSeries(object_id=p.source.id, scores=s, spans=p.batch.spans - lo, labels=p.source.labels[lo:hi])
        )
    choice = choose_threshold(run.threshold, series)
    detections = []
    frames = []
    for p, s in zip(prepared, series):
        det = classify(s.scores, choice.tau, s.spans, len(s.labels))
        det.selected_rate = choice.p
        detections.append(det)
        frames.append(score_rows(s.object_id, p.batch.spans, det))
    flagged = sum(int(d.window_predictions.sum()) for d in detections)
    logger.info(
        "[detect] mode=%s tau=%.6f p=%s windows=%d flagged=%d",
        run.threshold.mode,
        choice.tau,
        choice.p,
        sum(len(s.scores) for s in series),
        flagged,
    )
    return DetectOutcome(series=series, detections=detections, choice=choice, frames=frames)


def evaluate_outcome(run: RunConfig, outcome: DetectOutcome) -> list[ScorecardRow]:
    evaluated = [(s.object_id, s.labels, d.point_predictions) for s, d in zip(outcome.series, outcome.detections)]
    rows = scorecard(evaluated, run.protocols)
    for r in rows:
        if r.object_id == "ALL":
            logger.info("[eval] protocol=%s tp=%d fp=%d fn=%d f1=%.4f", r.protocol, r.tp, r.fp, r.fn, r.f1)
    return rows


# -------------------------
# summaries
# -------------------------
def _train_summary(run: RunConfig, result: TrainResult, collapse: CollapseReport) -> dict[str, Any]:
    return {
        "variant": run.variant,
        "objective_variant": run.objective.variant,
        "mode": run.objective.mode,
        "seed": run.seed,
        "epochs": len(result.history),
        "best_epoch": result.history.best_epoch,
        "stopped_early": result.history.stopped_early,
        "center_hash": result.center.digest(),
        "final_loss": result.history.records[-1].loss if result.history.records else None,
        "collapse": dataclasses.asdict(collapse),
    }


def _detect_summary(run: RunConfig, outcome: DetectOutcome, rows: Sequence[ScorecardRow]) -> dict[str, Any]:
    return {
        "threshold": {
            "mode": run.threshold.mode,
            "tau": outcome.choice.tau,
            "p": outcome.choice.p,
            "rpa_f1": outcome.choice.f1,
        },
        "f1": {r.protocol: r.f1 for r in rows if r.object_id == "ALL"},
        "objects": [s.object_id for s in outcome.series],
    }


def _write_train_artifacts(run: RunConfig, objects: Sequence[TimeSeriesObject], result: TrainResult, collapse: CollapseReport) -> dict[str, Any]:
    out = run.output_dir
    summary = _train_summary(run, result, collapse)
    artifacts.write_config_echo(out, run.to_ini())
    save_checkpoint(
        out / artifacts.CHECKPOINT,
        result.model,
        result.center.values,
        meta={
            "variant": run.variant,
            "objective_variant": run.objective.variant,
            "seed": run.seed,
            "objects": [o.id for o in objects],
        },
    )
    artifacts.write_history(out, result.history, {"collapse": dataclasses.asdict(collapse)})
    return summary


# -------------------------
# commands
# -------------------------
def _train_stage(run: RunConfig, objects: Sequence[TimeSeriesObject]) -> tuple[TrainResult, CollapseReport]:
    model_cfg = fit_model_config(run.model, objects)
    result = train(
        objects,
        model_cfg,
        run.objective,
        run.train,
        run.augment,
        max_workers=run.perf.max_workers_prepare,
        dtype=torch.float32,
    )
    collapse = collapse_probe(result.history, gamma=run.objective.gamma)
    if collapse.collapsed:
        logger.warning(
            "[train] collapse detected: proj_std=%.6f loss=%.6f", collapse.final_proj_std, collapse.final_loss
        )
    return result, collapse


def run_pipeline(run: RunConfig, *, write: bool = True) -> RunOutcome:
    started = datetime.now().isoformat(timespec="seconds")
    with stage("load"):
        objects = load_objects(run)
    with stage("train"):
        result, collapse = _train_stage(run, objects)
    with stage("detect"):
        outcome = detect_objects(run, result.model, result.center, objects, variant=run.objective.variant)
    with stage("evaluate"):
        rows = evaluate_outcome(run, outcome)

    summary = {
        **_train_summary(run, result, collapse),
        **_detect_summary(run, outcome, rows),
        "started_at": started,
    }
    if write:
        with stage("write"):
            _write_train_artifacts(run, objects, result, collapse)
            write_scores_csv(run.output_dir / artifacts.SCORES_CSV, outcome.frames)
            artifacts.write_scorecard(run.output_dir, rows)
            summary = artifacts.save_summary(run.output_dir / artifacts.SUMMARY_JSON, summary)
            logger.info("[write] out=%s", run.output_dir)
    return RunOutcome(run=run, train=result, collapse=collapse, detect=outcome, rows=rows, summary=summary)


def train_only(run: RunConfig) -> RunOutcome:
    with stage("load"):
        objects = load_objects(run)
    with stage("train"):
        result, collapse = _train_stage(run, objects)
    with stage("write"):
        summary = _write_train_artifacts(run, objects, result, collapse)
        summary = artifacts.save_summary(run.output_dir / artifacts.SUMMARY_JSON, summary)
        logger.info("[write] out=%s", run.output_dir)
    return RunOutcome(run=run, train=result, collapse=collapse, summary=summary)


def detect_from_checkpoint(run: RunConfig, checkpoint: Path | None = None) -> RunOutcome:
    """Score with a saved model; the checkpoint's variant decides how scores are formed."""
    path = Path(checkpoint) if checkpoint else run.output_dir / artifacts.CHECKPOINT
    with stage("load"):
        if not path.exists():
            raise FileNotFoundError(f"checkpoint not found: {path}")
        model, center_values, meta = load_checkpoint(path)
        if center_values is None:
            raise ValueError(f"checkpoint has no frozen center: {path}")
        center = Center(values=center_values, frozen=True)
        objects = load_objects(run)
        fitted = fit_model_config(model.cfg, objects)
        if fitted.in_channels != model.cfg.in_channels:
            raise ConfigError(
                f"checkpoint expects d={model.cfg.in_channels}, data has d={fitted.in_channels}: {path}"
            )
        variant = str(meta.get("objective_variant") or run.objective.variant)
    with stage("detect"):
        outcome = detect_objects(run, model, center, objects, variant=variant)
    labelled = not any(o.labels_absent for o in objects)
    rows: list[ScorecardRow] = []
    if labelled:
        with stage("evaluate"):
            rows = evaluate_outcome(run, outcome)
    else:
        logger.warning("[eval] labels absent, scorecard skipped")
    with stage("write"):
        write_scores_csv(run.output_dir / artifacts.SCORES_CSV, outcome.frames)
        if rows:
            artifacts.write_scorecard(run.output_dir, rows)
        summary = artifacts.save_summary(
            run.output_dir / artifacts.SUMMARY_JSON,
            {**_detect_summary(run, outcome, rows), "checkpoint": str(path), "center_hash": center.digest()},
        )
    return RunOutcome(run=run, detect=outcome, rows=rows, summary=summary)


# -------------------------
# eval (standalone)
# -------------------------
def _read_table(path: Path) -> pd.DataFrame:
    if not Path(path).exists():
        raise UsageError(f"file not found: {path}")
    frame = pd.read_csv(path)
    frame.columns = [str(c).strip() for c in frame.columns]
    return frame


def _predictions_from_table(frame: pd.DataFrame, length: int, tau: float | None) -> np.ndarray:
    cols = set(frame.columns)
    if {"start", "end", "score"} <= cols:
        if "object_id" in cols and frame["object_id"].nunique() > 1:
            raise UsageError("scores file holds several objects; filter it to the one matching the labels")
        if tau is None:
            if "predicted" not in cols:
                raise UsageError("a scores file needs --tau")
            flags = frame["predicted"].to_numpy(dtype=np.int64)
            tau_eff, scores = 0.5, flags.astype(np.float64)
        else:
            tau_eff, scores = tau, frame["score"].to_numpy(dtype=np.float64)
        spans = frame[["start", "end"]].to_numpy(dtype=np.int64)
        return classify(scores, tau_eff, spans, length).point_predictions
    for name in ("predicted", "pred", "prediction"):
        if name in cols and tau is None:
            return frame[name].to_numpy(dtype=np.int64)
    if "score" in cols:
        if tau is None:
            raise UsageError("a scores file needs --tau")
        return (frame["score"].to_numpy(dtype=np.float64) > tau).astype(np.int64)
    raise UsageError(f"no prediction or score column in {sorted(cols)}")


def evaluate_files(
    labels_path: Path,
    preds_path: Path,
    protocols: Sequence[str],
    *,
    tau: float | None = None,
    label_column: str = "label",
) -> list[ScorecardRow]:
    """Point predictions (or scores + tau) from a CSV file against a labels CSV file."""
    labels_frame = _read_table(labels_path)
    if label_column not in labels_frame.columns:
        raise UsageError(f"labels file has no {label_column!r} column: {labels_path}")
    labels = labels_frame[label_column].to_numpy(dtype=np.int64)
    with stage("evaluate"):
        preds = _predictions_from_table(_read_table(preds_path), len(labels), tau)
        return scorecard([(Path(labels_path).stem, labels, preds)], protocols)


# -------------------------
# ablation
# -------------------------
def run_ablation(run: RunConfig, variants: Sequence[str], repeats: int | None = None) -> pd.DataFrame:
    """One row per variant: RPA F1 mean/std over repeats; repeat r uses seed + r for data and
    training alike, shared by every variant."""
    if not variants:
        raise UsageError("ablate needs at least one variant")
    repeats = run.repeats if repeats is None else int(repeats)
    if repeats < 1:
        raise UsageError(f"repeats must be >= 1, got {repeats}")
    names = []
    for v in variants:
        with stage("config"):
            names.append(with_variant(run, v).variant)

    records = [{"variant": name, **_repeat_runs(run, repeats, "ablate", variant=name)} for name in names]
    table = pd.DataFrame.from_records(records)
    with stage("write"):
        _write_table(run, artifacts.ABLATION_CSV, table, {"ablation": records, "seed": run.seed, "repeats": repeats})
    return table


def _repeat_runs(run: RunConfig, repeats: int, tag: str, *, variant: str | None = None) -> dict[str, Any]:
    """Pipeline `repeats` times with seed + r; RPA F1 mean/std (ddof=0) and collapsed-run count."""
    name = run.variant if variant is None else variant
    scores = []
    collapsed = 0
    for r in range(repeats):
        sub = with_variant(run, name, seed=run.seed + r)
        res = run_pipeline(sub, write=False)
        scores.append(res.f1_all("RPA") or 0.0)
        collapsed += int(bool(res.collapse and res.collapse.collapsed))
        logger.info("[%s] variant=%s seed=%d rpa_f1=%.4f", tag, name, sub.seed, scores[-1])
    arr = np.asarray(scores, dtype=np.float64)
    return {
        "repeats": repeats,
        "rpa_f1_mean": round(float(arr.mean()), 4),
        "rpa_f1_std": round(float(arr.std()), 4),
        "rpa_f1": f"{arr.mean():.4f}±{arr.std():.4f}",
        "collapsed_runs": collapsed,
    }


def _write_table(run: RunConfig, name: str, table: pd.DataFrame, summary: dict[str, Any]) -> Path:
    path = run.output_dir / name
    path.parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(path, index=False, lineterminator="\n")
    artifacts.save_summary(run.output_dir / artifacts.SUMMARY_JSON, summary)
    return path


# -------------------------
# sweep
# -------------------------
SWEEP_PARAMS = ("nu", "center_freeze_epoch")


def _with_param(run: RunConfig, param: str, value: float) -> RunConfig:
    if param == "nu":
        # nu only acts through the soft boundary; eta follows it unless set
        objective = dataclasses.replace(run.objective, nu=float(value), mode="soft")
        return dataclasses.replace(run, objective=objective)
    if float(value) != int(value):
        raise ConfigError(f"center_freeze_epoch must be an integer, got {value}")
    return dataclasses.replace(run, train=dataclasses.replace(run.train, center_freeze_epoch=int(value)))


def run_sweep(run: RunConfig, param: str, values: Sequence[float], repeats: int | None = None) -> pd.DataFrame:
    """One row per value of `param` (nu or center_freeze_epoch), every other setting from `run`.

    Each value is repeated like an ablation row; the table lands in sweep_<param>.csv and
    under "sweep" in summary.json.
    """
    param = str(param).strip().lower()
    if param not in SWEEP_PARAMS:
        raise UsageError(f"sweep parameter must be one of {SWEEP_PARAMS}, got {param!r}")
    if not values:
        raise UsageError("sweep needs at least one value")
    repeats = run.repeats if repeats is None else int(repeats)
    if repeats < 1:
        raise UsageError(f"repeats must be >= 1, got {repeats}")
    subs = []
    for v in values:
        with stage("config"):
            subs.append((float(v), _with_param(run, param, v)))

    records = [{"param": param, "value": v, **_repeat_runs(sub, repeats, "sweep")} for v, sub in subs]
    table = pd.DataFrame.from_records(records)
    with stage("write"):
        path = _write_table(
            run,
            artifacts.sweep_csv(param),
            table,
            {"sweep": {"param": param, "variant": run.variant, "rows": records}, "seed": run.seed, "repeats": repeats},
        )
    logger.info("[sweep] param=%s values=%d -> %s", param, len(records), path)
    return table


# -------------------------
# generate
# -------------------------
def generate_suite(run: RunConfig, out_dir: Path) -> list[Path]:
    """Write the synthetic suite as CSV files that `[data] source=csv` reads back."""
    with stage("load"):
        objects = load_objects(dataclasses.replace(run, data=dataclasses.replace(run.data, source="synth")))
    with stage("write"):
        paths = [write_csv(o, Path(out_dir) / f"{o.id}.csv") for o in objects]
    for o, p in zip(objects, paths):
        logger.info("[generate] object=%s length=%d anomaly_rate=%.4f -> %s", o.id, o.length, o.anomaly_rate, p)
    return paths
