from __future__ import annotations

import json
import math
from datetime import datetime
from pathlib import Path
from typing import Any, Iterable

from cocaclaw.metrics import ScorecardRow
from cocaclaw.train import TrainHistory

CONFIG_ECHO = "config.echo"
CHECKPOINT = "checkpoint.bin"
HISTORY_LOG = "history.log"
SCORES_CSV = "scores.csv"
SCORECARD_JSON = "scorecard.json"
SUMMARY_JSON = "summary.json"
RUN_LOG = "run.log"
ABLATION_CSV = "ablation.csv"


def sweep_csv(param: str) -> str:
    return f"sweep_{param}.csv"


def _jsonable(value: Any) -> Any:
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


def write_config_echo(out_dir: Path, text: str) -> Path:
    path = out_dir / CONFIG_ECHO
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return path


def write_history(out_dir: Path, history: TrainHistory, summary: dict[str, Any]) -> Path:
    """One JSON line per epoch, then a single `"record": "summary"` line."""
    path = out_dir / HISTORY_LOG
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for rec in history.records:
            f.write(json.dumps(_jsonable({"record": "epoch", **rec.to_dict()}), ensure_ascii=False) + "\n")
        tail = {
            "record": "summary",
            "epochs": len(history),
            "stopped_early": history.stopped_early,
            "best_epoch": history.best_epoch,
            **summary,
        }
        f.write(json.dumps(_jsonable(tail), ensure_ascii=False) + "\n")
    return path


def read_history(path: Path) -> list[dict[str, Any]]:
    out = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out


def write_scorecard(out_dir: Path, rows: Iterable[ScorecardRow]) -> Path:
    path = out_dir / SCORECARD_JSON
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump([r.to_dict() for r in rows], f, ensure_ascii=False, indent=2)
        f.write("\n")
    return path


def load_scorecard(path: Path) -> list[ScorecardRow]:
    with open(path, "r", encoding="utf-8") as f:
        raw = json.load(f)
    return [ScorecardRow(**r) for r in raw]


def load_summary(path: Path) -> dict[str, Any]:
    """Read the per-run summary; a missing or unreadable file yields {}."""
    try:
        if not path.exists():
            return {}
        with open(path, "r", encoding="utf-8") as f:
            obj = json.load(f)
        return obj if isinstance(obj, dict) else {}
    except (OSError, ValueError):
        return {}


def save_summary(path: Path, updates: dict[str, Any]) -> dict[str, Any]:
    """Merge `updates` into summary.json without dropping keys written by earlier commands
    (`train` then `detect` accumulate one summary)."""
    path.parent.mkdir(parents=True, exist_ok=True)
    obj = load_summary(path)
    obj.update(_jsonable(updates))
    obj["updated_at"] = datetime.now().isoformat(timespec="seconds")
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, ensure_ascii=False, indent=2, sort_keys=True)
        f.write("\n")
    return obj
