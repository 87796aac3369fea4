"""
CocaClaw - 对比式单类时间序列异常检测（命令行入口）

作用
- 用一个共享的“正常”中心向量 + 两路表示（原窗口编码 q、重建窗口编码 q'）训练检测器：
    - 不变性项：把 q / q' 拉向中心（硬边界取均值，软边界按 ν 分位数 + hinge）
    - 方差项：每个投影维度的标准差不低于 γ，防止所有样本塌缩到同一点
- 测试集按不重叠窗口打分：score = 2 - sim(q, Ce) - sim(q', Ce)，阈值之上整窗判为异常。
- 评估：PW / PA / RPA 三种口径，按数据集汇总 tp/fp/fn 后再算 F1。

子命令
- generate  生成合成数据 CSV（sine + AR(1)，测试段注入点异常和子序列异常）
- run       训练 + 检测 + 评估 + 写全部产物
- train     只训练，写 checkpoint / history
- detect    读 checkpoint，对测试段打分、选阈值、写 scores.csv（有标签时顺带出 scorecard）
- eval      独立评估：labels CSV vs 预测（或分数 + --tau）CSV
- ablate    多个变体 × 多个种子，输出 RPA F1 均值±标准差
- sweep     扫 nu（软边界）或 center_freeze_epoch，每个取值重复若干种子，输出 RPA F1 均值±标准差
- report    打印已有输出目录里的 summary / scorecard

配置
- conf/config.example.ini 是完整模板（默认值对应 NAB 一列的参数）；conf/toy.ini 是桌面级小配置。
- 命令行 --variant / --seed / --out 覆盖配置文件。

运行
    PYTHONPATH=src ./venv/bin/python -m cocaclaw.main run --config conf/toy.ini --out data/runs/toy
    PYTHONPATH=src ./venv/bin/python -m cocaclaw.main ablate --config conf/toy.ini --variants full,novar --repeats 3
    PYTHONPATH=src ./venv/bin/python -m cocaclaw.main sweep --config conf/toy.ini --param nu --values 0.001,0.01,0.1

输出目录
- config.echo / checkpoint.bin / history.log / scores.csv / scorecard.json / summary.json / run.log
- ablate 额外写 ablation.csv；sweep 额外写 sweep_<param>.csv

退出码
- 0 成功；1 某个阶段失败（打印 `[run] failed stage=<stage>: ...`）；2 用法错误
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path
from typing import Sequence

import pandas as pd

from cocaclaw import artifacts
from cocaclaw.detect import ThresholdConfig
from cocaclaw.errors import UsageError
from cocaclaw.metrics import PROTOCOLS, ScorecardRow, normalize_protocol
from cocaclaw.pipeline import (
    SWEEP_PARAMS,
    StageError,
    detect_from_checkpoint,
    evaluate_files,
    generate_suite,
    run_ablation,
    run_pipeline,
    run_sweep,
    stage,
    train_only,
)
from cocaclaw.runtime_config import RUN_VARIANTS, RunConfig, load_run_config

logger = logging.getLogger(__name__)

LOG_FORMAT = "[%(asctime)s] %(levelname)s %(name)s: %(message)s"
LOG_DATEFMT = "%Y-%m-%d %H:%M:%S"


def configure_logging(level: str = "INFO", log_file: Path | None = None) -> None:
    root = logging.getLogger()
    # only replace handlers installed by an earlier call
    for h in list(root.handlers):
        if getattr(h, "_cocaclaw", False):
            root.removeHandler(h)
            h.close()
    root.setLevel(getattr(logging, str(level).upper(), logging.INFO))
    formatter = logging.Formatter(LOG_FORMAT, datefmt=LOG_DATEFMT)
    handlers: list[logging.Handler] = [logging.StreamHandler()]
    if log_file is not None:
        log_file.parent.mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(log_file, encoding="utf-8"))
    for h in handlers:
        h.setFormatter(formatter)
        h._cocaclaw = True  # type: ignore[attr-defined]
        root.addHandler(h)


def _split_list(raw: Sequence[str] | None) -> list[str]:
    out: list[str] = []
    for item in raw or []:
        out.extend(x.strip() for x in str(item).split(",") if x.strip())
    return out


def parse_args(argv: Sequence[str] | None = None) -> argparse.Namespace:
    """
    示例：
        1) 合成数据完整跑一遍：
           PYTHONPATH=src ./venv/bin/python -m cocaclaw.main run --config conf/toy.ini --out data/runs/toy

        2) 只换变体 / 种子：
           PYTHONPATH=src ./venv/bin/python -m cocaclaw.main run --config conf/toy.ini --variant novar --seed 3

        3) 第三方检测结果评估：
           PYTHONPATH=src ./venv/bin/python -m cocaclaw.main eval --labels a.csv --preds b.csv --protocol rpa
    """
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="INI 配置文件（缺省全部用默认值）")
    common.add_argument("--seed", type=int, default=None, help="覆盖 [train] seed")
    common.add_argument("--out", default=None, help="输出目录，覆盖 [output] dir")
    common.add_argument(
        "--protocol",
        action="append",
        default=None,
        help="评估口径 PW/PA/RPA，可重复或逗号分隔；默认三种都算",
    )

    variant = argparse.ArgumentParser(add_help=False)
    variant.add_argument("--variant", default=None, help=f"模型变体：{', '.join(RUN_VARIANTS)}")

    p = argparse.ArgumentParser(prog="cocaclaw", description="对比式单类时间序列异常检测")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="写合成数据 CSV 到 --out")
    sub.add_parser("run", parents=[common, variant], help="训练 + 检测 + 评估")
    sub.add_parser("train", parents=[common, variant], help="只训练")
    det = sub.add_parser("detect", parents=[common], help="读 checkpoint 打分并选阈值")
    det.add_argument("--checkpoint", type=Path, default=None, help="默认 <out>/checkpoint.bin")
    det.add_argument("--tau", type=float, default=None, help="固定阈值，跳过阈值搜索")
    ev = sub.add_parser("eval", parents=[common], help="独立评估 labels vs 预测")
    ev.add_argument("--labels", type=Path, required=True, help="含 label 列的 CSV")
    ev.add_argument("--preds", type=Path, required=True, help="含 predicted 列，或 score 列（需 --tau）的 CSV")
    ev.add_argument("--tau", type=float, default=None, help="分数文件的阈值（score > tau 判异常）")
    ab = sub.add_parser("ablate", parents=[common], help="变体对比")
    ab.add_argument("--variants", action="append", default=None, help="逗号分隔，例如 full,noaug,novar")
    ab.add_argument("--repeats", type=int, default=None, help="每个变体重复次数（种子 seed+r），覆盖 [run] repeats")
    sw = sub.add_parser("sweep", parents=[common, variant], help="超参数扫描")
    sw.add_argument("--param", required=True, choices=SWEEP_PARAMS, help="扫描的参数")
    sw.add_argument("--values", action="append", default=None, help="逗号分隔的取值，例如 0.001,0.01,0.1")
    sw.add_argument("--repeats", type=int, default=None, help="每个取值重复次数（种子 seed+r），覆盖 [run] repeats")
    sub.add_parser("report", parents=[common], help="打印输出目录里的 summary / scorecard")
    return p.parse_args(argv)


# -------------------------
# printing
# -------------------------
def print_scorecard(rows: Sequence[ScorecardRow]) -> None:
    if not rows:
        print("[eval] 无评估结果")
        return
    table = pd.DataFrame([r.to_dict() for r in rows])
    for col in ("precision", "recall", "f1"):
        table[col] = table[col].map(lambda v: f"{v:.4f}")
    print(table.to_string(index=False))


def print_summary(summary: dict) -> None:
    keys = ("variant", "seed", "epochs", "best_epoch", "stopped_early", "center_hash")
    parts = [f"{k}={summary[k]}" for k in keys if k in summary]
    if parts:
        print("[summary] " + " ".join(parts))
    collapse = summary.get("collapse")
    if isinstance(collapse, dict):
        print(f"[summary] collapse={collapse.get('status')} proj_std={collapse.get('final_proj_std')}")
    threshold = summary.get("threshold")
    if isinstance(threshold, dict):
        print(f"[summary] threshold mode={threshold.get('mode')} tau={threshold.get('tau')} p={threshold.get('p')}")
    for proto, value in (summary.get("f1") or {}).items():
        print(f"[summary] {proto} F1={value:.4f}")


# -------------------------
# commands
# -------------------------
def _load(args: argparse.Namespace) -> RunConfig:
    with stage("config"):
        _cfg, run = load_run_config(args, config_path=args.config)
        protocols = _split_list(args.protocol)
        if protocols:
            run = dataclasses.replace(run, protocols=[normalize_protocol(x) for x in protocols])
        tau = getattr(args, "tau", None)
        if tau is not None and args.command == "detect":
            run = dataclasses.replace(run, threshold=ThresholdConfig(mode="fixed", tau=tau))
    return run


def cmd_generate(args: argparse.Namespace) -> int:
    run = _load(args)
    out = Path(args.out) if args.out else run.output_dir
    configure_logging(run.log_level)
    paths = generate_suite(run, out)
    for path in paths:
        print(path)
    return 0


def cmd_run(args: argparse.Namespace) -> int:
    run = _load(args)
    configure_logging(run.log_level, run.output_dir / artifacts.RUN_LOG)
    outcome = run_pipeline(run)
    print_scorecard(outcome.rows)
    print_summary(outcome.summary)
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    run = _load(args)
    configure_logging(run.log_level, run.output_dir / artifacts.RUN_LOG)
    outcome = train_only(run)
    print_summary(outcome.summary)
    return 0


def cmd_detect(args: argparse.Namespace) -> int:
    run = _load(args)
    configure_logging(run.log_level, run.output_dir / artifacts.RUN_LOG)
    outcome = detect_from_checkpoint(run, args.checkpoint)
    print_scorecard(outcome.rows)
    print_summary(outcome.summary)
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    protocols = _split_list(args.protocol) or list(PROTOCOLS)
    with stage("config"):
        protocols = [normalize_protocol(x) for x in protocols]
    configure_logging("INFO")
    rows = evaluate_files(args.labels, args.preds, protocols, tau=args.tau)
    print_scorecard(rows)
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    variants = _split_list(args.variants)
    if not variants:
        raise UsageError("ablate needs --variants, e.g. --variants full,novar")
    run = _load(args)
    configure_logging(run.log_level, run.output_dir / artifacts.RUN_LOG)
    table = run_ablation(run, variants, args.repeats)
    print(table.to_string(index=False))
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    raw = _split_list(args.values)
    if not raw:
        raise UsageError("sweep needs --values, e.g. --values 0.001,0.01,0.1")
    try:
        values = [float(v) for v in raw]
    except ValueError as e:
        raise UsageError(f"sweep values must be numbers: {e}") from e
    run = _load(args)
    configure_logging(run.log_level, run.output_dir / artifacts.RUN_LOG)
    table = run_sweep(run, args.param, values, args.repeats)
    print(table.to_string(index=False))
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    run = _load(args)
    out = run.output_dir
    summary = artifacts.load_summary(out / artifacts.SUMMARY_JSON)
    card = out / artifacts.SCORECARD_JSON
    if not summary and not card.exists():
        raise UsageError(f"no summary.json or scorecard.json in {out}")
    print_summary(summary)
    if card.exists():
        with stage("load"):
            rows = artifacts.load_scorecard(card)
        print_scorecard(rows)
    ablation = summary.get("ablation")
    if ablation:
        print(pd.DataFrame(ablation).to_string(index=False))
    sweep = summary.get("sweep")
    if isinstance(sweep, dict) and sweep.get("rows"):
        print(pd.DataFrame(sweep["rows"]).to_string(index=False))
    return 0


COMMANDS = {
    "generate": cmd_generate,
    "run": cmd_run,
    "train": cmd_train,
    "detect": cmd_detect,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "sweep": cmd_sweep,
    "report": cmd_report,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except UsageError as e:
        print(f"[run] usage error: {e}", file=sys.stderr)
        return 2
    except StageError as e:
        print(f"[run] failed stage={e.stage}: {e}", file=sys.stderr)
        logger.debug("stage failure", exc_info=e.cause)
        return 1


if __name__ == "__main__":
    sys.exit(main())
