import dataclasses

import numpy as np
import pandas as pd
import pytest

from cocaclaw import artifacts
from cocaclaw.data import TimeSeriesObject
from cocaclaw.detect import ThresholdConfig
from cocaclaw.errors import ConfigError, DimensionMismatchError, UsageError
from cocaclaw.model import ModelConfig
from cocaclaw.pipeline import (
    StageError,
    detect_from_checkpoint,
    evaluate_files,
    fit_model_config,
    generate_suite,
    load_objects,
    run_ablation,
    run_pipeline,
    run_sweep,
    stage,
    train_only,
)
from cocaclaw.runtime_config import DataConfig, load_run_config, with_variant

LABELS = [0, 1, 1, 0, 0, 1, 1, 1, 0, 0]
PREDS = [0, 1, 0, 0, 1, 0, 0, 0, 0, 0]


def _all_f1(rows, protocol):
    return next(r.f1 for r in rows if r.object_id == "ALL" and r.protocol == protocol)


# -------------------------
# stages
# -------------------------
def test_stage_wraps_errors_and_passes_usage_errors():
    with pytest.raises(StageError) as err:
        with stage("train"):
            raise ValueError("boom")
    assert err.value.stage == "train"
    assert str(err.value) == "ValueError: boom"
    assert isinstance(err.value.cause, ValueError)

    with pytest.raises(UsageError):
        with stage("load"):
            raise UsageError("bad flag")


def test_fit_model_config_follows_data():
    a = TimeSeriesObject(id="a", values=np.zeros((8, 3)), labels=np.zeros(8), train_end=4)
    b = TimeSeriesObject(id="b", values=np.zeros((8, 2)), labels=np.zeros(8), train_end=4)
    assert fit_model_config(ModelConfig(window_length=8), [a]).in_channels == 3
    with pytest.raises(DimensionMismatchError):
        fit_model_config(ModelConfig(window_length=8), [a, b])


def test_load_objects_synth_uses_seed(tiny_run):
    first = load_objects(tiny_run)
    again = load_objects(tiny_run)
    other = load_objects(with_variant(tiny_run, "full", seed=1))
    assert [o.id for o in first] == ["sine_0", "ar1_0"]
    np.testing.assert_array_equal(first[1].values, again[1].values)
    assert not np.array_equal(first[1].values, other[1].values)


# -------------------------
# end to end
# -------------------------
def test_run_pipeline_writes_every_artifact(tiny_run):
    outcome = run_pipeline(tiny_run)
    out = tiny_run.output_dir
    for name in (
        artifacts.CONFIG_ECHO,
        artifacts.CHECKPOINT,
        artifacts.HISTORY_LOG,
        artifacts.SCORES_CSV,
        artifacts.SCORECARD_JSON,
        artifacts.SUMMARY_JSON,
    ):
        assert (out / name).exists(), name

    protocols = {r.protocol for r in outcome.rows if r.object_id == "ALL"}
    assert protocols == {"PW", "PA", "RPA"}
    assert outcome.f1_all("RPA") == _all_f1(outcome.rows, "RPA")

    scores = pd.read_csv(out / artifacts.SCORES_CSV)
    assert len(scores) == 16  # 2 objects x 8 test windows
    assert scores["start"].min() >= 64  # absolute positions inside the test split
    assert scores["score"].between(0.0, 4.0).all()

    summary = artifacts.load_summary(out / artifacts.SUMMARY_JSON)
    assert summary["seed"] == 0
    assert summary["variant"] == "full"
    assert summary["threshold"]["mode"] == "search"
    assert set(summary["f1"]) == {"PW", "PA", "RPA"}

    history = artifacts.read_history(out / artifacts.HISTORY_LOG)
    assert [h["record"] for h in history] == ["epoch"] * 3 + ["summary"]
    assert "[run]" in (out / artifacts.CONFIG_ECHO).read_text(encoding="utf-8")


def test_run_pipeline_without_writing(tiny_run):
    outcome = run_pipeline(tiny_run, write=False)
    assert not tiny_run.output_dir.exists()
    assert outcome.detect is not None
    assert len(outcome.detect.detections) == 2


def test_echo_reproduces_the_run(tiny_run, tmp_path):
    first = run_pipeline(tiny_run)
    echo = tiny_run.output_dir / artifacts.CONFIG_ECHO
    _, back = load_run_config(config_path=echo)
    back = dataclasses.replace(back, output_dir=tmp_path / "again")
    second = run_pipeline(back)
    a = (tiny_run.output_dir / artifacts.SCORES_CSV).read_bytes()
    b = (back.output_dir / artifacts.SCORES_CSV).read_bytes()
    assert a == b
    assert first.summary["center_hash"] == second.summary["center_hash"]


def test_train_then_detect_accumulates_summary(tiny_run):
    trained = train_only(tiny_run)
    assert (tiny_run.output_dir / artifacts.CHECKPOINT).exists()
    assert not (tiny_run.output_dir / artifacts.SCORES_CSV).exists()

    detected = detect_from_checkpoint(tiny_run)
    summary = artifacts.load_summary(tiny_run.output_dir / artifacts.SUMMARY_JSON)
    assert summary["epochs"] == 3
    assert summary["center_hash"] == trained.summary["center_hash"]
    assert "threshold" in summary
    assert (tiny_run.output_dir / artifacts.SCORES_CSV).exists()
    assert {r.protocol for r in detected.rows} == {"PW", "PA", "RPA"}


def test_detect_uses_checkpoint_variant_and_fixed_tau(tiny_run):
    train_only(with_variant(tiny_run, "nocl"))
    fixed = dataclasses.replace(tiny_run, threshold=ThresholdConfig(mode="fixed", tau=-1.0))
    outcome = detect_from_checkpoint(fixed)
    assert outcome.detect.choice.tau == -1.0
    assert all(d.window_predictions.all() for d in outcome.detect.detections)


def test_detect_without_checkpoint_fails_in_load_stage(tiny_run):
    with pytest.raises(StageError) as err:
        detect_from_checkpoint(tiny_run)
    assert err.value.stage == "load"


def test_detect_rejects_data_of_another_width_before_scoring(tiny_run):
    train_only(tiny_run)
    wide = dataclasses.replace(tiny_run, synth=dataclasses.replace(tiny_run.synth, d=2))
    with pytest.raises(StageError) as err:
        detect_from_checkpoint(wide)
    assert err.value.stage == "load"
    assert isinstance(err.value.cause, ConfigError)
    assert "d=1" in str(err.value) and "d=2" in str(err.value)
    assert not (tiny_run.output_dir / artifacts.SCORES_CSV).exists()


def test_generated_csv_suite_runs_through_csv_source(tiny_run, tmp_path):
    paths = generate_suite(tiny_run, tmp_path / "suite")
    assert [p.name for p in paths] == ["sine_0.csv", "ar1_0.csv"]
    csv_run = dataclasses.replace(tiny_run, data=DataConfig(source="csv", paths=[str(p) for p in paths]))
    objects = load_objects(csv_run)
    assert [o.id for o in objects] == ["sine_0", "ar1_0"]
    assert all(o.train_end == 64 for o in objects)
    outcome = run_pipeline(csv_run, write=False)
    assert outcome.f1_all("RPA") is not None


def test_threshold_search_without_labels_fails(tiny_run, tmp_path):
    paths = generate_suite(tiny_run, tmp_path / "suite")
    for p in paths:
        frame = pd.read_csv(p)
        frame.drop(columns=["label"]).to_csv(p, index=False)
    unlabelled = dataclasses.replace(tiny_run, data=DataConfig(source="csv", paths=[str(p) for p in paths]))
    with pytest.raises(StageError) as err:
        run_pipeline(unlabelled, write=False)
    assert err.value.stage == "detect"
    assert isinstance(err.value.cause, ConfigError)

    max_mode = dataclasses.replace(unlabelled, threshold=ThresholdConfig(mode="max_score"))
    train_only(max_mode)
    outcome = detect_from_checkpoint(max_mode)
    assert outcome.rows == []
    assert sum(int(d.window_predictions.sum()) for d in outcome.detect.detections) >= 1


# -------------------------
# standalone eval
# -------------------------
def test_evaluate_files_point_predictions(tmp_path):
    pd.DataFrame({"label": LABELS}).to_csv(tmp_path / "labels.csv", index=False)
    pd.DataFrame({"predicted": PREDS}).to_csv(tmp_path / "preds.csv", index=False)
    rows = evaluate_files(tmp_path / "labels.csv", tmp_path / "preds.csv", ["PW", "PA", "RPA"])
    assert _all_f1(rows, "PW") == pytest.approx(2 / 7)
    assert _all_f1(rows, "PA") == pytest.approx(0.5)
    assert _all_f1(rows, "RPA") == pytest.approx(0.5)

    pd.DataFrame({"predicted": LABELS}).to_csv(tmp_path / "same.csv", index=False)
    assert _all_f1(evaluate_files(tmp_path / "labels.csv", tmp_path / "same.csv", ["RPA"]), "RPA") == 1.0


def test_evaluate_files_scores_need_tau(tmp_path):
    pd.DataFrame({"label": LABELS}).to_csv(tmp_path / "labels.csv", index=False)
    pd.DataFrame({"score": np.asarray(PREDS) * 2.0 + 0.5}).to_csv(tmp_path / "scores.csv", index=False)
    with pytest.raises(UsageError):
        evaluate_files(tmp_path / "labels.csv", tmp_path / "scores.csv", ["PW"])
    rows = evaluate_files(tmp_path / "labels.csv", tmp_path / "scores.csv", ["PW"], tau=1.0)
    assert _all_f1(rows, "PW") == pytest.approx(2 / 7)


def test_evaluate_files_windowed_scores(tmp_path):
    pd.DataFrame({"label": [0, 0, 1, 1, 0, 0]}).to_csv(tmp_path / "labels.csv", index=False)
    pd.DataFrame({"start": [0, 2, 4], "end": [2, 4, 6], "score": [0.1, 2.0, 0.2]}).to_csv(
        tmp_path / "windows.csv", index=False
    )
    rows = evaluate_files(tmp_path / "labels.csv", tmp_path / "windows.csv", ["PW"], tau=1.0)
    assert _all_f1(rows, "PW") == 1.0


def test_evaluate_files_errors(tmp_path):
    pd.DataFrame({"label": LABELS}).to_csv(tmp_path / "labels.csv", index=False)
    pd.DataFrame({"predicted": PREDS[:-1]}).to_csv(tmp_path / "short.csv", index=False)
    with pytest.raises(StageError):
        evaluate_files(tmp_path / "labels.csv", tmp_path / "short.csv", ["PW"])
    with pytest.raises(UsageError):
        evaluate_files(tmp_path / "missing.csv", tmp_path / "short.csv", ["PW"])
    pd.DataFrame({"other": PREDS}).to_csv(tmp_path / "other.csv", index=False)
    with pytest.raises(UsageError):
        evaluate_files(tmp_path / "labels.csv", tmp_path / "other.csv", ["PW"])


# -------------------------
# ablation
# -------------------------
def test_ablation_table(tiny_run):
    table = run_ablation(tiny_run, ["full", "NoVar"], repeats=2)
    assert table["variant"].tolist() == ["full", "novar"]
    assert table["repeats"].tolist() == [2, 2]
    assert list(table.columns) == ["variant", "repeats", "rpa_f1_mean", "rpa_f1_std", "rpa_f1", "collapsed_runs"]
    assert table["rpa_f1"].str.contains("±").all()
    assert (tiny_run.output_dir / artifacts.ABLATION_CSV).exists()
    summary = artifacts.load_summary(tiny_run.output_dir / artifacts.SUMMARY_JSON)
    assert [r["variant"] for r in summary["ablation"]] == ["full", "novar"]
    assert not (tiny_run.output_dir / artifacts.CHECKPOINT).exists()


def test_ablation_errors(tiny_run):
    with pytest.raises(UsageError):
        run_ablation(tiny_run, [])
    with pytest.raises(StageError) as err:
        run_ablation(tiny_run, ["full", "bogus"])
    assert err.value.stage == "config"


# -------------------------
# sweep
# -------------------------
def test_sweep_nu_table(tiny_run):
    table = run_sweep(tiny_run, "nu", [0.05, 0.2], repeats=1)
    assert list(table.columns) == [
        "param",
        "value",
        "repeats",
        "rpa_f1_mean",
        "rpa_f1_std",
        "rpa_f1",
        "collapsed_runs",
    ]
    assert table["value"].tolist() == [0.05, 0.2]
    assert (table["param"] == "nu").all()
    written = pd.read_csv(tiny_run.output_dir / artifacts.sweep_csv("nu"))
    assert written["value"].tolist() == [0.05, 0.2]
    summary = artifacts.load_summary(tiny_run.output_dir / artifacts.SUMMARY_JSON)
    assert summary["sweep"]["param"] == "nu"
    assert [r["value"] for r in summary["sweep"]["rows"]] == [0.05, 0.2]


def test_sweep_center_freeze_epoch_table(tiny_run):
    table = run_sweep(tiny_run, "center_freeze_epoch", [1, 3], repeats=1)
    assert table["value"].tolist() == [1.0, 3.0]
    assert (tiny_run.output_dir / artifacts.sweep_csv("center_freeze_epoch")).exists()


def test_sweep_errors(tiny_run):
    with pytest.raises(UsageError):
        run_sweep(tiny_run, "learning_rate", [0.1])
    with pytest.raises(UsageError):
        run_sweep(tiny_run, "nu", [])
    with pytest.raises(StageError) as err:
        run_sweep(tiny_run, "nu", [0.1, 1.5])
    assert err.value.stage == "config"
    with pytest.raises(StageError) as err:
        run_sweep(tiny_run, "center_freeze_epoch", [2.5])
    assert err.value.stage == "config"
    # soft boundary needs an anomaly score
    with pytest.raises(StageError):
        run_sweep(with_variant(tiny_run, "nocl"), "nu", [0.1])
    assert not (tiny_run.output_dir / artifacts.sweep_csv("nu")).exists()


# -------------------------
# desk-scale behavior on the standard suite
# -------------------------
def _toy_run(project_root, tmp_path, variant="full", seed=0):
    from argparse import Namespace

    _, run = load_run_config(
        Namespace(variant=variant, seed=seed, out=str(tmp_path / f"{variant}_{seed}")),
        config_path=project_root / "conf" / "toy.ini",
        project_root=project_root,
    )
    return run


@pytest.mark.slow
def test_scores_csv_is_byte_identical_across_runs(project_root, tmp_path):
    run = _toy_run(project_root, tmp_path)
    run_pipeline(run)
    first = (run.output_dir / artifacts.SCORES_CSV).read_bytes()
    run_pipeline(run)
    assert (run.output_dir / artifacts.SCORES_CSV).read_bytes() == first


@pytest.mark.slow
def test_full_model_converges_toward_the_center(project_root, tmp_path):
    outcome = run_pipeline(_toy_run(project_root, tmp_path), write=False)
    last = outcome.train.history.records[-1]
    assert last.sim_q_ce > 0.9
    assert last.sim_qp_ce > 0.9
    assert last.sim_q_qp > 0.9
    assert not outcome.collapse.collapsed


@pytest.mark.slow
def test_detection_quality_over_seeds(project_root, tmp_path):
    scores = [
        run_pipeline(_toy_run(project_root, tmp_path, seed=s), write=False).f1_all("RPA") for s in range(5)
    ]
    assert np.mean(scores) >= 0.8


@pytest.mark.slow
def test_novar_collapses_across_seeds_and_full_never_does(project_root, tmp_path):
    def collapsed(variant, seed):
        return run_pipeline(_toy_run(project_root, tmp_path, variant, seed), write=False).collapse.collapsed

    assert sum(collapsed("novar", s) for s in range(10)) >= 8
    assert sum(collapsed("full", s) for s in range(10)) == 0


@pytest.mark.slow
def test_ablation_ranks_full_above_novar_and_nooc(project_root, tmp_path):
    table = run_ablation(_toy_run(project_root, tmp_path), ["full", "novar", "nooc"], repeats=5).set_index("variant")
    assert table.loc["novar", "rpa_f1_mean"] < table.loc["full", "rpa_f1_mean"]
    assert table.loc["nooc", "rpa_f1_mean"] < table.loc["full", "rpa_f1_mean"]
