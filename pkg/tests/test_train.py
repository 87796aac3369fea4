import numpy as np
import pytest
import torch

from cocaclaw.augment import AugmentConfig
from cocaclaw.data import WindowBatch, prepare_windows
from cocaclaw.errors import ConfigError, DimensionMismatchError, EmptyBatchError
from cocaclaw.model import ModelConfig
from cocaclaw.objective import ObjectiveConfig
from cocaclaw.train import (
    EpochRecord,
    TrainConfig,
    TrainHistory,
    collapse_probe,
    full_set_center,
    train,
    train_windows,
)


@pytest.fixture
def pool(sine_object):
    return prepare_windows([sine_object], 16, "train")[0].batch


def _run(pool, model_cfg, **overrides):
    obj = overrides.pop("objective", ObjectiveConfig())
    aug = overrides.pop("augment", AugmentConfig())
    cfg = TrainConfig(**{"batch_size": 16, "max_epochs": 4, "center_freeze_epoch": 2, **overrides})
    return train_windows(pool, model_cfg, obj, cfg, aug)


def _record(epoch, loss, proj_std):
    return EpochRecord(
        epoch=epoch,
        loss=loss,
        invariance=loss,
        variance_q=0.0,
        variance_q_prime=0.0,
        boundary=None,
        sim_q_ce=1.0,
        sim_qp_ce=1.0,
        sim_q_qp=1.0,
        proj_std=proj_std,
        center_hash="c",
        center_frozen=True,
        best_loss=None,
        batches=1,
    )


# -------------------------
# config
# -------------------------
@pytest.mark.parametrize(
    "kw",
    [
        {"center_freeze_epoch": 0},
        {"early_stop_patience": 0},
        {"batch_size": 1},
        {"max_epochs": 0},
        {"learning_rate": 0.0},
    ],
)
def test_train_config_validation(kw):
    with pytest.raises(ConfigError):
        TrainConfig(**kw)


def test_learning_rate_outside_usual_range_only_warns(caplog):
    with caplog.at_level("WARNING", logger="cocaclaw.train"):
        cfg = TrainConfig(learning_rate=1e-2)
    assert cfg.learning_rate == 1e-2
    assert "outside the usual range" in caplog.text


# -------------------------
# loop
# -------------------------
def test_history_center_and_freeze(pool, small_model_cfg):
    result = _run(pool, small_model_cfg)
    hist = result.history
    assert len(hist) == 4
    assert result.center.frozen
    assert not result.model.training

    assert [r.center_frozen for r in hist.records] == [False, True, True, True]
    frozen_hashes = {r.center_hash for r in hist.records[1:]}
    assert frozen_hashes == {result.center.digest()}

    # bookkeeping starts with the first epoch run entirely on the frozen center
    assert hist.records[0].best_loss is None
    assert hist.records[1].best_loss is None
    best = [r.best_loss for r in hist.records[2:]]
    assert all(b is not None for b in best)
    assert all(later <= earlier for earlier, later in zip(best, best[1:]))
    assert hist.best_epoch in (2, 3)
    for r in hist.records:
        assert np.isfinite(r.loss)
        assert r.batches == 4  # 20 windows x 3 after augmentation, batch 16 -> 4 batches


def test_single_epoch_with_freeze_after_first(pool, small_model_cfg):
    result = _run(pool, small_model_cfg, max_epochs=1, center_freeze_epoch=1)
    assert len(result.history) == 1
    assert result.history.records[0].center_frozen
    assert result.history.best_epoch is None
    assert result.center.frozen


def test_freeze_epoch_beyond_training_freezes_at_end(pool, small_model_cfg):
    result = _run(pool, small_model_cfg, max_epochs=2, center_freeze_epoch=5)
    assert not any(r.center_frozen for r in result.history.records)
    assert result.center.frozen
    expected = full_set_center(result.model, pool, "full")
    torch.testing.assert_close(expected.values, result.center.values)


def test_training_is_deterministic_for_a_seed(pool, small_model_cfg):
    a = _run(pool, small_model_cfg, seed=5)
    b = _run(pool, small_model_cfg, seed=5)
    assert a.history.losses() == b.history.losses()
    assert torch.equal(a.center.values, b.center.values)
    for (k, va), (_, vb) in zip(a.model.state_dict().items(), b.model.state_dict().items()):
        assert torch.equal(va, vb), k

    c = _run(pool, small_model_cfg, seed=6)
    assert c.history.losses() != a.history.losses()


def test_augmentation_noise_follows_its_own_seed(pool, small_model_cfg):
    a = _run(pool, small_model_cfg, seed=5, augment=AugmentConfig(seed=1))
    b = _run(pool, small_model_cfg, seed=5, augment=AugmentConfig(seed=1))
    assert a.history.losses() == b.history.losses()
    c = _run(pool, small_model_cfg, seed=5, augment=AugmentConfig(seed=2))
    assert c.history.losses() != a.history.losses()


def test_early_stopping_with_impossible_min_delta(pool, small_model_cfg):
    result = _run(pool, small_model_cfg, max_epochs=10, early_stop_patience=2, min_delta=1e9)
    hist = result.history
    assert hist.stopped_early
    # epoch 2 sets the first best; epochs 3 and 4 are stale
    assert len(hist) == 5
    assert hist.best_epoch == 2


@pytest.mark.parametrize("variant", ["nooc", "nocl", "novar", "coca_vi"])
def test_variants_train(pool, small_model_cfg, variant):
    result = _run(pool, small_model_cfg, objective=ObjectiveConfig(variant=variant), max_epochs=3)
    assert len(result.history) == 3
    assert all(np.isfinite(r.loss) for r in result.history.records)
    if variant == "coca_vi":
        # views are drawn per batch from the original windows
        assert result.history.records[0].batches == 2


def test_soft_mode_records_boundary(pool, small_model_cfg):
    result = _run(pool, small_model_cfg, objective=ObjectiveConfig(mode="soft", nu=0.1), max_epochs=2)
    assert all(r.boundary is not None for r in result.history.records)


def test_train_without_augmentation(pool, small_model_cfg):
    result = _run(pool, small_model_cfg, augment=AugmentConfig(enabled=False), max_epochs=2)
    assert result.history.records[0].batches == 2


def test_train_from_objects(sine_object, small_model_cfg):
    cfg = TrainConfig(batch_size=16, max_epochs=2, center_freeze_epoch=1)
    result = train([sine_object], small_model_cfg, ObjectiveConfig(), cfg, AugmentConfig(), max_workers=2)
    assert len(result.history) == 2


# -------------------------
# errors
# -------------------------
def test_train_errors(pool, small_model_cfg):
    with pytest.raises(EmptyBatchError):
        _run(pool.take(np.array([0])), small_model_cfg)
    with pytest.raises(DimensionMismatchError):
        _run(pool, ModelConfig(window_length=32, repre_channels=8, hidden_size=8, project_channels=8))
    with pytest.raises(ConfigError):
        _run(pool, small_model_cfg, objective=ObjectiveConfig(variant="coca_vi"), augment=AugmentConfig(enabled=False))


def test_two_window_pool_trains(small_model_cfg):
    rng = np.random.default_rng(0)
    pool = WindowBatch(rng.normal(size=(2, 16, 1)), [0, 0], [[0, 16], [16, 32]], "two")
    result = _run(pool, small_model_cfg, augment=AugmentConfig(enabled=False), max_epochs=1, center_freeze_epoch=1)
    assert result.history.records[0].batches == 1


# -------------------------
# collapse probe
# -------------------------
def test_collapse_probe_flags_collapse():
    hist = TrainHistory(records=[_record(0, 0.5, 0.3), _record(1, 1e-5, 1e-4)])
    report = collapse_probe(hist, gamma=1.0)
    assert report.collapsed
    assert report.status == "collapsed"
    assert report.std_threshold == pytest.approx(0.01)


def test_collapse_probe_healthy_and_insufficient():
    healthy = collapse_probe(TrainHistory(records=[_record(0, 0.5, 0.3), _record(1, 0.2, 0.2)]))
    assert healthy.status == "healthy"
    assert not healthy.collapsed

    # low loss alone is not collapse
    assert not collapse_probe(TrainHistory(records=[_record(0, 0.5, 0.3), _record(1, 1e-5, 0.2)])).collapsed

    short = collapse_probe(TrainHistory(records=[_record(0, 1e-5, 1e-4)]))
    assert short.status == "insufficient_data"
    assert not short.collapsed
    assert short.final_loss == pytest.approx(1e-5)
    assert collapse_probe(TrainHistory()).final_loss is None


# -------------------------
# longer runs
# -------------------------
@pytest.mark.slow
def test_loss_decreases_on_periodic_series(pool, small_model_cfg):
    result = _run(pool, small_model_cfg, max_epochs=30, center_freeze_epoch=5, early_stop_patience=30, learning_rate=5e-4)
    losses = result.history.losses()
    assert min(losses[5:]) < losses[0]
    assert result.history.best_epoch is not None
