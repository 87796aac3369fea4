import numpy as np
import pytest

from cocaclaw.augment import AugmentConfig, expand_training_set, jitter, scale, view_pair
from cocaclaw.data import WindowBatch


def _batch(n=4, T=8, d=1, seed=0):
    rng = np.random.default_rng(seed)
    spans = np.stack([np.arange(n) * T, np.arange(n) * T + T], axis=1)
    return WindowBatch(rng.normal(size=(n, T, d)), rng.integers(0, 2, size=n), spans, "obj")


def test_jitter_zero_sigma_is_identity():
    b = _batch()
    out = jitter(b, 0.0, np.random.default_rng(1))
    np.testing.assert_array_equal(out.windows, b.windows)


def test_jitter_noise_std():
    b = _batch(n=1000, T=100)
    out = jitter(b, 0.35, np.random.default_rng(2))
    assert abs((out.windows - b.windows).std() - 0.35) < 0.02 * 0.35


def test_jitter_seeded_determinism():
    b = _batch()
    one = jitter(b, 0.35, np.random.default_rng(7))
    two = jitter(b, 0.35, np.random.default_rng(7))
    np.testing.assert_array_equal(one.windows, two.windows)


def test_scale_zero_sigma_is_identity():
    b = _batch()
    np.testing.assert_array_equal(scale(b, 0.0, np.random.default_rng(1)).windows, b.windows)


def test_scale_uses_one_factor_per_window():
    b = _batch(n=5, T=6, d=2)
    b.windows[:] = np.abs(b.windows) + 0.5
    out = scale(b, 0.8, np.random.default_rng(3))
    ratios = out.windows / b.windows
    for r in ratios:
        np.testing.assert_allclose(r, r.flat[0], rtol=1e-12)

    factors = np.random.default_rng(3).normal(1.0, 0.8, size=5)
    np.testing.assert_allclose(ratios[:, 0, 0], factors, rtol=1e-12)


def test_scale_factor_mean():
    b = WindowBatch(np.ones((100_000, 2, 1)), np.zeros(100_000), np.zeros((100_000, 2)), "ones")
    out = scale(b, 0.8, np.random.default_rng(4))
    assert abs(out.windows[:, 0, 0].mean() - 1.0) < 0.02


def test_negative_sigma_rejected():
    with pytest.raises(ValueError):
        jitter(_batch(), -0.1, np.random.default_rng(0))
    with pytest.raises(ValueError):
        scale(_batch(), -0.1, np.random.default_rng(0))
    with pytest.raises(ValueError):
        AugmentConfig(jitter_ratio=-1.0)


def test_expand_training_set_triples_and_keeps_labels():
    b = _batch(n=4)
    out = expand_training_set(b, AugmentConfig(), np.random.default_rng(0))
    assert len(out) == 12
    np.testing.assert_array_equal(out.windows[:4], b.windows)
    np.testing.assert_array_equal(out.window_labels, np.tile(b.window_labels, 3))
    np.testing.assert_array_equal(out.spans, np.tile(b.spans, (3, 1)))


def test_expand_training_set_fresh_noise_per_call():
    b = _batch(n=4)
    rng = np.random.default_rng(0)
    first = expand_training_set(b, AugmentConfig(), rng)
    second = expand_training_set(b, AugmentConfig(), rng)
    assert not np.array_equal(first.windows[4:], second.windows[4:])


def test_expand_training_set_disabled_returns_input():
    b = _batch(n=4)
    out = expand_training_set(b, AugmentConfig(enabled=False), np.random.default_rng(0))
    assert out is b


def test_view_pair_shapes_and_labels():
    b = _batch(n=3)
    jittered, scaled = view_pair(b, AugmentConfig(), np.random.default_rng(0))
    assert jittered.windows.shape == scaled.windows.shape == b.windows.shape
    np.testing.assert_array_equal(jittered.window_labels, b.window_labels)
    np.testing.assert_array_equal(scaled.window_labels, b.window_labels)
