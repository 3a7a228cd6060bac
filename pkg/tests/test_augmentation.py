"""View-pair augmentation pipeline."""

import numpy as np
import pytest

from vcl.augmentation import (AugmentConfig, crop_resize, grayscale, hflip,
                              jitter, make_view_pair, transform)

IDENTITY = AugmentConfig(crop_scale=(1.0, 1.0), flip_prob=0.0,
                         grayscale_prob=0.0, jitter_prob=0.0)


def _img(seed, h=16, w=16):
    return np.random.default_rng(seed).uniform(0, 1, (3, h, w)).astype(
        np.float32)


def test_identity_config_reproduces_input():
    x = _img(0)
    v1, v2 = make_view_pair(x, IDENTITY, np.random.default_rng(1))
    assert np.array_equal(v1, x)
    assert np.array_equal(v2, x)


def test_view_pair_deterministic_and_independent():
    x = _img(2)
    cfg = AugmentConfig()
    a1, a2 = make_view_pair(x, cfg, np.random.default_rng(7))
    b1, b2 = make_view_pair(x, cfg, np.random.default_rng(7))
    assert np.array_equal(a1, b1)
    assert np.array_equal(a2, b2)
    # the two views of one call consume separate draws
    assert not np.array_equal(a1, a2)
    c1, _ = make_view_pair(x, cfg, np.random.default_rng(8))
    assert not np.array_equal(a1, c1)


def test_views_stay_in_range_and_shape():
    cfg = AugmentConfig()
    for seed in range(20):
        v1, v2 = make_view_pair(_img(seed + 10), cfg,
                                np.random.default_rng(seed))
        for v in (v1, v2):
            assert v.shape == (3, 16, 16)
            assert v.dtype == np.float32
            assert v.min() >= 0.0 and v.max() <= 1.0
            assert np.isfinite(v).all()


def test_crop_resize_scale_one_is_identity():
    x = _img(3)
    assert np.array_equal(crop_resize(x, 1.0, 0.3, 0.8, (16, 16)), x)
    small = crop_resize(x, 0.25, 0.5, 0.5, (16, 16))
    assert small.shape == (3, 16, 16)


def test_hflip_is_involution():
    x = _img(4)
    assert np.array_equal(hflip(hflip(x)), x)
    assert np.array_equal(hflip(x), x[:, :, ::-1])


def test_grayscale_collapses_channels():
    y = grayscale(_img(5))
    assert np.allclose(y[0], y[1], atol=1e-7)
    assert np.allclose(y[1], y[2], atol=1e-7)


def test_jitter_neutral_parameters():
    x = _img(6)
    y = jitter(x, 1.0, 1.0, 1.0, 1.0)
    assert np.allclose(y, x, atol=1e-6)
    bright = jitter(x, 1.3, 1.0, 1.0, 1.0)
    assert bright.mean() > x.mean()


def test_transform_dispatch():
    x = _img(7)
    y = transform("flip", x, {})
    assert np.array_equal(y, hflip(x))
    with pytest.raises(ValueError):
        transform("solarize", x, {})


def test_vector_inputs_take_vector_chain():
    vec = np.linspace(0.0, 1.0, 32).astype(np.float32)
    v1, v2 = make_view_pair(vec, AugmentConfig(), np.random.default_rng(0))
    assert v1.shape == vec.shape
    assert not np.array_equal(v1, v2)
    w1, w2 = make_view_pair(vec, IDENTITY, np.random.default_rng(0))
    assert np.array_equal(w1, vec)
    assert np.array_equal(w2, vec)


def test_input_validation():
    cfg = AugmentConfig()
    with pytest.raises(ValueError):
        make_view_pair(_img(8, h=8, w=8), cfg, np.random.default_rng(0))
    with pytest.raises(ValueError):
        make_view_pair(_img(9) + 2.0, cfg, np.random.default_rng(0))


def test_config_validation():
    with pytest.raises(ValueError):
        AugmentConfig(crop_scale=(0.0, 1.0))
    with pytest.raises(ValueError):
        AugmentConfig(crop_scale=(0.8, 0.2))
    with pytest.raises(ValueError):
        AugmentConfig(flip_prob=1.5)
    with pytest.raises(ValueError):
        AugmentConfig(brightness=(1.4, 0.6))
    with pytest.raises(ValueError):
        AugmentConfig(crop_out=(0, 16))
