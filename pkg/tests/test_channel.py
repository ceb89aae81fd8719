import numpy as np
import pytest

from agfsim.channel import apply_channel, crandn, draw_channel, noise_variance
from agfsim.waveform import build_pool, build_preamble_pool, make_transmission


def test_identity_channel_noiseless():
    pool = build_pool()
    tx = make_transmission(0, np.random.default_rng(0).integers(0, 2, 68), 5, pool)
    grid = apply_channel([tx], [np.array([1.0])], None)
    assert grid.y.shape == (1, 4, 167)
    assert np.array_equal(grid.y[0], tx.chips)
    assert grid.noise_var == 0.0


def test_colliding_preambles_sum_channels():
    P = build_preamble_pool(64)[3]
    rng = np.random.default_rng(1)
    h1, h2 = draw_channel(2, rng), draw_channel(2, rng)
    grid = apply_channel([P, P], [h1, h2], None)
    assert np.allclose(grid.y[0], P * h1[0] + P * h2[0])
    assert np.allclose(grid.y[1], P * h1[1] + P * h2[1])


def test_noise_calibration_at_0db():
    rng = np.random.default_rng(2)
    grid = apply_channel([], [], 0.0, rng, m=1, shape=(1, 100_000))
    v = np.mean(np.abs(grid.y) ** 2)
    # |n|^2 ~ Exp(1): sd of the sample mean is 1/sqrt(n)
    assert abs(v - 1.0) < 3 / np.sqrt(100_000)
    assert grid.noise_var == 1.0


def test_noise_variance_definition():
    assert noise_variance(10.0) == pytest.approx(0.1)
    assert noise_variance(-3.0) == pytest.approx(10 ** 0.3)


def test_draw_channel_moments():
    rng = np.random.default_rng(3)
    H = np.stack([draw_channel(2, rng) for _ in range(100_000)])
    assert np.mean(np.sum(np.abs(H) ** 2, axis=1)) == pytest.approx(2.0, abs=0.05)
    assert np.var(H.real) == pytest.approx(0.5, abs=0.01)
    assert np.var(H.imag) == pytest.approx(0.5, abs=0.01)


def test_draw_channel_reproducible():
    a = draw_channel(4, np.random.default_rng(7))
    b = draw_channel(4, np.random.default_rng(7))
    assert np.array_equal(a, b)


def test_draw_channel_rejects_zero_antennas():
    with pytest.raises(ValueError):
        draw_channel(0, np.random.default_rng(0))


def test_superposition_linearity():
    pool = build_pool()
    rng = np.random.default_rng(4)
    txs = [make_transmission(k, rng.integers(0, 2, 68), rng.integers(64), pool) for k in range(5)]
    H = [draw_channel(2, rng) for _ in range(5)]
    both = apply_channel(txs, H, None).y
    a = apply_channel(txs[:2], H[:2], None).y
    b = apply_channel(txs[2:], H[2:], None).y
    assert np.allclose(both, a + b)


def test_noise_whiteness_across_antennas():
    rng = np.random.default_rng(5)
    y = apply_channel([], [], 0.0, rng, m=2, shape=(1, 100_000)).y.reshape(2, -1)
    rho = np.abs(np.vdot(y[0], y[1])) / np.sqrt(np.vdot(y[0], y[0]).real * np.vdot(y[1], y[1]).real)
    assert rho < 0.02


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        apply_channel([np.ones((4, 167)), np.ones((4, 100))], [np.ones(2), np.ones(2)], None)
    with pytest.raises(ValueError):
        apply_channel([np.ones((4, 167))], [np.ones(2), np.ones(2)], None)
    with pytest.raises(ValueError):
        apply_channel([np.ones((4, 167))] * 2, [np.ones(2), np.ones(3)], None)


def test_unit_noise_reuse_scales_with_snr():
    rng = np.random.default_rng(6)
    n = crandn(rng, (2, 4, 10))
    g0 = apply_channel([], [], 0.0, m=2, shape=(4, 10), unit_noise=n)
    g10 = apply_channel([], [], 10.0, m=2, shape=(4, 10), unit_noise=n)
    assert np.allclose(g10.y, g0.y / np.sqrt(10))


def test_power_offset_hook():
    x = np.ones((4, 3))
    g = apply_channel([x], [np.ones(1)], None, power_offsets_db=[20.0])
    assert np.allclose(g.y, 10.0)
