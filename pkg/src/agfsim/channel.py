"""Flat Rayleigh block fading and calibrated AWGN."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class ReceiveGrid:
    """Per-antenna observations ``y`` of shape ``(m, L, T)``."""

    y: np.ndarray
    noise_var: float

    @property
    def n_antennas(self) -> int:
        return self.y.shape[0]

    def copy(self) -> "ReceiveGrid":
        return ReceiveGrid(self.y.copy(), self.noise_var)


def crandn(rng: np.random.Generator, shape) -> np.ndarray:
    """CN(0, 1) samples."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def draw_channel(m: int, rng: np.random.Generator) -> np.ndarray:
    """One UE's spatial channel: ``m`` i.i.d. CN(0, 1) taps."""
    if m < 1:
        raise ValueError("need at least one receive antenna")
    return crandn(rng, m)


def noise_variance(snr_db: float) -> float:
    """Per-RE noise variance for unit-energy-per-RE transmissions."""
    return float(10.0 ** (-snr_db / 10.0))


def superpose(chips, channels, power_offsets_db=None) -> np.ndarray:
    """Noiseless ``sum_k h_{k,a} x_k`` for every antenna ``a``; returns ``(m, *chip_shape)``."""
    chips = [np.asarray(x) for x in chips]
    channels = [np.asarray(h) for h in channels]
    if len(chips) != len(channels):
        raise ValueError("one channel vector per transmission is required")
    if not chips:
        raise ValueError("nothing to superpose")
    shape = chips[0].shape
    m = channels[0].size
    if any(x.shape != shape for x in chips) or any(h.size != m for h in channels):
        raise ValueError("chip grids or channel vectors differ in size")
    X = np.stack(chips)
    H = np.stack(channels)  # (K, m)
    if power_offsets_db is not None:
        H = H * (10.0 ** (np.asarray(power_offsets_db, dtype=float) / 20.0))[:, None]
    return np.tensordot(H.T, X, axes=1)


def apply_channel(
    transmissions,
    channels,
    snr_db: float | None,
    rng: np.random.Generator | None = None,
    *,
    m: int | None = None,
    shape: tuple[int, int] | None = None,
    unit_noise: np.ndarray | None = None,
    power_offsets_db=None,
) -> ReceiveGrid:
    """Superpose faded transmissions on every antenna and add AWGN.

    Parameters
    ----------
    transmissions : sequence of UeTransmission or of ``(L, T)`` chip arrays
    channels : sequence of length-``m`` complex vectors, one per transmission
    snr_db : float or None
        Data-RE SNR; ``sigma^2 = 10**(-snr_db/10)``. ``None`` means noiseless.
    rng : Generator, optional
        Source of noise when ``unit_noise`` is not given.
    m, shape : int, tuple
        Required only when ``transmissions`` is empty.
    unit_noise : ndarray, optional
        Pre-drawn CN(0, 1) noise of shape ``(m, L, T)``, scaled by ``sigma``.
        Lets a caller reuse one noise realisation across SNR points.
    power_offsets_db : sequence of float, optional
        Per-UE receive power offsets (default 0 dB for all).
    """
    chips = [getattr(t, "chips", t) for t in transmissions]
    if chips:
        y = superpose(chips, channels, power_offsets_db)
    else:
        if m is None or shape is None:
            raise ValueError("m and shape are needed when there are no transmissions")
        y = np.zeros((m,) + tuple(shape), dtype=complex)
    if snr_db is None:
        return ReceiveGrid(y, 0.0)
    var = noise_variance(snr_db)
    if unit_noise is None:
        if rng is None:
            raise ValueError("rng or unit_noise is required for a noisy channel")
        unit_noise = crandn(rng, y.shape)
    elif unit_noise.shape != y.shape:
        raise ValueError(f"noise shape {unit_noise.shape} != grid shape {y.shape}")
    return ReceiveGrid(y + np.sqrt(var) * unit_noise, var)
