"""Closed-form self-checks, run by ``agf-sim verify``."""

from __future__ import annotations

import numpy as np

from .bsc import builtin_set, combine, csc_weights
from .channel import apply_channel, crandn
from .fec import crc_attach, crc_check, fec_decode_batch, fec_encode
from .mud import MudConfig, estimate_covariance, mmse_despreader, mmse_metric, run_mud
from .waveform import build_pool, make_transmission, modulate_and_spread


def check_pair_separation(rng) -> bool:
    """Two UEs on one code, channels [1, 1] and [1, -1]: sum/difference combining isolates each."""
    pool = build_pool()
    c = pool[0]
    s1, s2 = 1 - 2 * rng.integers(0, 2, 167), 1 - 2 * rng.integers(0, 2, 167)
    y = np.stack([np.outer(c, s1 + s2), np.outer(c, s1 - s2)])
    z1 = combine(y, [1, 1])
    z2 = combine(y, [1, -1])
    return bool(np.abs(z1 - 2 * np.outer(c, s1)).max() < 1e-10 and np.abs(z2 - 2 * np.outer(c, s2)).max() < 1e-10)


def check_metric_closed_form(rng) -> bool:
    pool = build_pool()
    c = pool[0]
    ok = True
    for _ in range(20):
        p, nv = rng.uniform(0.1, 10), rng.uniform(0.05, 5)
        R = p * np.outer(c, c.conj()) + nv * np.eye(4)
        ok &= abs(mmse_metric(R, c[None])[0] - 1 / (nv + p)) < 1e-9
        q = np.array([c[1], -c[0], c[3], -c[2]]).conj()  # orthogonal to c
        q /= np.linalg.norm(q)
        ok &= abs(mmse_metric(R, q[None])[0] - 1 / nv) < 1e-9
    return bool(ok)


def check_despreader_unbiased(rng) -> bool:
    pool = build_pool()
    for _ in range(20):
        A = crandn(rng, (4, 8))
        R = A @ A.conj().T / 8 + 1e-3 * np.eye(4)
        for c in pool.codes:
            if abs(np.vdot(mmse_despreader(R, c), c) - 1) > 1e-9:
                return False
    return True


def check_covariance_hermitian(rng) -> bool:
    R = estimate_covariance(crandn(rng, (4, 167))).R
    return bool(np.array_equal(R, R.conj().T) and np.linalg.eigvalsh(R).min() > 0)


def check_crc(rng) -> bool:
    for _ in range(200):
        b = crc_attach(rng.integers(0, 2, 68))
        if not crc_check(b):
            return False
        b[rng.integers(84)] ^= 1
        if crc_check(b):
            return False
    return True


def check_fec_round_trip(rng) -> bool:
    blocks = np.stack([crc_attach(rng.integers(0, 2, 68)) for _ in range(200)])
    dec, ok = fec_decode_batch(np.stack([1.0 - 2.0 * fec_encode(b) for b in blocks]))
    return bool(ok.all() and np.array_equal(dec, blocks))


def check_spread_energy(rng) -> bool:
    c = build_pool()[5]
    grid = modulate_and_spread(rng.integers(0, 2, 167), c)
    return bool(abs(np.vdot(grid, grid).real - 167) < 1e-9 and np.allclose(c.conj() @ grid, grid[0] / c[0]))


def check_zero_forcing(rng) -> bool:
    H = crandn(rng, (2, 2))
    v = csc_weights(H, "zfc", 0)
    return bool(abs(np.vdot(v, H[1])) < 1e-10 and abs(np.vdot(v, H[0]) - 1) < 1e-10)


def check_noise_calibration(rng) -> bool:
    g = apply_channel([], [], 0.0, rng, m=2, shape=(4, 12500))
    return bool(abs(np.mean(np.abs(g.y) ** 2) - 1) < 0.03)


def check_pair_decoding(rng) -> bool:
    pool = build_pool()
    txs = [make_transmission(k, rng.integers(0, 2, 68), 3, pool) for k in range(2)]
    grid = apply_channel(txs, [np.array([1, 1]), np.array([1, -1])], 20.0, rng)
    res = run_mud(grid, pool, builtin_set(2, "v2_6"), MudConfig())
    got = {d.payload_key() for d in res.decoded}
    return all(np.packbits(t.block).tobytes() in got for t in txs)


CHECKS = {
    "same-code pair separated by sum/difference combining": check_pair_separation,
    "activity metric matches Sherman-Morrison": check_metric_closed_form,
    "MMSE despreader has unit gain on its code": check_despreader_unbiased,
    "chip covariance is Hermitian positive definite": check_covariance_hermitian,
    "CRC round trip and single-bit detection": check_crc,
    "noiseless FEC round trip": check_fec_round_trip,
    "spread grid energy and matched-filter despreading": check_spread_energy,
    "zero-forcing nulls the other UE": check_zero_forcing,
    "0 dB noise has unit variance": check_noise_calibration,
    "same-code pair decoded at 20 dB": check_pair_decoding,
}


def run_checks(seed: int = 0, echo=print) -> bool:
    rng = np.random.default_rng(seed)
    all_ok = True
    for name, fn in CHECKS.items():
        ok = fn(rng)
        all_ok &= ok
        echo(f"{'PASS' if ok else 'FAIL'}  {name}")
    return all_ok
