"""Acceptance campaigns.

Each test records one PASS/FAIL line, shown in the "acceptance criteria"
section of the pytest summary. The Monte-Carlo runs take about 25 minutes
on a single core; campaigns shared between criteria run once per session.
"""

from functools import lru_cache

import numpy as np

from agfsim.bsc import builtin_set, combine
from agfsim.channel import apply_channel, crandn
from agfsim.fec import crc_attach, crc_check, fec_decode_batch, fec_encode
from agfsim.harness import emit_results, load_scenario, run_scenario, snr_at_bler
from agfsim.mud import MudConfig, estimate_covariance, mmse_despreader, mmse_metric, run_mud
from agfsim.waveform import build_pool, make_transmission

GRID_16 = (-2.0, -1.0, 0.0, 1.0, 2.0, 3.0, 4.0, 6.0)
GRID_20 = (-2.0, 0.0, 2.0, 4.0, 6.0, 8.0)
GRID_12 = (-8.0, -7.0, -6.0, -5.0, -4.0, -3.0, -2.0, -1.0, 0.0)


@lru_cache(maxsize=None)
def _campaign(preset, **kw):
    s = load_scenario(preset).with_overrides(**kw)
    return run_scenario(s)


def campaign(preset, **kw):
    # lists are not hashable; grids are passed as tuples
    return _campaign(preset, **kw)


def _fmt(points):
    return " ".join(f"{p.snr_db:g}:{p.bler:.2e}" for p in points)


def _record(report, n, ok, detail):
    report.append(f"{'PASS' if ok else 'FAIL'}  criterion {n}: {detail}")


def _ordered(lower, upper):
    """``lower`` <= ``upper`` pointwise, at most one violation and only within CI overlap."""
    bad = [(a, b) for a, b in zip(lower, upper) if a.bler > b.bler]
    overlapping = all(a.ci[0] <= b.ci[1] for a, b in bad)
    return len(bad) <= 1 and overlapping, len(bad)


# 1 -----------------------------------------------------------------------------

def test_criterion_1_exact_separation(acceptance_report):
    pool = build_pool()
    rng = np.random.default_rng(2024)
    h1, h2 = np.array([1, 1]), np.array([1, -1])
    leak = 0.0
    for _ in range(100):
        a, b = (make_transmission(k, rng.integers(0, 2, 68), 5, pool) for k in range(2))
        y = apply_channel([a, b], [h1, h2], None)
        leak = max(leak, np.abs(combine(y, [1, 1]) - 2 * a.chips).max(),
                   np.abs(combine(y, [1, -1]) - 2 * b.chips).max())
    vset, cfg = builtin_set(2, "v2_6"), MudConfig()
    both = 0
    for _ in range(1000):
        code = int(rng.integers(64))
        txs = [make_transmission(k, rng.integers(0, 2, 68), code, pool) for k in range(2)]
        res = run_mud(apply_channel(txs, [h1, h2], 20.0, rng), pool, vset, cfg)
        got = {d.payload_key() for d in res.decoded}
        both += all(np.packbits(t.block).tobytes() in got for t in txs)
    ok = leak < 1e-10 and both >= 999
    _record(acceptance_report, 1, ok, f"leakage {leak:.1e} (< 1e-10), both decoded {both}/1000 (>= 999)")
    assert ok


# 2 -----------------------------------------------------------------------------

def test_criterion_2_metric_closed_form(acceptance_report):
    pool = build_pool()
    C = pool.codes
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(100):
        p, nv = rng.uniform(0.05, 20), rng.uniform(0.1, 10)
        k = int(rng.integers(64))
        c = C[k]
        vals = mmse_metric(p * np.outer(c, c.conj()) + nv * np.eye(4), pool)
        orth = np.flatnonzero(np.abs(C.conj() @ c) < 1e-12)
        assert orth.size > 0
        worst = max(worst, abs(vals[k] - 1 / (nv + p)), np.abs(vals[orth] - 1 / nv).max())
    ok = worst < 1e-9
    _record(acceptance_report, 2, ok, f"max deviation {worst:.1e} over 100 (p, sigma^2) pairs (< 1e-9)")
    assert ok


# 3 -----------------------------------------------------------------------------

def test_criterion_3_sixteen_ues(acceptance_report):
    s = load_scenario("fig6_16ue")
    assert s.trials >= 2000 and (s.K, s.m, s.M, s.F) == (16, 2, 8, 16)
    f16 = campaign("fig6_16ue", snr_db=GRID_16)
    f48 = campaign("fig6_16ue", snr_db=GRID_16, F=48)
    x16, x48 = snr_at_bler(f16, 1e-2), snr_at_bler(f48, 1e-2)
    bl = [p.bler for p in f16]
    monotone = all(b < a for a, b in zip(bl, bl[1:]))
    ok = 0.5 <= x16 <= 5.5 and monotone and abs(x16 - x48) <= 0.5
    _record(acceptance_report, 3,
            ok, f"F=16 hits 1e-2 at {x16:.2f} dB (window 0.5..5.5), monotone={monotone}, "
                f"F=48 at {x48:.2f} dB (|diff| {abs(x16 - x48):.2f} <= 0.5); F=16 {_fmt(f16)}")
    assert ok


# 4 -----------------------------------------------------------------------------

def test_criterion_4_twenty_ues(acceptance_report):
    s = load_scenario("fig7_20ue")
    assert s.trials >= 2000 and (s.K, s.F) == (20, 48)
    u20 = campaign("fig7_20ue", snr_db=GRID_20)
    u16 = campaign("fig6_16ue", snr_db=GRID_16, F=48)
    x20, x16 = snr_at_bler(u20, 1e-2), snr_at_bler(u16, 1e-2)
    ok = x20 <= 8.0 and x20 > x16
    _record(acceptance_report, 4, ok,
            f"20 UEs (F=48) hit 1e-2 at {x20:.2f} dB (<= 8), 16 UEs (F=48) at {x16:.2f} dB; 20 UEs {_fmt(u20)}")
    assert ok


# 5 -----------------------------------------------------------------------------

def test_criterion_5_ordering(acceptance_report):
    ideal = campaign("ideal_16ue", snr_db=GRID_16, trials=2000)
    blind = campaign("fig6_16ue", snr_db=GRID_16)
    single = campaign("fig6_16ue", snr_db=GRID_16, vset="single", F=8)
    f48 = campaign("fig6_16ue", snr_db=GRID_16, F=48)
    f8 = campaign("fig6_16ue", snr_db=GRID_16, F=8)
    checks = {
        "ideal<=blind": _ordered(ideal, blind),
        "blind<=single-antenna": _ordered(blind, single),
        "F48<=F16": _ordered(f48, blind),
        "F16<=F8": _ordered(blind, f8),
    }
    ok = all(v[0] for v in checks.values())
    detail = ", ".join(f"{k} {'ok' if v[0] else 'violated'} ({v[1]} inversions)" for k, v in checks.items())
    _record(acceptance_report, 5, ok, detail)
    assert ok


# 6 -----------------------------------------------------------------------------

def test_criterion_6_preamble_gap(acceptance_report):
    blind = campaign("fig6_16ue", snr_db=GRID_12, K=12, trials=2000)
    mrc = campaign("fig8_preamble_12ue", snr_db=GRID_12, trials=2000)
    zfc = campaign("fig8_preamble_12ue", snr_db=GRID_12, trials=2000, receiver="preamble_zfc")
    assert load_scenario("fig8_preamble_12ue").preamble_pool == 64
    xb = snr_at_bler(blind, 1e-1)
    gaps = {"mrc": snr_at_bler(mrc, 1e-1) - xb, "zfc": snr_at_bler(zfc, 1e-1) - xb}
    coll = mrc[0].extra["collision_trials"] / mrc[0].extra["trials"]
    ok = np.isfinite(xb) and min(gaps.values()) >= 1.0 and coll > 0.30
    _record(acceptance_report, 6, ok,
            f"blind hits 1e-1 at {xb:.2f} dB, gap MRC {gaps['mrc']:.2f} dB, ZFC {gaps['zfc']:.2f} dB (>= 1), "
            f"preamble collisions in {coll:.1%} of trials (> 30%)")
    assert ok


# 7 -----------------------------------------------------------------------------

def test_criterion_7_unit_properties(acceptance_report, tmp_path):
    rng = np.random.default_rng(77)
    results = {}
    blocks = np.stack([crc_attach(rng.integers(0, 2, 68)) for _ in range(500)])
    dec, good = fec_decode_batch(np.stack([1.0 - 2.0 * fec_encode(b) for b in blocks]))
    results["fec round trip"] = bool(good.all() and np.array_equal(dec, blocks))
    missed = 0
    for b in blocks:
        e = b.copy()
        e[rng.choice(84, rng.integers(1, 4), replace=False)] ^= 1
        missed += crc_check(e)
    results["crc detection"] = missed == 0 and all(crc_check(b) for b in blocks)
    herm = True
    for _ in range(200):
        R = estimate_covariance(crandn(rng, (4, 167))).R
        herm &= bool(np.array_equal(R, R.conj().T) and np.linalg.eigvalsh(R).min() > 0)
    results["covariance hermitian psd"] = herm
    C = build_pool().codes
    worst = 0.0
    for _ in range(100):
        A = crandn(rng, (4, 5))
        R = A @ A.conj().T + 1e-3 * np.eye(4)
        worst = max(worst, max(abs(np.vdot(mmse_despreader(R, c), c) - 1) for c in C))
    results["despreader unbiased"] = worst < 1e-9
    s = load_scenario("fig6_16ue").with_overrides(snr_db=[0.0, 3.0], trials=20, seed=5)
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    emit_results(run_scenario(s), "csv", a)
    emit_results(run_scenario(s), "csv", b)
    results["csv byte identity"] = a.read_bytes() == b.read_bytes()
    ok = all(results.values())
    _record(acceptance_report, 7, ok, ", ".join(f"{k} {'ok' if v else 'FAILED'}" for k, v in results.items()))
    assert ok
