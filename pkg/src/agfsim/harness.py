"""Seeded Monte-Carlo BLER campaigns.

Every trial draws one frame (payloads, signatures, channels, unit noise) from
its own seed, derived from ``(master seed, trial index)``, and reuses it at
every SNR point with the noise rescaled. Receivers that share a frame layout
(``blind_bsc``, ``ideal``) therefore see identical transmissions for the same
seed, which makes curve comparisons paired.

A UE's block is an error unless its exact transport block appears among the
receiver's CRC passes. BLER averages over all ``K`` UEs of all trials.
"""

from __future__ import annotations

import configparser
import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from functools import lru_cache
from pathlib import Path

import numpy as np

from .baselines import IdealCsi, PreambleFrame, code_for_preamble, ideal_mmse_sic, preamble_format, preamble_receiver
from .bsc import builtin_set
from .channel import ReceiveGrid, crandn, noise_variance, superpose
from .fec import BlockFormat
from .mud import MudConfig, run_mud
from .waveform import PREAMBLE_LENGTH, build_pool, build_preamble_pool, has_collision, make_transmission

RECEIVERS = ("blind_bsc", "ideal", "preamble_mrc", "preamble_zfc")
SCENARIO_DIR = Path(__file__).parent / "scenarios"


class ScenarioError(ValueError):
    """Invalid scenario configuration."""


@dataclass(frozen=True)
class Scenario:
    name: str = "custom"
    receiver: str = "blind_bsc"
    K: int = 16
    m: int = 2
    vset: str = "v2_6"
    N: int = 64
    L: int = 4
    T: int = 167
    M: int = 8
    F: int = 16
    snr_db: tuple[float, ...] = (0.0, 2.0, 4.0)
    trials: int = 100
    seed: int = 1
    pool_seed: int = 2019
    max_sic_rounds: int = 16
    gain_refine_iters: int = 2
    refine: str = "joint"
    preamble_pool: int = 64
    preamble_payload: str = "half"

    def __post_init__(self):
        if self.receiver not in RECEIVERS:
            raise ScenarioError(f"receiver must be one of {RECEIVERS}, got {self.receiver!r}")
        for k in ("K", "m", "N", "L", "T", "M", "F", "trials", "max_sic_rounds"):
            if getattr(self, k) < 1:
                raise ScenarioError(f"{k} must be positive")
        if not self.snr_db:
            raise ScenarioError("snr_db must list at least one point")
        if self.receiver.startswith("preamble"):
            if not 1 <= self.preamble_pool <= PREAMBLE_LENGTH:
                raise ScenarioError(f"preamble_pool must be in 1..{PREAMBLE_LENGTH}")
            if self.preamble_payload not in ("half", "full"):
                raise ScenarioError("preamble_payload must be 'half' or 'full'")
        else:
            try:
                vs = builtin_set(self.m, self.vset)
            except ValueError as exc:
                raise ScenarioError(str(exc)) from None
            if self.M > self.N or self.F > len(vs) * self.M:
                raise ScenarioError(f"need M <= N and F <= m_v*M = {len(vs) * self.M}")

    @property
    def overloading_percent(self) -> float:
        return 100.0 * self.K / self.L

    def mud_config(self) -> MudConfig:
        return MudConfig(
            M=self.M, F=self.F, max_sic_rounds=self.max_sic_rounds,
            gain_refine_iters=self.gain_refine_iters, refine=self.refine,
        )

    def with_overrides(self, **kw) -> "Scenario":
        kw = {k: v for k, v in kw.items() if v is not None}
        if "snr_db" in kw:
            kw["snr_db"] = tuple(float(x) for x in kw["snr_db"])
        try:
            return replace(self, **kw)
        except TypeError as exc:
            raise ScenarioError(str(exc)) from None


def _parse_value(name: str, raw: str, typ: str):
    # field types are strings under postponed annotations
    try:
        if name == "snr_db":
            return tuple(float(x) for x in raw.replace(",", " ").split())
        if typ == "int":
            return int(raw)
        return raw.strip()
    except ValueError:
        raise ScenarioError(f"bad value for {name}: {raw!r}") from None


def load_scenario(path) -> Scenario:
    """Read a ``[scenario]`` section of ``key = value`` lines."""
    path = Path(path)
    if not path.is_file():
        cand = SCENARIO_DIR / f"{path.name}.ini"
        if path.suffix == "" and cand.is_file():
            path = cand
        else:
            raise ScenarioError(f"no scenario file {path}")
    cp = configparser.ConfigParser()
    cp.optionxform = str  # M and m are different keys
    try:
        cp.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ScenarioError(f"{path}: {exc}") from None
    if "scenario" not in cp:
        raise ScenarioError(f"{path}: missing [scenario] section")
    known = {f.name: f.type for f in fields(Scenario)}
    kw = {}
    for name, raw in cp["scenario"].items():
        if name not in known:
            raise ScenarioError(f"{path}: unknown key {name!r}")
        kw[name] = _parse_value(name, raw, known[name])
    kw.setdefault("name", path.stem)
    return Scenario(**kw)


def list_scenarios() -> list[Path]:
    return sorted(SCENARIO_DIR.glob("*.ini"))


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    """Independent stream for trial ``trial``, reproducible in isolation."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(trial,)))


@lru_cache(maxsize=None)
def _pool(L, N, seed):
    return build_pool(L=L, N=N, seed=seed)


@lru_cache(maxsize=None)
def _preambles(P):
    return build_preamble_pool(P)


@dataclass
class Frame:
    blocks: list[np.ndarray]
    signatures: np.ndarray  # code (data-only) or preamble (preamble mode) per UE
    channels: np.ndarray  # (K, m)
    clean: np.ndarray  # noiseless observation
    unit_noise: np.ndarray
    clean_pre: np.ndarray | None = None
    unit_noise_pre: np.ndarray | None = None

    @property
    def collision(self) -> bool:
        return has_collision(self.signatures)


def make_frame(s: Scenario, trial: int) -> Frame:
    rng = trial_rng(s.seed, trial)
    pool = _pool(s.L, s.N, s.pool_seed)
    if s.receiver.startswith("preamble"):
        fmt = preamble_format(s.preamble_payload)
        T = PREAMBLE_LENGTH // s.L
        info = rng.integers(0, 2, size=(s.K, fmt.info_bits))
        pre_idx = rng.integers(0, s.preamble_pool, size=s.K)
        H = crandn(rng, (s.K, s.m))
        noise_pre = crandn(rng, (s.m, PREAMBLE_LENGTH))
        noise = crandn(rng, (s.m, s.L, T))
        fmt = BlockFormat(fmt.tb_bits, T)
        txs = [make_transmission(k, info[k], code_for_preamble(int(pre_idx[k]), s.N), pool, fmt) for k in range(s.K)]
        pre = np.sqrt(PREAMBLE_LENGTH) * _preambles(s.preamble_pool)[pre_idx]
        return Frame(
            [t.block for t in txs], pre_idx, H,
            superpose([t.chips for t in txs], H), noise,
            superpose(list(pre), H), noise_pre,
        )
    fmt = BlockFormat(84, s.T)
    info = rng.integers(0, 2, size=(s.K, fmt.info_bits))
    codes = rng.integers(0, s.N, size=s.K)
    H = crandn(rng, (s.K, s.m))
    noise = crandn(rng, (s.m, s.L, s.T))
    txs = [make_transmission(k, info[k], codes[k], pool, fmt) for k in range(s.K)]
    return Frame([t.block for t in txs], codes, H, superpose([t.chips for t in txs], H), noise)


def receive(s: Scenario, frame: Frame, snr_db: float):
    """Run the scenario's receiver on ``frame`` at ``snr_db``; returns decoded blocks."""
    pool = _pool(s.L, s.N, s.pool_seed)
    nv = noise_variance(snr_db)
    sd = math.sqrt(nv)
    if s.receiver.startswith("preamble"):
        fmt = BlockFormat(preamble_format(s.preamble_payload).tb_bits, frame.clean.shape[-1])
        pf = PreambleFrame(frame.clean_pre + sd * frame.unit_noise_pre, frame.clean + sd * frame.unit_noise, nv)
        return preamble_receiver(
            pf, _preambles(s.preamble_pool), pool, mode=s.receiver.split("_")[1],
            fmt=fmt, max_sic_rounds=s.max_sic_rounds,
        )
    fmt = BlockFormat(84, s.T)
    grid = ReceiveGrid(frame.clean + sd * frame.unit_noise, nv)
    if s.receiver == "ideal":
        return ideal_mmse_sic(grid, IdealCsi(frame.channels, frame.signatures), pool, fmt)
    return run_mud(grid, pool, builtin_set(s.m, s.vset), s.mud_config(), fmt).decoded


def count_errors(frame: Frame, decoded) -> int:
    got = {d.payload_key() for d in decoded}
    return sum(np.packbits(b).tobytes() not in got for b in frame.blocks)


def _run_trials(s: Scenario, start: int, stop: int):
    errors = np.zeros(len(s.snr_db), dtype=np.int64)
    collisions = 0
    for trial in range(start, stop):
        frame = make_frame(s, trial)
        collisions += frame.collision
        for i, snr in enumerate(s.snr_db):
            errors[i] += count_errors(frame, receive(s, frame, snr))
    return errors, collisions


@dataclass
class BlerPoint:
    snr_db: float
    blocks_sent: int
    block_errors: int
    extra: dict = field(default_factory=dict, compare=False)

    @property
    def bler(self) -> float:
        return self.block_errors / self.blocks_sent if self.blocks_sent else 0.0

    @property
    def ci(self) -> tuple[float, float]:
        return wilson_interval(self.block_errors, self.blocks_sent)


def wilson_interval(k: int, n: int, z: float = 1.959963984540054) -> tuple[float, float]:
    """Wilson score interval for ``k`` successes out of ``n``."""
    if n == 0:
        return 0.0, 1.0
    p = k / n
    den = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    lo = 0.0 if k == 0 else max(0.0, centre - half)
    hi = 1.0 if k == n else min(1.0, centre + half)
    return lo, hi


def run_scenario(s: Scenario, workers: int = 1, chunk: int = 50) -> list[BlerPoint]:
    """Run every trial at every SNR point of ``s``; one BlerPoint per SNR.

    ``workers > 1`` spreads trial chunks over processes. Chunk results are
    merged in trial order, so the output does not depend on ``workers``.
    """
    bounds = [(a, min(a + chunk, s.trials)) for a in range(0, s.trials, chunk)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            parts = list(ex.map(_run_trials, [s] * len(bounds), *zip(*bounds)))
    else:
        parts = [_run_trials(s, a, b) for a, b in bounds]
    errors = sum(p[0] for p in parts)
    collisions = sum(p[1] for p in parts)
    sent = s.K * s.trials
    return [
        BlerPoint(float(snr), sent, int(errors[i]), {"trials": s.trials, "collision_trials": int(collisions)})
        for i, snr in enumerate(s.snr_db)
    ]


CSV_COLUMNS = ("snr_db", "blocks_sent", "block_errors", "bler", "ci_low", "ci_high")


def point_row(p: BlerPoint) -> dict:
    lo, hi = p.ci
    return {"snr_db": p.snr_db, "blocks_sent": p.blocks_sent, "block_errors": p.block_errors,
            "bler": p.bler, "ci_low": lo, "ci_high": hi}


def emit_results(points, fmt: str = "csv", path=None, scenario: Scenario | None = None) -> str:
    """Serialise BLER points as CSV or JSON; written to ``path`` when given.

    Returns the serialised text. Raises ``OSError`` if ``path`` is not writable.
    """
    points = list(points)
    if not points:
        raise ValueError("no points to emit")
    if fmt == "csv":
        import io

        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
        w.writeheader()
        for p in points:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in point_row(p).items()})
        text = buf.getvalue()
    elif fmt == "json":
        doc = {"points": [dict(point_row(p), **p.extra) for p in points]}
        if scenario is not None:
            doc["scenario"] = asdict(scenario)
        text = json.dumps(doc, indent=2) + "\n"
    else:
        raise ValueError(f"unknown format {fmt!r}")
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    return text


def read_csv(path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [
        {k: (int(v) if k in ("blocks_sent", "block_errors") else float(v)) for k, v in r.items()}
        for r in rows
    ]


def snr_at_bler(points, target: float) -> float:
    """SNR where the curve first drops to ``target``, log-linear interpolation.

    Returns ``inf`` if the curve never reaches ``target`` and ``-inf`` if the
    first point is already at or below it (crossing left of the grid).
    """
    pts = sorted(points, key=lambda p: p.snr_db)
    prev = None
    for p in pts:
        if p.bler <= target:
            if prev is None:
                return -math.inf
            lo = math.log10(max(prev.bler, 1e-12))
            hi = math.log10(max(p.bler, 1e-12))
            t = math.log10(target)
            frac = (lo - t) / (lo - hi) if lo != hi else 0.0
            return prev.snr_db + frac * (p.snr_db - prev.snr_db)
        prev = p
    return math.inf
