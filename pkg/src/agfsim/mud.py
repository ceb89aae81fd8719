"""Data-only blind multi-user detection with blind spatial combining.

One SIC round:

1. combine the per-antenna grid with every vector of the combining set;
2. per combined stream, estimate the ``L x L`` chip covariance ``R``;
3. score every pool code with ``c^H R^-1 c`` and keep the ``M`` smallest;
4. MMSE-despread each kept code, ``w = R^-1 c / (c^H R^-1 c)``;
5. estimate the stream gain from the BPSK second moment (sign left open);
6. rank all ``m_v * M`` streams by hard-decision SINR, decode the best ``F``
   under both gain signs and keep CRC passes;
7. re-estimate the channels of everything decoded so far from the
   reconstructed chips and cancel it.

Rounds repeat until one yields no new CRC pass.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bsc import CombiningVectorSet, combine_all
from .channel import ReceiveGrid
from .fec import DEFAULT_FORMAT, BlockFormat, fec_decode_batch, fec_encode
from .waveform import SpreadingCodePool, reconstruct_chips


class SingularCovarianceError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class MudConfig:
    M: int = 8
    F: int = 16
    max_sic_rounds: int = 16
    diag_load: float = 1e-3
    sinr_cap_db: float = 30.0
    refine: str = "joint"  # "joint" LS over all decoded UEs, or "successive"
    gain_refine_iters: int = 0

    def validate(self, n_codes: int, n_vectors: int):
        if not 1 <= self.M <= n_codes:
            raise ValueError(f"M={self.M} outside 1..{n_codes}")
        if not 1 <= self.F <= n_vectors * self.M:
            raise ValueError(f"F={self.F} outside 1..{n_vectors * self.M}")
        if self.max_sic_rounds < 1:
            raise ValueError("max_sic_rounds must be >= 1")
        if self.refine not in ("joint", "successive"):
            raise ValueError(f"unknown refine mode {self.refine!r}")


@dataclass
class CovarianceEstimate:
    R: np.ndarray  # (L, L) Hermitian, diagonally loaded
    sample_count: int
    loading: float


@dataclass
class GainEstimate:
    gain: complex  # the other hypothesis is -gain
    low_confidence: bool

    @property
    def hypotheses(self) -> tuple[complex, complex]:
        return self.gain, -self.gain


@dataclass
class DetectionRecord:
    vector_index: int
    code_index: int
    mmse_metric: float
    gain_estimate: complex
    hd_sinr_db: float
    decode_status: str = "pending"  # pending | pass | fail
    despread_stream: np.ndarray | None = field(default=None, repr=False)


@dataclass
class DecodedBlock:
    block: np.ndarray
    code_index: int
    vector_index: int
    round: int
    hd_sinr_db: float
    sign: int
    preamble_index: int = -1

    def payload_key(self) -> bytes:
        return np.packbits(self.block).tobytes()


@dataclass
class MudResult:
    decoded: list[DecodedBlock]
    rounds: list[dict]

    @property
    def decode_calls(self) -> int:
        return sum(r["decode_calls"] for r in self.rounds)


def _loading(R: np.ndarray, rel: float) -> np.ndarray:
    L = R.shape[-1]
    return rel * np.real(np.trace(R, axis1=-2, axis2=-1)) / L


def estimate_covariance(stream, diag_load: float = 1e-3) -> CovarianceEstimate:
    """Sample chip covariance ``(1/T) sum_t z_t z_t^H`` plus ``eps I``, ``eps = diag_load * tr(R) / L``."""
    z = np.asarray(stream)
    L, T = z.shape
    if T < L:
        raise ValueError(f"need at least {L} spread units, got {T}")
    R = z @ z.conj().T / T
    R = 0.5 * (R + R.conj().T)
    eps = float(_loading(R, diag_load))
    return CovarianceEstimate(R + eps * np.eye(L), T, eps)


def _inverse(R: np.ndarray) -> np.ndarray:
    try:
        Rinv = np.linalg.inv(R)
    except np.linalg.LinAlgError as exc:
        raise SingularCovarianceError(str(exc)) from exc
    if not np.all(np.isfinite(Rinv)):
        raise SingularCovarianceError("covariance inverse is not finite")
    return Rinv


def _R(R):
    return R.R if isinstance(R, CovarianceEstimate) else np.asarray(R)


def _codes(pool):
    return pool.codes if isinstance(pool, SpreadingCodePool) else np.atleast_2d(pool)


def mmse_metric(R, pool) -> np.ndarray:
    """``c_k^H R^-1 c_k`` for every code of the pool; small values indicate activity."""
    Rinv = _inverse(_R(R))
    C = _codes(pool)
    return np.real(np.einsum("kl,lm,km->k", C.conj(), Rinv, C))


def select_active(values, M: int) -> np.ndarray:
    """Indices of the ``M`` smallest values, ties to the lower index."""
    return np.argsort(np.asarray(values), kind="stable")[:M]


def mmse_despreader(R, c) -> np.ndarray:
    Rinv_c = np.linalg.solve(_R(R), np.asarray(c, dtype=complex))
    return Rinv_c / (np.vdot(c, Rinv_c))


def blind_despread(stream, R, c) -> np.ndarray:
    """Unit-gain MMSE despreading: ``w^H z_t`` with ``w = R^-1 c / (c^H R^-1 c)``."""
    w = mmse_despreader(R, c)
    return w.conj() @ np.asarray(stream)


def blind_gain_estimate(despread) -> GainEstimate:
    """BPSK gain from ``sqrt(mean(u_t^2))`` (``s_t^2 = 1``), up to sign.

    Flagged low-confidence when ``|mean(u^2)| < 4 mean(|u|^2) / sqrt(T)``;
    circular noise alone exceeds that with probability ``exp(-8)``.
    """
    u = np.asarray(despread)
    T = u.size
    m2 = np.mean(u * u)
    p = np.mean(np.abs(u) ** 2)
    return GainEstimate(complex(np.sqrt(m2)), bool(abs(m2) < 4.0 * p / np.sqrt(T)))


def _hd_sinr_lin(u_eq: np.ndarray, cap: float) -> np.ndarray:
    s_hat = np.where(u_eq.real >= 0, 1.0, -1.0)
    d = u_eq * s_hat
    mu = d.mean(axis=-1)
    var = np.mean(np.abs(d - mu[..., None]) ** 2, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        sinr = np.abs(mu) ** 2 / var
    return np.where(var > 0, np.minimum(sinr, cap), cap)


def hd_sinr(despread, gain, sinr_cap_db: float = 30.0) -> float:
    """Hard-decision SINR in dB of ``u / gain``, capped at ``sinr_cap_db``."""
    if gain == 0:
        raise ValueError("gain estimate is zero")
    cap = 10.0 ** (sinr_cap_db / 10.0)
    sinr = _hd_sinr_lin(np.asarray(despread) / gain, cap)
    return float(10.0 * np.log10(sinr)) if sinr > 0 else -np.inf


def stream_llrs(despread, gain, sinr_lin) -> np.ndarray:
    """BPSK LLRs (positive -> bit 0) of ``u / gain``; complex noise of variance ``1/sinr``."""
    u_eq = np.asarray(despread) / np.asarray(gain)[..., None]
    return 4.0 * np.asarray(sinr_lin)[..., None] * u_eq.real


def reconstruct_and_cancel(grid: ReceiveGrid, block, code, fmt: BlockFormat = DEFAULT_FORMAT):
    """Cancel one decoded UE with per-antenna LS channel estimates.

    Returns the updated grid and the estimated channel vector ``(m,)``.
    """
    x = reconstruct_chips(block, code, fmt)
    y = grid.y
    h = np.tensordot(y, x.conj(), axes=([1, 2], [0, 1])) / np.vdot(x, x).real
    return ReceiveGrid(y - h[:, None, None] * x[None], grid.noise_var), h


def joint_cancel(y0: np.ndarray, chips: list[np.ndarray]):
    """Joint LS channel estimate of all reconstructed UEs on ``y0``; returns residual and ``(K, m)`` channels."""
    m = y0.shape[0]
    X = np.stack([x.ravel() for x in chips])  # (K, LT)
    Y = y0.reshape(m, -1)
    H, *_ = np.linalg.lstsq(X.T, Y.T, rcond=None)  # (K, m)
    resid = Y - H.T @ X
    return resid.reshape(y0.shape), H


def identify_code(y: np.ndarray, block, codes: np.ndarray, fmt: BlockFormat = DEFAULT_FORMAT) -> int:
    """Most likely code of a decoded block, by data-aided correlation with ``y``.

    With the symbols ``s`` known, ``Y_a s`` concentrates on ``h_a c`` for the true
    code; the score is ``sum_a |c^H Y_a s|^2``. A stream despread with a code
    correlated to the true one can pass CRC, so its own code is not trusted.
    """
    s = 1.0 - 2.0 * fec_encode(block, fmt)
    Ys = y @ s  # (m, L)
    score = np.sum(np.abs(Ys @ codes.conj().T) ** 2, axis=0)
    return int(np.argmax(score))


def _branch(Z: np.ndarray, C: np.ndarray, cfg: MudConfig, cap: float):
    """Per-vector detection for every combined stream at once."""
    n_v, L, T = Z.shape
    R = np.einsum("vlt,vmt->vlm", Z, Z.conj()) / T
    R = 0.5 * (R + np.conj(np.swapaxes(R, 1, 2)))
    R = R + _loading(R, cfg.diag_load)[:, None, None] * np.eye(L)
    Rinv = _inverse(R)
    RinvC = np.einsum("vlm,km->vkl", Rinv, C)
    metric = np.real(np.einsum("kl,vkl->vk", C.conj(), RinvC))
    sel = np.argsort(metric, axis=1, kind="stable")[:, : cfg.M]
    vi = np.arange(n_v)[:, None]
    W = RinvC[vi, sel] / metric[vi, sel][..., None]
    U = np.einsum("vjl,vlt->vjt", W.conj(), Z)
    g = np.sqrt(np.mean(U * U, axis=-1))
    for _ in range(cfg.gain_refine_iters):
        with np.errstate(divide="ignore", invalid="ignore"):
            s_hat = np.where((U / g[..., None]).real >= 0, 1.0, -1.0)
        g = np.where(g != 0, np.mean(U * s_hat, axis=-1), 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        sinr = _hd_sinr_lin(U / g[..., None], cap)
    sinr = np.where(g != 0, sinr, 0.0)
    return sel, metric[vi, sel], U, g, sinr


def run_mud(
    grid: ReceiveGrid,
    pool: SpreadingCodePool,
    vset: CombiningVectorSet,
    cfg: MudConfig = MudConfig(),
    fmt: BlockFormat = DEFAULT_FORMAT,
) -> MudResult:
    """Blind data-only MUD with blind spatial combining and SIC.

    Parameters
    ----------
    grid : ReceiveGrid
        Per-antenna observations, ``(m, L, T)``.
    pool : SpreadingCodePool
        Codes the UEs may have chosen from.
    vset : CombiningVectorSet
        Pre-defined combining vectors; ``vset.m`` must equal ``m``.
    cfg : MudConfig
        ``M`` codes kept per vector, ``F`` streams decoded per round.
    fmt : BlockFormat
        Transport block / codeword sizes; ``fmt.n_coded`` must equal ``T``.

    Returns
    -------
    MudResult
        CRC-passing blocks, one per payload, each tagged with the code found
        by :func:`identify_code`, plus per-round diagnostics.
    """
    cfg.validate(pool.size, len(vset))
    if grid.y.shape[1:] != (pool.length, fmt.n_coded):
        raise ValueError(f"grid shape {grid.y.shape} does not match L={pool.length}, T={fmt.n_coded}")
    cap = 10.0 ** (cfg.sinr_cap_db / 10.0)
    C = pool.codes
    y0 = grid.y
    y = y0.copy()
    decoded: list[DecodedBlock] = []
    seen_payloads: set[bytes] = set()
    chips: list[np.ndarray] = []
    rounds: list[dict] = []

    for rnd in range(cfg.max_sic_rounds):
        Z = combine_all(y, vset)
        try:
            sel, metric, U, g, sinr = _branch(Z, C, cfg, cap)
        except SingularCovarianceError:
            rounds.append({"round": rnd, "decode_calls": 0, "passes": 0, "records": []})
            break
        flat = np.argsort(-sinr.ravel(), kind="stable")[: cfg.F]
        vidx, jidx = np.unravel_index(flat, sinr.shape)
        keep = g[vidx, jidx] != 0
        vidx, jidx = vidx[keep], jidx[keep]
        n = vidx.size
        records = [
            DetectionRecord(
                int(v), int(sel[v, j]), float(metric[v, j]), complex(g[v, j]),
                float(10 * np.log10(sinr[v, j])) if sinr[v, j] > 0 else -np.inf,
            )
            for v, j in zip(vidx, jidx)
        ]
        if n == 0:
            rounds.append({"round": rnd, "decode_calls": 0, "passes": 0, "records": records})
            break
        llr = stream_llrs(U[vidx, jidx], g[vidx, jidx], sinr[vidx, jidx])
        blocks, ok = fec_decode_batch(np.concatenate([llr, -llr]), fmt)
        new = []
        for i in range(n):
            if ok[i]:
                sign, blk = 1, blocks[i]
            elif ok[n + i]:
                sign, blk = -1, blocks[n + i]
            else:
                records[i].decode_status = "fail"
                continue
            records[i].decode_status = "pass"
            key = np.packbits(blk).tobytes()
            if key in seen_payloads:
                continue
            code = identify_code(y, blk, C, fmt)
            d = DecodedBlock(blk, code, int(vidx[i]), rnd, records[i].hd_sinr_db, sign)
            seen_payloads.add(key)
            new.append(d)
        rounds.append({"round": rnd, "decode_calls": 2 * n, "passes": len(new), "records": records})
        if not new:
            break
        decoded.extend(new)
        if cfg.refine == "joint":
            chips.extend(reconstruct_chips(d.block, C[d.code_index], fmt) for d in new)
            y, _ = joint_cancel(y0, chips)
        else:
            g_ = ReceiveGrid(y, grid.noise_var)
            for d in new:
                g_, _ = reconstruct_and_cancel(g_, d.block, C[d.code_index], fmt)
            y = g_.y
    return MudResult(decoded, rounds)
