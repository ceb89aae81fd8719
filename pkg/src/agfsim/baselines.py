"""Reference receivers: perfect-CSI MMSE-SIC and preamble-based combining."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bsc import DegenerateCombiningError, combine, csc_weights
from .channel import ReceiveGrid
from .fec import DEFAULT_FORMAT, HALF_FORMAT, BlockFormat, fec_decode_batch
from .mud import DecodedBlock, _hd_sinr_lin, estimate_covariance, mmse_despreader
from .waveform import PREAMBLE_LENGTH, SpreadingCodePool, reconstruct_chips


@dataclass
class IdealCsi:
    channels: np.ndarray  # (K, m)
    code_indices: np.ndarray  # (K,)


def stacked_signatures(csi: IdealCsi, pool: SpreadingCodePool) -> np.ndarray:
    """Per-UE space-code signatures ``sqrt(L) h_k (x) c_k``, shape ``(K, m*L)``.

    Row ordering matches ``grid.y.reshape(m*L, T)`` (antenna-major).
    """
    C = pool.codes[np.asarray(csi.code_indices)]
    H = np.atleast_2d(csi.channels)
    return np.sqrt(pool.length) * np.einsum("ka,kl->kal", H, C).reshape(H.shape[0], -1)


def mmse_post_sinr(E: np.ndarray, active, noise_var: float) -> np.ndarray:
    """Post-MMSE SINR of every active signature against the others plus white noise."""
    act = np.asarray(active)
    Ea = E[act]
    R = Ea.T @ Ea.conj() + noise_var * np.eye(E.shape[1])
    Rinv_E = np.linalg.solve(R, Ea.T)  # (mL, Ka)
    gamma = np.real(np.einsum("kd,dk->k", Ea.conj(), Rinv_E))
    gamma = np.minimum(gamma, 1 - 1e-15)
    return gamma / (1 - gamma)


def ideal_mmse_sic(
    grid: ReceiveGrid,
    csi: IdealCsi,
    pool: SpreadingCodePool,
    fmt: BlockFormat = DEFAULT_FORMAT,
    sinr_cap_db: float = 30.0,
    noise_floor: float = 1e-10,
) -> list[DecodedBlock]:
    """Space-code MMSE-SIC with perfect channels and codes.

    Each iteration filters every remaining UE with the exact ``m*L``-dimensional
    MMSE filter, tries them in descending post-SINR order, cancels the first
    CRC pass with its true channel and starts over. Stops when no remaining UE
    decodes.
    """
    m, L, T = grid.y.shape
    E = stacked_signatures(csi, pool)
    Y = grid.y.reshape(m * L, T).copy()
    nv = max(grid.noise_var, noise_floor)
    cap = 10.0 ** (sinr_cap_db / 10.0)
    remaining = list(range(E.shape[0]))
    out: list[DecodedBlock] = []
    rnd = 0
    while remaining:
        act = np.array(remaining)
        Ea = E[act]
        R = Ea.T @ Ea.conj() + nv * np.eye(m * L)
        Rinv_E = np.linalg.solve(R, Ea.T)
        gamma = np.real(np.einsum("kd,dk->k", Ea.conj(), Rinv_E))
        sinr = np.minimum(gamma / np.maximum(1 - gamma, 1e-15), cap)
        order = np.argsort(-sinr, kind="stable")
        W = Rinv_E / gamma  # unit-gain filters, columns
        U = W[:, order].conj().T @ Y  # (Ka, T)
        llr = 4.0 * sinr[order][:, None] * U.real
        blocks, ok = fec_decode_batch(llr, fmt)
        hits = np.flatnonzero(ok)
        if hits.size == 0:
            break
        i = hits[0]
        k = int(act[order[i]])
        out.append(DecodedBlock(blocks[i], int(csi.code_indices[k]), -1, rnd, float(10 * np.log10(sinr[order[i]])), 1))
        x = reconstruct_chips(blocks[i], pool.codes[csi.code_indices[k]], fmt)  # (L, T)
        h = np.atleast_2d(csi.channels)[k]
        Y -= np.einsum("a,lt->alt", h, x).reshape(m * L, T)
        remaining.remove(k)
        rnd += 1
    return out


@dataclass
class PreambleFrame:
    """Received preamble region ``(m, 336)`` plus data region ``(m, L, T')``."""

    preamble: np.ndarray
    data: np.ndarray
    noise_var: float

    @property
    def n_antennas(self) -> int:
        return self.data.shape[0]


def preamble_format(payload: str) -> BlockFormat:
    """Data-region block format: ``half`` (42-bit TB) or ``full`` (84-bit TB), both onto 84 spread units.

    ``full`` keeps 84 coded bits of a 180-bit mother codeword whose trellis has
    90 input bits, so it is not uniquely decodable and most blocks fail even at
    high SNR; it exists to bracket the payload question.
    """
    if payload == "half":
        return HALF_FORMAT
    if payload == "full":
        return BlockFormat(tb_bits=84, n_coded=PREAMBLE_LENGTH // 4)
    raise ValueError(f"unknown preamble payload {payload!r}")


def code_for_preamble(p: int, n_codes: int) -> int:
    """Spreading code tied to preamble ``p`` (the UE's only choice is the preamble)."""
    return p % n_codes


def detect_preambles(y_pre: np.ndarray, preambles: np.ndarray, factor: float = 4.0):
    """Active preambles by correlation energy above ``factor`` x the median energy.

    Returns ``(indices, correlations)`` with correlations ``(P, m)``.
    """
    corr = preambles.conj() @ y_pre.T  # (P, m)
    energy = np.sum(np.abs(corr) ** 2, axis=1)
    # keep round-off leakage below threshold when there is no noise
    floor = max(np.median(energy), 1e-12 * energy.max())
    return np.flatnonzero(energy > factor * floor), corr


def preamble_receiver(
    frame: PreambleFrame,
    preambles: np.ndarray,
    pool: SpreadingCodePool,
    mode: str = "mrc",
    fmt: BlockFormat = HALF_FORMAT,
    max_sic_rounds: int = 16,
    diag_load: float = 1e-3,
    sinr_cap_db: float = 30.0,
) -> list[DecodedBlock]:
    """Estimate-then-combine receiver driven by preamble correlation.

    Channels come from LS correlation against each detected preamble, so
    UEs sharing a preamble get the sum of their channels. Every undecoded
    detected preamble is combined (MRC or ZF over all undecoded estimates),
    MMSE-despread with its tied code, equalised with the preamble estimate
    and decoded. CRC passes are re-estimated jointly from their reconstructed
    preamble and data chips and cancelled from both regions; channel
    estimates of the rest are then refreshed from the residual preamble
    region.
    """
    m = frame.n_antennas
    n_pre = preambles.shape[1]
    amp = np.sqrt(n_pre)
    cap = 10.0 ** (sinr_cap_db / 10.0)
    detected, corr = detect_preambles(frame.preamble, preambles)
    y0 = np.concatenate([frame.preamble, frame.data.reshape(m, -1)], axis=1)
    y = y0
    pending = [int(p) for p in detected]
    decoded: list[DecodedBlock] = []
    seen: set[bytes] = set()
    full_chips: list[np.ndarray] = []
    for rnd in range(max_sic_rounds):
        if not pending:
            break
        y_pre = y[:, :n_pre]
        data = y[:, n_pre:].reshape(frame.data.shape)
        h_est = np.stack([preambles[p].conj() @ y_pre.T for p in pending]) / amp  # (K_pend, m)
        llrs = []
        for j, p in enumerate(pending):
            try:
                v = csc_weights(h_est, mode, j)
            except DegenerateCombiningError:
                v = csc_weights(h_est, "mrc", j)
            z = combine(data, v)
            c = pool.codes[code_for_preamble(p, pool.size)]
            w = mmse_despreader(estimate_covariance(z, diag_load), c)
            u = w.conj() @ z
            g = np.sqrt(pool.length) * np.vdot(v, h_est[j])
            if g == 0:
                llrs.append(np.zeros(fmt.n_coded))
                continue
            sinr = _hd_sinr_lin(u / g, cap)
            llrs.append(4.0 * sinr * (u / g).real)
        blocks, ok = fec_decode_batch(np.stack(llrs), fmt)
        new = []
        for j in np.flatnonzero(ok):
            p = pending[j]
            d = DecodedBlock(blocks[j], code_for_preamble(p, pool.size), -1, rnd, float("nan"), 1, preamble_index=p)
            key = d.payload_key()
            if key in seen:
                continue
            seen.add(key)
            new.append(d)
        if not new:
            break
        decoded.extend(new)
        for d in new:
            x = reconstruct_chips(d.block, pool.codes[d.code_index], fmt).ravel()
            full_chips.append(np.concatenate([amp * preambles[d.preamble_index], x]))
        X = np.stack(full_chips)
        Hls, *_ = np.linalg.lstsq(X.T, y0.T, rcond=None)
        y = y0 - Hls.T @ X
        # a preamble stays pending while it may still hide a second, undecoded UE
        decoded_pre = {d.preamble_index for d in new}
        pending = [p for p in pending if p not in decoded_pre] + [
            p for p in pending if p in decoded_pre and _residual_energy(y[:, :n_pre], preambles[p]) > 4.0 * _noise_floor(y[:, :n_pre], preambles)
        ]
    return decoded


def _residual_energy(y_pre, p):
    return float(np.sum(np.abs(p.conj() @ y_pre.T) ** 2))


def _noise_floor(y_pre, preambles):
    return float(np.median(np.sum(np.abs(preambles.conj() @ y_pre.T) ** 2, axis=1)))
