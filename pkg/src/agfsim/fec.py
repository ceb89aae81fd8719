"""CRC-16 attachment and a terminated rate-1/2 convolutional code.

The transport block is ``info_bits + 16 CRC bits``. Coded bits are produced by
a K=7 (133, 171) convolutional encoder with a 6-bit zero tail and rate-matched
to the number of spread units by evenly spaced puncturing. Decoding is a
soft-input Viterbi decoder (numba) over the terminated trellis.

LLR sign convention: positive means bit 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numba import njit

CRC_POLY = 0x1021  # x^16 + x^12 + x^5 + 1
CRC_BITS = 16
CONSTRAINT_LENGTH = 7
GENERATORS = (0o133, 0o171)
_N_STATES = 1 << (CONSTRAINT_LENGTH - 1)
_TAIL = CONSTRAINT_LENGTH - 1


class BlockLengthError(ValueError):
    """Raised when a bit or LLR sequence has the wrong length."""


@dataclass(frozen=True)
class BlockFormat:
    """Transport-block size (CRC included) and rate-matched codeword length."""

    tb_bits: int = 84
    n_coded: int = 167

    def __post_init__(self):
        if self.tb_bits <= CRC_BITS:
            raise ValueError(f"tb_bits must exceed {CRC_BITS}, got {self.tb_bits}")
        if self.n_coded <= 0:
            raise ValueError("n_coded must be positive")

    @property
    def info_bits(self) -> int:
        return self.tb_bits - CRC_BITS

    @property
    def n_mother(self) -> int:
        return 2 * (self.tb_bits + _TAIL)


DEFAULT_FORMAT = BlockFormat()
# 42-bit block onto 84 spread units, used by the preamble-mode data region.
HALF_FORMAT = BlockFormat(tb_bits=42, n_coded=84)


def _as_bits(bits) -> np.ndarray:
    return np.asarray(bits, dtype=np.uint8).ravel() & 1


def crc16_bitwise(bits) -> np.ndarray:
    """CRC-16 remainder by bit-serial long division (zero init, no final xor)."""
    reg = 0
    for b in _as_bits(bits):
        fb = ((reg >> 15) & 1) ^ int(b)
        reg = (reg << 1) & 0xFFFF
        if fb:
            reg ^= CRC_POLY
    return np.array([(reg >> (15 - i)) & 1 for i in range(CRC_BITS)], dtype=np.uint8)


@lru_cache(maxsize=None)
def _crc_matrix(n: int) -> np.ndarray:
    # The CRC is linear over GF(2) with zero init, so column j is the CRC of e_j.
    eye = np.eye(n, dtype=np.uint8)
    return np.stack([crc16_bitwise(eye[j]) for j in range(n)], axis=1)


def crc16(bits) -> np.ndarray:
    bits = _as_bits(bits)
    return (_crc_matrix(bits.size).astype(np.int64) @ bits) % 2


def crc_attach(info_bits, fmt: BlockFormat = DEFAULT_FORMAT) -> np.ndarray:
    """Append the 16-bit CRC to ``fmt.info_bits`` payload bits."""
    info = _as_bits(info_bits)
    if info.size != fmt.info_bits:
        raise BlockLengthError(f"expected {fmt.info_bits} info bits, got {info.size}")
    return np.concatenate([info, crc16(info).astype(np.uint8)])


def crc_check(block, fmt: BlockFormat = DEFAULT_FORMAT) -> bool:
    block = _as_bits(block)
    if block.size != fmt.tb_bits:
        raise BlockLengthError(f"expected {fmt.tb_bits}-bit block, got {block.size}")
    return bool(np.array_equal(crc16(block[: fmt.info_bits]), block[fmt.info_bits :]))


def _taps(g: int) -> np.ndarray:
    # MSB of the octal generator multiplies the current input bit.
    return np.array([(g >> (CONSTRAINT_LENGTH - 1 - i)) & 1 for i in range(CONSTRAINT_LENGTH)], dtype=np.int64)


_TAP0 = _taps(GENERATORS[0])
_TAP1 = _taps(GENERATORS[1])


def conv_encode(bits) -> np.ndarray:
    """Terminated (zero-tail) mother-code output, interleaved ``[a0, b0, a1, b1, ...]``."""
    u = np.concatenate([_as_bits(bits), np.zeros(_TAIL, np.uint8)]).astype(np.int64)
    n = u.size
    out = np.empty(2 * n, dtype=np.uint8)
    out[0::2] = np.convolve(u, _TAP0)[:n] % 2
    out[1::2] = np.convolve(u, _TAP1)[:n] % 2
    return out


@lru_cache(maxsize=None)
def puncture_positions(n_mother: int, n_coded: int) -> np.ndarray:
    """Mother-code positions removed by rate matching, spread evenly."""
    n_p = n_mother - n_coded
    if n_p < 0:
        raise ValueError(f"cannot rate-match {n_mother} bits up to {n_coded}")
    if n_p == 0:
        return np.zeros(0, dtype=np.int64)
    return np.floor((np.arange(n_p) + 0.5) * n_mother / n_p).astype(np.int64)


@lru_cache(maxsize=None)
def _kept_positions(n_mother: int, n_coded: int) -> np.ndarray:
    keep = np.ones(n_mother, dtype=bool)
    keep[puncture_positions(n_mother, n_coded)] = False
    return np.flatnonzero(keep)


def fec_encode(block, fmt: BlockFormat = DEFAULT_FORMAT) -> np.ndarray:
    """Encode a transport block to ``fmt.n_coded`` bits."""
    block = _as_bits(block)
    if block.size != fmt.tb_bits:
        raise BlockLengthError(f"expected {fmt.tb_bits}-bit block, got {block.size}")
    return conv_encode(block)[_kept_positions(fmt.n_mother, fmt.n_coded)]


def _parity(x: int) -> int:
    return bin(x).count("1") & 1


def _branch_table():
    # State ns has newest bit u = ns >> 5 and predecessors ((ns << 1) & 63) | b.
    # Entry [ns, b] is the 2-bit output label of that transition.
    label = np.zeros((_N_STATES, 2), dtype=np.int64)
    for ns in range(_N_STATES):
        for b in (0, 1):
            s = ((ns << 1) & (_N_STATES - 1)) | b
            reg = ((ns >> (CONSTRAINT_LENGTH - 2)) << (CONSTRAINT_LENGTH - 1)) | s
            label[ns, b] = (_parity(reg & GENERATORS[0]) << 1) | _parity(reg & GENERATORS[1])
    return label


_LABEL = _branch_table()


@njit(cache=True)
def _viterbi_batch(llr, label, n_steps):
    n_batch = llr.shape[0]
    n_states = label.shape[0]
    mask = n_states - 1
    decoded = np.zeros((n_batch, n_steps), dtype=np.uint8)
    dec = np.zeros((n_steps, n_states), dtype=np.uint8)
    pm = np.empty(n_states)
    new = np.empty(n_states)
    bm = np.empty(4)
    for b in range(n_batch):
        pm[:] = -1e300
        pm[0] = 0.0
        for t in range(n_steps):
            l0 = llr[b, 2 * t]
            l1 = llr[b, 2 * t + 1]
            # label bits (a, b) -> correlation with BPSK (+1 for bit 0)
            bm[0] = l0 + l1
            bm[1] = l0 - l1
            bm[2] = -l0 + l1
            bm[3] = -l0 - l1
            for ns in range(n_states):
                s0 = (ns << 1) & mask
                m0 = pm[s0] + bm[label[ns, 0]]
                m1 = pm[s0 | 1] + bm[label[ns, 1]]
                if m1 > m0:
                    new[ns] = m1
                    dec[t, ns] = 1
                else:
                    new[ns] = m0
                    dec[t, ns] = 0
            for ns in range(n_states):
                pm[ns] = new[ns]
        s = 0
        for t in range(n_steps - 1, -1, -1):
            decoded[b, t] = s >> 5
            s = ((s << 1) & mask) | dec[t, s]
    return decoded


def depuncture(llrs, fmt: BlockFormat = DEFAULT_FORMAT) -> np.ndarray:
    llrs = np.asarray(llrs, dtype=np.float64)
    if llrs.shape[-1] != fmt.n_coded:
        raise BlockLengthError(f"expected {fmt.n_coded} LLRs, got {llrs.shape[-1]}")
    if not np.all(np.isfinite(llrs)):
        raise ValueError("LLRs must be finite")
    full = np.zeros(llrs.shape[:-1] + (fmt.n_mother,))
    full[..., _kept_positions(fmt.n_mother, fmt.n_coded)] = llrs
    return full


def fec_decode_batch(llrs, fmt: BlockFormat = DEFAULT_FORMAT) -> tuple[np.ndarray, np.ndarray]:
    """Decode a ``(B, n_coded)`` LLR array.

    Returns the ``(B, tb_bits)`` hard block estimates and a ``(B,)`` boolean
    CRC pass mask.
    """
    llrs = np.atleast_2d(llrs)
    full = depuncture(llrs, fmt)
    n_steps = fmt.tb_bits + _TAIL
    dec = _viterbi_batch(np.ascontiguousarray(full), _LABEL, n_steps)[:, : fmt.tb_bits]
    g = _crc_matrix(fmt.info_bits).astype(np.int64)
    crc = (dec[:, : fmt.info_bits].astype(np.int64) @ g.T) % 2
    ok = np.all(crc == dec[:, fmt.info_bits :], axis=1)
    return dec, ok


def fec_decode(llrs, fmt: BlockFormat = DEFAULT_FORMAT) -> tuple[np.ndarray, bool]:
    """Decode ``fmt.n_coded`` LLRs into a transport block and its CRC outcome."""
    llrs = np.asarray(llrs, dtype=np.float64)
    if llrs.ndim != 1:
        raise BlockLengthError("fec_decode takes a single LLR vector")
    dec, ok = fec_decode_batch(llrs[None, :], fmt)
    return dec[0], bool(ok[0])
