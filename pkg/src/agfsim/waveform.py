"""Transmit side: spreading-code pool, BPSK spreading, preambles.

A UE's frame is an ``L x T`` grid of chips: column ``t`` carries BPSK symbol
``s_t`` spread by the UE's code. Transmit chips are scaled so that every
resource element carries unit average energy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fec import DEFAULT_FORMAT, BlockFormat, crc_attach, fec_encode

QPSK_ALPHABET = np.array([1 + 1j, 1 - 1j, -1 + 1j, -1 - 1j])


class PoolConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SpreadingCodePool:
    codes: np.ndarray  # (N, L) complex, unit-norm rows

    @property
    def size(self) -> int:
        return self.codes.shape[0]

    @property
    def length(self) -> int:
        return self.codes.shape[1]

    def __getitem__(self, k) -> np.ndarray:
        return self.codes[k]


def build_pool(L: int = 4, N: int = 64, seed: int = 2019) -> SpreadingCodePool:
    """Draw ``N`` distinct unit-norm codes with i.i.d. ``{+-1+-1j}`` chips.

    Codes are distinct up to a common phase: sequences that only differ by a
    rotation in ``{1, 1j, -1, -1j}`` (which maps the alphabet onto itself)
    would be indistinguishable to a blind receiver, so each draw is rotated to
    put ``1+1j`` in the first chip before de-duplication. That leaves
    ``4**(L-1)`` classes; for ``L=4`` the 64-code pool is the full class set
    in seed-dependent order.
    """
    if L < 1 or N < 1:
        raise PoolConfigError("L and N must be positive")
    n_classes = len(QPSK_ALPHABET) ** (L - 1)
    if N > n_classes:
        raise PoolConfigError(f"only {n_classes} phase-distinct length-{L} sequences exist, asked for {N}")
    rng = np.random.default_rng(seed)
    seen: set[tuple] = set()
    codes = []
    while len(codes) < N:
        c = QPSK_ALPHABET[rng.integers(0, 4, size=L)]
        c = c * (1 + 1j) / c[0]
        key = tuple(np.round(c).astype(complex))
        if key in seen:
            continue
        seen.add(key)
        codes.append(c)
    codes = np.array(codes)
    return SpreadingCodePool(codes / np.linalg.norm(codes, axis=1, keepdims=True))


def bpsk(bits) -> np.ndarray:
    return 1.0 - 2.0 * np.asarray(bits, dtype=np.float64)


def modulate_and_spread(bits, code) -> np.ndarray:
    """BPSK-map ``T`` coded bits and spread them: returns the ``L x T`` grid ``c s^T``."""
    return np.outer(np.asarray(code, dtype=complex), bpsk(bits))


@dataclass
class UeTransmission:
    ue_id: int
    info_bits: np.ndarray
    code_index: int
    symbols: np.ndarray  # (T,) in {+1, -1}
    chips: np.ndarray  # (L, T), unit energy per resource element
    block: np.ndarray  # info + CRC


def make_transmission(ue_id, info_bits, code_index, pool: SpreadingCodePool, fmt: BlockFormat = DEFAULT_FORMAT) -> UeTransmission:
    block = crc_attach(info_bits, fmt)
    coded = fec_encode(block, fmt)
    spread = modulate_and_spread(coded, pool[code_index])
    return UeTransmission(
        ue_id=ue_id,
        info_bits=np.asarray(info_bits, dtype=np.uint8),
        code_index=int(code_index),
        symbols=bpsk(coded),
        chips=np.sqrt(pool.length) * spread,
        block=block,
    )


def reconstruct_chips(block, code, fmt: BlockFormat = DEFAULT_FORMAT) -> np.ndarray:
    """Unit-energy-per-RE chips of an already CRC-attached block."""
    code = np.asarray(code)
    return np.sqrt(code.size) * modulate_and_spread(fec_encode(block, fmt), code)


def draw_code_indices(K: int, N: int, rng: np.random.Generator) -> np.ndarray:
    """Independent uniform code selection per UE (collisions allowed)."""
    return rng.integers(0, N, size=K)


def collision_probability(K: int, N: int) -> float:
    """Probability that at least two of ``K`` UEs choose the same of ``N`` signatures."""
    p_free = 1.0
    for i in range(K):
        p_free *= (N - i) / N
    return 1.0 - max(p_free, 0.0)


def has_collision(indices) -> bool:
    indices = np.asarray(indices)
    return np.unique(indices).size < indices.size


PREAMBLE_LENGTH = 336


def build_preamble_pool(P: int, length: int = PREAMBLE_LENGTH) -> np.ndarray:
    """First ``P`` rows of the unitary ``length``-point DFT matrix, shape ``(P, length)``."""
    if P < 1 or P > length:
        raise PoolConfigError(f"cannot build {P} orthogonal preambles of length {length}")
    n = np.arange(length)
    return np.exp(-2j * np.pi * np.outer(np.arange(P), n) / length) / np.sqrt(length)
