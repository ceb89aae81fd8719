"""Blind spatial combining vector sets and conventional MRC/ZF combining."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import ReceiveGrid


class CombiningConfigError(ValueError):
    pass


class DegenerateCombiningError(np.linalg.LinAlgError):
    """The stacked channel matrix cannot be zero-forced."""


@dataclass(frozen=True)
class CombiningVectorSet:
    name: str
    vectors: np.ndarray  # (m_v, m), unit-norm rows

    @property
    def m(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return self.vectors.shape[0]

    @classmethod
    def from_vectors(cls, name, vectors) -> "CombiningVectorSet":
        v = np.atleast_2d(np.asarray(vectors, dtype=complex))
        norms = np.linalg.norm(v, axis=1, keepdims=True)
        if np.any(norms == 0):
            raise CombiningConfigError("combining vectors must be non-zero")
        return cls(name, v / norms)


_j = 1j

_V2_6 = [[1, 0], [0, 1], [1, 1], [1, -1], [1, _j], [1, -_j]]

# 24 vectors for four antennas: every antenna pair with relative phase +-1, +-i
_V4_24 = [
    [1, 1, 0, 0], [1, -1, 0, 0], [1, 0, 1, 0], [1, 0, -1, 0],
    [1, 0, 0, 1], [1, 0, 0, -1], [0, 1, 1, 0], [0, 1, -1, 0],
    [0, 1, 0, 1], [0, 1, 0, -1], [0, 0, 1, 1], [0, 0, 1, -1],
    [1, _j, 0, 0], [1, -_j, 0, 0], [1, 0, _j, 0], [1, 0, -_j, 0],
    [1, 0, 0, _j], [1, 0, 0, -_j], [0, 1, _j, 0], [0, 1, -_j, 0],
    [0, 1, 0, _j], [0, 1, 0, -_j], [0, 0, 1, _j], [0, 0, 1, -_j],
]

_V4_16 = [
    [1, 1, 1, 1], [1, -1, 1, -1], [1, 1, -1, -1], [1, -1, -1, 1],
    [1, -_j, -_j, 1], [1, _j, _j, -1], [1, -_j, -_j, -1], [1, _j, -_j, 1],
    [1, -1, -_j, -_j], [1, 1, -_j, _j], [1, -1, _j, _j], [1, 1, _j, -_j],
    [1, _j, -1, _j], [1, -_j, -1, -_j], [1, _j, 1, -_j], [1, -_j, 1, _j],
]

_BUILTIN = {(2, "v2_6"): _V2_6, (4, "v4_24"): _V4_24, (4, "v4_16"): _V4_16}


def builtin_set(m: int, variant: str) -> CombiningVectorSet:
    """Built-in combining set; ``variant`` is ``v2_6`` (m=2), ``v4_24`` or ``v4_16`` (m=4).

    The variant ``single`` selects antenna 0 only (``[1, 0, ..., 0]``) for any ``m``.
    """
    if variant == "single":
        if m < 1:
            raise CombiningConfigError("m must be positive")
        e = np.zeros((1, m), dtype=complex)
        e[0, 0] = 1
        return CombiningVectorSet("single", e)
    try:
        vecs = _BUILTIN[(m, variant)]
    except KeyError:
        raise CombiningConfigError(f"no built-in combining set {variant!r} for m={m}") from None
    return CombiningVectorSet.from_vectors(variant, vecs)


def _grid_array(grid) -> np.ndarray:
    return grid.y if isinstance(grid, ReceiveGrid) else np.asarray(grid)


def combine(grid, v) -> np.ndarray:
    """Inner-product combining ``z = sum_a conj(v_a) y_a`` at every sample; returns ``(L, T)``."""
    y = _grid_array(grid)
    v = np.asarray(v, dtype=complex).ravel()
    if v.size != y.shape[0]:
        raise ValueError(f"combining vector has {v.size} entries, grid has {y.shape[0]} antennas")
    return np.tensordot(v.conj(), y, axes=1)


def combine_all(grid, vset: CombiningVectorSet) -> np.ndarray:
    """Combine with every vector of the set at once; returns ``(m_v, L, T)``."""
    y = _grid_array(grid)
    if vset.m != y.shape[0]:
        raise ValueError(f"vector set is for m={vset.m}, grid has {y.shape[0]} antennas")
    return np.tensordot(vset.vectors.conj(), y, axes=1)


def csc_weights(h_est, mode: str, target: int) -> np.ndarray:
    """MRC or ZF combining vector for UE ``target`` from estimated channels ``(K, m)``.

    ZF uses the target row of the pseudo-inverse of ``H = [h_1 ... h_K]`` (m x K),
    returned as the vector ``v`` with ``v^H H = e_target`` when ``K <= m``.
    """
    H = np.atleast_2d(np.asarray(h_est, dtype=complex)).T  # (m, K)
    m, K = H.shape
    if not 0 <= target < K:
        raise IndexError(f"target {target} outside 0..{K - 1}")
    if mode == "mrc":
        h = H[:, target]
        n = np.linalg.norm(h)
        if n == 0:
            raise DegenerateCombiningError("zero channel estimate")
        return h / n
    if mode == "zfc":
        gram = H.conj().T @ H if K <= m else H @ H.conj().T
        if np.linalg.matrix_rank(gram) < min(m, K):
            raise DegenerateCombiningError("rank-deficient channel matrix")
        pinv = np.linalg.pinv(H)  # (K, m)
        return pinv[target].conj()
    raise CombiningConfigError(f"unknown combining mode {mode!r}")


def csc_combine(grid, h_est, mode: str, target: int) -> np.ndarray:
    """Conventional spatial combining toward ``target`` (``mode`` is ``mrc`` or ``zfc``)."""
    return combine(grid, csc_weights(h_est, mode, target))
