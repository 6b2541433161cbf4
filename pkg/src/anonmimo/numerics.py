"""Complex-matrix primitives and reproducible random streams."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import RankDeficient

RANK_TOL = 1e-10
# Normal equations square the condition number; above this Gram condition number use SVD.
NORMAL_EQ_COND_MAX = 1e6

_MASK64 = (1 << 64) - 1


def _mix(stream_id: int, tag) -> int:
    h = hashlib.blake2b(digest_size=8)
    h.update(int(stream_id & _MASK64).to_bytes(8, "little"))
    h.update(repr(tag).encode())
    return int.from_bytes(h.digest(), "little")


@dataclass(frozen=True)
class RngStream:
    """A keyed counter-based random stream.

    The pair ``(master_seed, stream_id)`` is used directly as the Philox key,
    so two streams with the same pair produce identical sequences on any host
    and independent of the order in which streams are consumed.
    """

    master_seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        key = ((self.stream_id & _MASK64) << 64) | (self.master_seed & _MASK64)
        return np.random.Generator(np.random.Philox(key=key))

    def substream(self, *tags) -> "RngStream":
        """Derive a child stream labelled by ``tags`` (ints or strings)."""
        sid = self.stream_id
        for tag in tags:
            sid = _mix(sid, tag)
        return RngStream(self.master_seed, sid)


def as_generator(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError(f"expected RngStream or numpy Generator, got {type(rng).__name__}")


def _check_full_column_rank(H: np.ndarray) -> np.ndarray:
    if H.ndim != 2:
        raise ValueError("expected a 2-D matrix")
    rows, cols = H.shape
    if rows < cols:
        raise RankDeficient(f"{rows}x{cols} matrix cannot have full column rank")
    if not np.all(np.isfinite(H)):
        raise ValueError("matrix has non-finite entries")
    sv = np.linalg.svd(H, compute_uv=False)
    if sv.size == 0 or sv[0] == 0.0 or sv[-1] <= RANK_TOL * sv[0]:
        raise RankDeficient("smallest singular value below rank tolerance")
    return sv


def pseudo_inverse(H: np.ndarray) -> np.ndarray:
    """Left pseudo-inverse ``(H^H H)^{-1} H^H`` of a full-column-rank matrix.

    Falls back to an SVD-based inverse when ``H`` is badly conditioned.
    """
    H = np.asarray(H, dtype=complex)
    sv = _check_full_column_rank(H)
    if sv[0] / sv[-1] <= NORMAL_EQ_COND_MAX ** 0.5:
        # cond(H^H H) = cond(H)^2, keep it below the threshold
        gram = H.conj().T @ H
        return np.linalg.solve(gram, H.conj().T)
    U, s, Vh = np.linalg.svd(H, full_matrices=False)
    return (Vh.conj().T / s) @ U.conj().T


def projection_complement(H: np.ndarray) -> np.ndarray:
    """Orthogonal projector ``I - H H^+`` onto the complement of ``col(H)``."""
    H = np.asarray(H, dtype=complex)
    P = np.eye(H.shape[0], dtype=complex) - H @ pseudo_inverse(H)
    # symmetrise to remove round-off asymmetry
    return 0.5 * (P + P.conj().T)


def column_projector(H: np.ndarray) -> np.ndarray:
    """Orthogonal projector ``H H^+`` onto ``col(H)``."""
    H = np.asarray(H, dtype=complex)
    P = H @ pseudo_inverse(H)
    return 0.5 * (P + P.conj().T)


def sample_cscg(rng, rows: int, cols: int, variance: float) -> np.ndarray:
    """Matrix of i.i.d. circularly-symmetric complex Gaussian entries CN(0, variance)."""
    if variance < 0:
        raise ValueError("variance must be nonnegative")
    gen = as_generator(rng)
    scale = np.sqrt(variance / 2.0)
    re = gen.standard_normal((rows, cols))
    im = gen.standard_normal((rows, cols))
    return scale * (re + 1j * im)
