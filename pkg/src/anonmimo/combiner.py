"""Partitioned equal-gain combining (P-EGC).

Receive antennas are split into one contiguous group per data stream; each
stream output is the plain sum of its group's antenna signals, so the
combiner needs no channel knowledge.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, InvalidDimensions


@dataclass(frozen=True)
class AntennaPartition:
    groups: tuple  # tuple of tuples of antenna indices, one per stream
    N_r: int

    @property
    def sizes(self) -> tuple:
        return tuple(len(g) for g in self.groups)

    @property
    def N_s(self) -> int:
        return len(self.groups)


@dataclass(frozen=True)
class PegcCombiner:
    partition: AntennaPartition
    C: np.ndarray  # (N_s, N_r) 0/1 matrix


def build_partition(N_r: int, N_s: int) -> AntennaPartition:
    """Contiguous groups; the first ``N_r mod N_s`` groups get one extra antenna."""
    if N_s < 1 or N_r <= N_s:
        raise InvalidDimensions(f"need N_r > N_s >= 1, got N_r={N_r}, N_s={N_s}")
    base, extra = divmod(N_r, N_s)
    groups = []
    start = 0
    for m in range(N_s):
        size = base + (1 if m < extra else 0)
        groups.append(tuple(range(start, start + size)))
        start += size
    return AntennaPartition(tuple(groups), N_r)


def build_combiner(partition: AntennaPartition) -> PegcCombiner:
    C = np.zeros((partition.N_s, partition.N_r), dtype=complex)
    for m, group in enumerate(partition.groups):
        C[m, list(group)] = 1.0
    C.setflags(write=False)
    return PegcCombiner(partition, C)


def combine(combiner: PegcCombiner, Y: np.ndarray) -> np.ndarray:
    """Per-stream sums of received samples: ``C @ Y`` for an ``N_r x L`` block."""
    Y = np.asarray(Y)
    if Y.ndim == 1:
        Y = Y[:, None]
    if Y.shape[0] != combiner.partition.N_r:
        raise DimensionMismatch(f"Y has {Y.shape[0]} rows, combiner expects {combiner.partition.N_r}")
    return np.stack([Y[list(g)].sum(axis=0) for g in combiner.partition.groups])


def effective_noise_variance(partition: AntennaPartition, m: int, sigma_k_sq: float) -> float:
    """Noise power after summing the ``|S_m|`` antennas of stream ``m``."""
    if not 0 <= m < partition.N_s:
        raise IndexError(f"stream index {m} out of range")
    return len(partition.groups[m]) * sigma_k_sq
