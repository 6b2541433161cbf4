"""Symbol-aware GLRT transmitter identification and P-EGC QPSK decoding."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .combiner import PegcCombiner, combine
from .errors import DimensionMismatch, RankDeficient
from .model import QPSK, ChannelSet, NoiseProfile, SymbolBlock
from .numerics import column_projector

TIE_TOL = 1e-9


@dataclass(frozen=True)
class DetectionOutcome:
    statistics: np.ndarray  # T_1..T_K
    detected: int
    true_user: int
    tie: bool

    @property
    def correct(self) -> bool:
        return self.detected == self.true_user


def _row_projector(S: SymbolBlock) -> np.ndarray:
    """``S^+ S`` with ``S^+ = S^H (S S^H)^{-1}``: projector onto the row space of S."""
    S = S.S
    gram = S @ S.conj().T
    sv = np.linalg.svd(gram, compute_uv=False)
    if sv[-1] <= 1e-10 * sv[0]:
        raise RankDeficient("symbol matrix does not have full row rank")
    return S.conj().T @ np.linalg.solve(gram, S)


def reconstruct_signal(H_i, Y, S: SymbolBlock) -> np.ndarray:
    """ML reconstruction ``H_i H_i^+ Y S^+ S`` of the noiseless signal under hypothesis i."""
    Y = np.asarray(Y)
    H_i = np.asarray(H_i)
    if Y.shape != (H_i.shape[0], S.L):
        raise DimensionMismatch(f"Y has shape {Y.shape}, expected {(H_i.shape[0], S.L)}")
    return column_projector(H_i) @ Y @ _row_projector(S)


def _statistic(residual_sq: float, sigma_i_sq: float, n_obs: int) -> float:
    return -n_obs * math.log(math.pi * sigma_i_sq) - residual_sq / sigma_i_sq


def test_statistic(H_i, sigma_i_sq: float, Y, S: SymbolBlock) -> float:
    """``-N_r L ln(pi sigma_i^2) - ||Y_hat_i - Y||_F^2 / sigma_i^2``."""
    if sigma_i_sq <= 0:
        raise ValueError("sigma_i_sq must be positive")
    Y = np.asarray(Y)
    R = reconstruct_signal(H_i, Y, S) - Y
    return _statistic(float(np.vdot(R, R).real), sigma_i_sq, Y.size)


def glrt_detect(channels: ChannelSet, noise: NoiseProfile, Y, S: SymbolBlock, true_user: int) -> DetectionOutcome:
    """Evaluate every user's statistic and pick the largest (lowest index on ties)."""
    Y = np.asarray(Y)
    # the row projection is shared by all hypotheses
    YQ = Y @ _row_projector(S)
    stats = np.empty(len(channels))
    for i, H_i in enumerate(channels.H):
        R = column_projector(H_i) @ YQ - Y
        stats[i] = _statistic(float(np.vdot(R, R).real), float(noise.sigmas[i]), Y.size)
    best = float(stats.max())
    detected = int(np.argmax(stats))  # argmax returns the first maximiser
    tie = int(np.count_nonzero(stats >= best - TIE_TOL)) >= 2
    return DetectionOutcome(stats, detected, int(true_user), tie)


def slice_qpsk(samples) -> np.ndarray:
    """Nearest QPSK point by quadrant; samples on an axis go to the nonnegative side."""
    samples = np.asarray(samples)
    re = np.where(samples.real >= 0, 1.0, -1.0)
    im = np.where(samples.imag >= 0, 1.0, -1.0)
    return (re + 1j * im) / math.sqrt(2.0)


def decode_symbols(C: PegcCombiner, Y, S_ref: SymbolBlock) -> tuple:
    """Slice the combined samples and count mismatches against ``S_ref``."""
    Z = combine(C, Y)
    if Z.shape != S_ref.S.shape:
        raise DimensionMismatch(f"combined block has shape {Z.shape}, reference {S_ref.S.shape}")
    decoded = slice_qpsk(Z)
    errors = int(np.count_nonzero(np.abs(decoded - S_ref.S) > 1e-9))
    return SymbolBlock(decoded, QPSK.copy()), errors
