"""Closed-form anonymity metrics: KLD between hypotheses, its noise-only
constant term, the trace difference, residual expectations and the IPM
complexity estimate."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import bisect

from .errors import RootNotFound
from .model import ChannelSet, NoiseProfile, SymbolBlock, SystemConfig
from .detector import _row_projector
from .numerics import as_generator, column_projector, projection_complement, sample_cscg


@dataclass(frozen=True)
class AnonymityReport:
    kld: float
    e_const: float
    delta: float
    expected_Dk: float
    per_alias: dict = field(default_factory=dict)  # alias index -> (kld, e_const, delta)


def transmitted_block(W_block, S: SymbolBlock) -> np.ndarray:
    """Stack ``v^l = W^l s^l`` into an ``N_t x L`` matrix.

    ``W_block`` is either one ``N_t x N_s`` matrix used for every slot or a
    sequence of ``L`` per-slot matrices.
    """
    if isinstance(W_block, np.ndarray) and W_block.ndim == 2:
        return W_block @ S.S
    mats = list(W_block)
    if len(mats) != S.L:
        raise ValueError(f"expected {S.L} per-slot precoders, got {len(mats)}")
    return np.stack([np.asarray(W) @ S.S[:, l] for l, W in enumerate(mats)], axis=1)


def e_const(sigma_k_sq: float, sigma_i_sq: float, N_r: int, L: int, N_s: int, N_t: int) -> float:
    """Noise-only part of ``E[T_k - T_i]`` under hypothesis k (nats)."""
    if sigma_k_sq <= 0 or sigma_i_sq <= 0:
        raise ValueError("variances must be positive")
    ratio = sigma_k_sq / sigma_i_sq
    return N_r * L * math.log(ratio) + (1.0 - ratio) * (N_r * L - N_s * N_t)


def trace_delta(channels: ChannelSet, k: int, i: int, W_block, S: SymbolBlock) -> float:
    """Energy of ``H_k V`` outside the column space of ``H_i``, summed over slots."""
    R = projection_complement(channels[i]) @ (channels[k] @ transmitted_block(W_block, S))
    return float(np.vdot(R, R).real)


def cross_traces(channels: ChannelSet, k: int, i: int, W_block, S: SymbolBlock) -> tuple:
    """``(tr(V^H H_k^H H_k V), tr(V^H H_k^H P_i H_k V))``; their difference is the trace delta."""
    X = channels[k] @ transmitted_block(W_block, S)
    P = np.eye(X.shape[0]) - projection_complement(channels[i])
    return float(np.vdot(X, X).real), float(np.vdot(X, P @ X).real)


def kld_closed_form(channels: ChannelSet, k: int, i: int, noise: NoiseProfile, W_block, S: SymbolBlock) -> float:
    """``D_KL(p_k || p_i)`` between the received-signal laws of users k and i."""
    N_r, N_t = channels[k].shape
    sk, si = float(noise.sigmas[k]), float(noise.sigmas[i])
    delta = trace_delta(channels, k, i, W_block, S)
    return (N_r * S.L * math.log(si / sk)
            + (1.0 - sk / si) * (S.N_s * N_t - N_r * S.L)
            + delta / si)


def anonymity_report(channels: ChannelSet, k: int, alias_set, noise: NoiseProfile, W_block, S: SymbolBlock) -> AnonymityReport:
    """Per-alias KLD breakdown; the headline numbers belong to the closest alias."""
    if not alias_set:
        raise ValueError("alias set is empty")
    N_r, N_t = channels[k].shape
    per = {}
    for i in alias_set:
        ec = e_const(float(noise.sigmas[k]), float(noise.sigmas[i]), N_r, S.L, S.N_s, N_t)
        dl = trace_delta(channels, k, i, W_block, S)
        per[int(i)] = (-ec + dl / float(noise.sigmas[i]), ec, dl)
    worst = min(per, key=lambda j: per[j][0])
    kld, ec, dl = per[worst]
    return AnonymityReport(kld, ec, dl, -kld, per)


def expected_residuals(sigma_k_sq, sigma_i_sq, N_r, L, N_s, N_t, cross_trace) -> tuple:
    """Means of ``||Y_hat_k - Y||^2`` and ``||Y_hat_i - Y||^2`` under hypothesis k."""
    if sigma_k_sq <= 0 or sigma_i_sq <= 0:
        raise ValueError("variances must be positive")
    full, projected = cross_trace
    E_Fk = sigma_k_sq * (N_r * L - N_t * N_s)
    return E_Fk, E_Fk + (full - projected)


@dataclass(frozen=True)
class EconstSweep:
    r: np.ndarray
    e_const: np.ndarray
    r_minus: float

    def rows(self):
        return list(zip(self.r.tolist(), self.e_const.tolist()))

    def to_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["r", "E_const"])
            for r, e in self.rows():
                writer.writerow([format(r, ".17g"), format(e, ".17g")])


def e_const_of_ratio(r: float, config: SystemConfig) -> float:
    """E_const as a function of ``r = sigma_i^2 / sigma_k^2``."""
    return e_const(1.0, r, config.N_r, config.L, config.N_s, config.N_t)


def e_const_sweep(config: SystemConfig, r_min: float = 0.5, r_max: float = 2.0, steps: int = 200) -> EconstSweep:
    """Tabulate E_const on a log grid and locate its sub-unity root ``r_-``."""
    if not 0 < r_min < r_max:
        raise ValueError("require 0 < r_min < r_max")
    if steps < 2:
        raise ValueError("steps must be at least 2")
    grid = np.geomspace(r_min, r_max, steps)
    values = np.array([e_const_of_ratio(r, config) for r in grid])
    A = config.N_r * config.L
    B = A - config.N_s * config.N_t
    # E_const rises from -inf to its maximum at r = B/A and falls back to 0 at r = 1
    peak = B / A
    f = lambda r: e_const_of_ratio(r, config)
    if not (r_min < peak < 1.0) or f(r_min) >= 0 or f(peak) <= 0:
        raise RootNotFound(f"E_const has no sign change on ({r_min:g}, 1)")
    r_minus = bisect(f, r_min, peak, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    return EconstSweep(grid, values, float(r_minus))


@dataclass(frozen=True)
class ComplexityEstimate:
    n_var: int
    beta: int
    flop_order: float  # L ln(1/tau) sqrt(beta) (N_t N_s)^3
    per_slot: float  # ln(1/tau) sqrt(beta) [form + factor]


def complexity_estimate(config: SystemConfig, tau: float = 1e-8) -> ComplexityEstimate:
    """Worst-case IPM cost counts for the full-matrix formulation of the slot problem.

    The solver here optimises only ``2 N_t + 1`` variables, so these figures
    overstate its actual work; they are reported for comparison.
    """
    N_t, N_s, N_r, a = config.N_t, config.N_s, config.N_r, config.a
    n_var = 2 * N_t * N_s + 1
    beta = 2 * N_s + 2 * (1 + a)
    log_term = math.log(1.0 / tau)
    form = 2 * N_s * n_var ** 2 + n_var * (2 * N_s + N_t ** 2 + a * N_r ** 2)
    per_slot = log_term * math.sqrt(beta) * (form + n_var ** 3)
    flop_order = config.L * log_term * math.sqrt(beta) * (N_t * N_s) ** 3
    return ComplexityEstimate(n_var, beta, flop_order, per_slot)


def kld_monte_carlo(channels: ChannelSet, k: int, i: int, noise: NoiseProfile, W_block, S: SymbolBlock,
                    draws: int, rng, batch: int = 2000) -> tuple:
    """Sample mean and standard error of ``T_k - T_i`` with ``Y = H_k V + N_k``.

    Evaluates the GLRT statistics directly, so it serves as an independent
    check of :func:`kld_closed_form`.
    """
    if draws < 2:
        raise ValueError("need at least two draws for a standard error")
    gen = as_generator(rng)
    X = channels[k] @ transmitted_block(W_block, S)
    Q = _row_projector(S)
    Pk, Pi = column_projector(channels[k]), column_projector(channels[i])
    sk, si = float(noise.sigmas[k]), float(noise.sigmas[i])
    diffs = []
    done = 0
    while done < draws:
        n = min(batch, draws - done)
        N = np.stack([sample_cscg(gen, *X.shape, sk) for _ in range(n)])
        Y = X + N
        YQ = Y @ Q
        rk = np.sum(np.abs(Pk @ YQ - Y) ** 2, axis=(1, 2))
        ri = np.sum(np.abs(Pi @ YQ - Y) ** 2, axis=(1, 2))
        diffs.append(X.size * math.log(si / sk) - rk / sk + ri / si)
        done += n
    d = np.concatenate(diffs)
    return float(d.mean()), float(d.std(ddof=1) / math.sqrt(d.size))
