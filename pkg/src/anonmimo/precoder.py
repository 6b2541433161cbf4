"""Anonymous constructive-interference (CI) precoding.

Each timeslot solves a small SOCP: maximise the CI margin ``gamma`` over the
effective transmit vector ``v = W s`` subject to the QPSK sector constraints
at every combiner output, a per-slot power budget and one anonymity cone per
alias user.

The constraints only see ``W`` through ``v``, so the solver works with the
``2 N_t + 1`` real unknowns ``[Re v; Im v; gamma]`` rather than all entries
of ``W``.  The precoder matrix is recovered afterwards as the minimum-norm
rank-one factor ``W = v s^H / ||s||^2``.  :func:`metrics.complexity_estimate`
still reports the larger full-matrix variable count for reference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .combiner import PegcCombiner, effective_noise_variance
from .errors import DimensionMismatch, InfeasibleTimeslot
from .model import ChannelSet, SymbolBlock, SystemConfig
from .numerics import projection_complement
from .socp import DEFAULT_TOL, OPTIMAL, SocpProblem, solve_socp_batch


@dataclass(frozen=True)
class CiGeometry:
    theta: float = math.pi / 4
    gamma: float = 0.0

    def __post_init__(self):
        if not 0 < self.theta < math.pi / 2:
            raise ValueError("theta must lie in (0, pi/2)")
        if self.gamma < 0:
            raise ValueError("gamma must be nonnegative")

    @property
    def tan_theta(self) -> float:
        return math.tan(self.theta)


@dataclass(frozen=True)
class PrecodedBlock:
    W: tuple  # L matrices (N_t, N_s)
    v: tuple  # L vectors (N_t,)
    gammas: np.ndarray  # per-slot margins
    gamma_star: float
    Gamma_star: float  # linear SDR guarantee
    alias_set: tuple

    @property
    def V(self) -> np.ndarray:
        """Transmitted block ``[v^1 ... v^L]`` of shape (N_t, L)."""
        return np.stack(self.v, axis=1)


def _stream_gains(C: PegcCombiner, H_k: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Rows ``g_m = c_m H_{k,m} conj(s_m)`` so that ``u_m = g_m v``."""
    return (C.C @ H_k) * np.conj(s)[:, None]


def rotated_receive_coefficient(C: PegcCombiner, H_k, v, s, m: int) -> complex:
    """Combined stream-``m`` sample rotated by the conjugate target phase."""
    H_k = np.asarray(H_k)
    v = np.asarray(v).reshape(-1)
    s = np.asarray(s).reshape(-1)
    N_s, N_r = C.C.shape
    if H_k.shape != (N_r, v.size) or s.size != N_s:
        raise DimensionMismatch("inconsistent H_k, v or s dimensions")
    if not 0 <= m < N_s:
        raise IndexError(f"stream index {m} out of range")
    return complex(C.C[m] @ (H_k @ v) * np.conj(s[m]))


def ci_satisfied(u_m: complex, geometry: CiGeometry, tol: float = 0.0) -> bool:
    """``|Im u| <= tan(theta) (Re u - gamma)``, optionally relaxed by ``tol``."""
    u_m = complex(u_m)
    return abs(u_m.imag) <= geometry.tan_theta * (u_m.real - geometry.gamma) + tol


def _real_form(M: np.ndarray) -> np.ndarray:
    """Real matrix acting on ``[Re v; Im v]`` that yields ``[Re Mv; Im Mv]``."""
    return np.block([[M.real, -M.imag], [M.imag, M.real]])


def _anonymity_maps(channels: ChannelSet, k: int, alias_set) -> list:
    H_k = channels[k]
    return [projection_complement(channels[i]) @ H_k for i in alias_set]


def _assemble(gains, anon_maps, N_t, config: SystemConfig) -> SocpProblem:
    n = 2 * N_t + 1
    tan_t = math.tan(config.theta)
    gr, gi = gains.real, gains.imag
    re_u = np.hstack([gr, -gi])  # Re u_m as a row over [Re v; Im v]
    im_u = np.hstack([gi, gr])
    rows = []
    for m in range(gains.shape[0]):
        for sign in (1.0, -1.0):
            rows.append((np.append(sign * im_u[m] - tan_t * re_u[m], tan_t), 0.0))
    pad = np.zeros((2 * N_t, 1))
    socs = [(np.hstack([np.eye(2 * N_t), pad]), np.zeros(2 * N_t), math.sqrt(config.slot_power))]
    for M in anon_maps:
        R = _real_form(M)
        socs.append((np.hstack([R, np.zeros((R.shape[0], 1))]), np.zeros(R.shape[0]), math.sqrt(config.anonymity_bound)))
    objective = np.zeros(n)
    objective[-1] = 1.0
    return SocpProblem.build(n, objective, rows, socs)


def assemble_p2(channels: ChannelSet, k: int, alias_set, C: PegcCombiner, s, config: SystemConfig) -> SocpProblem:
    """Per-timeslot margin maximisation as a real SOCP over ``[Re v; Im v; gamma]``."""
    if k in alias_set:
        raise ValueError("the true user cannot be its own alias")
    s = np.asarray(s).reshape(-1)
    H_k = channels[k]
    if s.size != C.C.shape[0] or H_k.shape[0] != C.C.shape[1]:
        raise DimensionMismatch("symbol vector or channel does not match the combiner")
    return _assemble(_stream_gains(C, H_k, s), _anonymity_maps(channels, k, alias_set), H_k.shape[1], config)


def design_block(channels: ChannelSet, k: int, alias_set, C: PegcCombiner, S: SymbolBlock,
                 config: SystemConfig, tol: float = DEFAULT_TOL) -> PrecodedBlock:
    """Solve P2 for every timeslot of the block (one batched solver run)."""
    if k in alias_set:
        raise ValueError("the true user cannot be its own alias")
    H_k = channels[k]
    N_t = H_k.shape[1]
    anon = _anonymity_maps(channels, k, alias_set)
    problems = [_assemble(_stream_gains(C, H_k, S.S[:, l]), anon, N_t, config) for l in range(S.L)]
    solutions = solve_socp_batch(problems, tol=tol)
    W, v, gammas = [], [], []
    for l, sol in enumerate(solutions):
        if sol.status != OPTIMAL:
            raise InfeasibleTimeslot(l, config.epsilon, sol.status)
        vl = sol.x[:N_t] + 1j * sol.x[N_t:2 * N_t]
        s = S.S[:, l]
        W.append(np.outer(vl, np.conj(s)) / np.vdot(s, s).real)
        v.append(vl)
        gammas.append(sol.x[-1])
    gammas = np.array(gammas)
    gamma_star = float(gammas.min())
    # unequal groups: the largest group has the most noise, so it bounds every stream
    sigma_eff = max(effective_noise_variance(C.partition, m, config.sigma_k_sq) for m in range(S.N_s))
    Gamma_star = max(gamma_star, 0.0) ** 2 / sigma_eff
    return PrecodedBlock(tuple(W), tuple(v), gammas, gamma_star, Gamma_star, tuple(alias_set))


def anonymity_residual(channels: ChannelSet, k: int, i: int, v) -> float:
    """``||(I - H_i H_i^+) H_k v||^2`` for one timeslot."""
    r = projection_complement(channels[i]) @ (channels[k] @ np.asarray(v).reshape(-1))
    return float(np.vdot(r, r).real)


def stream_sdr(C: PegcCombiner, H_k, v, sigma_k_sq: float) -> np.ndarray:
    """Per-stream post-combining SDR ``|c_m H_{k,m} v|^2 / (|S_m| sigma_k^2)``."""
    y = C.C @ (np.asarray(H_k) @ np.asarray(v).reshape(-1))
    sizes = np.array(C.partition.sizes, dtype=float)
    return np.abs(y) ** 2 / (sizes * sigma_k_sq)
