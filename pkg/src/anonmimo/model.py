"""System configuration and random generation of channels, noise and symbols."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .numerics import RANK_TOL, as_generator, sample_cscg

QPSK = np.array([1 + 1j, -1 + 1j, -1 - 1j, 1 - 1j]) / np.sqrt(2.0)
QPSK_THETA = math.pi / 4


@dataclass(frozen=True)
class SystemConfig:
    """Simulation parameters. Defaults are the baseline geometry used by the presets.

    All powers are referenced to the per-slot budget ``P = p_tot / L``: the
    transmit SNR is ``P / sigma_k^2`` and the anonymity bound is ``epsilon * P``.
    Results therefore depend on ``p_tot`` only through this common scale.
    """

    K: int = 15
    N_t: int = 8
    N_r: int = 12
    N_s: int = 4
    L: int = 30
    p_tot: float = 1.0
    snr_db: float = 20.0
    d: float = 1.5
    a: int = 1
    epsilon: float = 1e-3
    theta: float = QPSK_THETA

    def __post_init__(self):
        for name in ("K", "N_t", "N_r", "N_s", "L", "a"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
                raise ConfigError(f"{name} must be an integer, got {value!r}")
        for name in ("p_tot", "snr_db", "d", "epsilon", "theta"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, float, np.floating, np.integer)):
                raise ConfigError(f"{name} must be a number, got {value!r}")
            if not math.isfinite(value):
                raise ConfigError(f"{name} must be finite")
        if self.N_s < 1 or self.N_t < self.N_s:
            raise ConfigError("require N_t >= N_s >= 1")
        if self.N_r <= self.N_t:
            raise ConfigError("require N_r > N_t (strong-receiver setting)")
        if self.L < self.N_s:
            raise ConfigError("require L >= N_s")
        if self.K < 2:
            raise ConfigError("require K >= 2")
        if not 0 <= self.a <= self.K - 1:
            raise ConfigError("require 0 <= a <= K - 1")
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be positive")
        if self.p_tot <= 0:
            raise ConfigError("p_tot must be positive")
        if self.d < 0:
            raise ConfigError("d must be nonnegative")
        if not 0 < self.theta < math.pi / 2:
            raise ConfigError("theta must lie in (0, pi/2)")
        if abs(self.theta - QPSK_THETA) > 1e-12:
            raise ConfigError("only QPSK is supported: theta must be pi/4")

    @property
    def slot_power(self) -> float:
        """Per-timeslot transmit power budget ``p_tot / L``."""
        return self.p_tot / self.L

    @property
    def sigma_k_sq(self) -> float:
        """True-transmitter noise power: the per-slot power divided by the transmit SNR."""
        return self.slot_power / 10.0 ** (self.snr_db / 10.0)

    @property
    def anonymity_bound(self) -> float:
        """Per-slot anonymity residual bound; ``epsilon`` is relative to the slot power."""
        return self.epsilon * self.slot_power

    def replace(self, **changes) -> "SystemConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SystemConfig":
        if not isinstance(data, dict):
            raise ConfigError("configuration document must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown configuration fields: {sorted(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, path) -> "SystemConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(data)


@dataclass(frozen=True)
class ChannelSet:
    config: SystemConfig
    H: tuple  # K arrays of shape (N_r, N_t)

    def __getitem__(self, i: int) -> np.ndarray:
        return self.H[i]

    def __len__(self) -> int:
        return len(self.H)


@dataclass(frozen=True)
class NoiseProfile:
    sigma_k_sq: float
    sigmas: np.ndarray  # per-user noise powers, shape (K,)
    betas: np.ndarray  # per-user log-domain offsets in dB, shape (K,)
    k: int = 0


@dataclass(frozen=True)
class SymbolBlock:
    S: np.ndarray  # (N_s, L) QPSK symbols
    constellation: np.ndarray = field(default_factory=lambda: QPSK.copy(), repr=False)

    @property
    def N_s(self) -> int:
        return self.S.shape[0]

    @property
    def L(self) -> int:
        return self.S.shape[1]


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def _full_column_rank(H: np.ndarray) -> bool:
    sv = np.linalg.svd(H, compute_uv=False)
    return sv[0] > 0 and sv[-1] > RANK_TOL * sv[0]


def sample_channels(rng, config: SystemConfig) -> ChannelSet:
    """K independent Rayleigh channels with i.i.d. CN(0, 1) entries."""
    gen = as_generator(rng)
    H = []
    for _ in range(config.K):
        while True:
            Hi = sample_cscg(gen, config.N_r, config.N_t, 1.0)
            if _full_column_rank(Hi):
                break
        H.append(_readonly(Hi))
    return ChannelSet(config, tuple(H))


def sample_noise_profile(rng, config: SystemConfig, k: int) -> NoiseProfile:
    """Per-user noise powers ``10^(beta_i/10) * sigma_k^2`` with ``beta_i ~ U[-d, d]``."""
    if not 0 <= k < config.K:
        raise IndexError(f"user index {k} out of range for K={config.K}")
    gen = as_generator(rng)
    betas = gen.uniform(-config.d, config.d, size=config.K)
    betas[k] = 0.0
    sigma_k_sq = config.sigma_k_sq
    sigmas = 10.0 ** (betas / 10.0) * sigma_k_sq
    sigmas[k] = sigma_k_sq
    return NoiseProfile(sigma_k_sq, _readonly(sigmas), _readonly(betas), k)


def sample_symbols(rng, config: SystemConfig) -> SymbolBlock:
    """Uniform i.i.d. QPSK block of full row rank."""
    gen = as_generator(rng)
    while True:
        idx = gen.integers(0, 4, size=(config.N_s, config.L))
        S = QPSK[idx]
        if np.linalg.matrix_rank(S) == config.N_s:
            return SymbolBlock(_readonly(S))


def select_alias_set(rng, config: SystemConfig, k: int) -> list[int]:
    """Draw ``a`` distinct alias users uniformly from every user except ``k``."""
    if not 0 <= k < config.K:
        raise IndexError(f"user index {k} out of range for K={config.K}")
    gen = as_generator(rng)
    candidates = np.array([i for i in range(config.K) if i != k])
    picked = gen.choice(candidates, size=config.a, replace=False)
    return [int(i) for i in picked]
