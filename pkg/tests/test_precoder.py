import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from anonmimo.combiner import build_combiner, build_partition
from anonmimo.errors import InfeasibleTimeslot
from anonmimo.model import ChannelSet, SymbolBlock, SystemConfig, sample_channels, sample_symbols
from anonmimo.numerics import RngStream, projection_complement
from anonmimo.precoder import (CiGeometry, anonymity_residual, assemble_p2, ci_satisfied, design_block,
                               rotated_receive_coefficient, stream_sdr)
from anonmimo.socp import OPTIMAL, solve_socp
from conftest import crandn


def instance(seed, **kw):
    cfg = SystemConfig(**kw)
    r = RngStream(seed)
    ch = sample_channels(r.substream("c"), cfg)
    S = sample_symbols(r.substream("s"), cfg)
    return cfg, ch, S, build_combiner(build_partition(cfg.N_r, cfg.N_s))


def test_single_antenna_closed_form(rng):
    # N_t = N_s = 1, N_r = 2: the alias residual of a scalar channel pair only
    # restricts the amplitude, and the margin is |h1 + h2| times the amplitude
    cfg = SystemConfig(K=2, N_t=1, N_r=2, N_s=1, L=1, epsilon=1e3)
    C = build_combiner(build_partition(2, 1))
    for _ in range(10):
        H = [crandn(rng, 2, 1), crandn(rng, 2, 1)]
        ch = ChannelSet(cfg, tuple(H))
        S = SymbolBlock(np.array([[(1 + 1j) / math.sqrt(2)]]))
        block = design_block(ch, 0, (1,), C, S, cfg)
        expected = abs(H[0].sum()) * math.sqrt(cfg.slot_power)
        assert block.gamma_star == pytest.approx(expected, rel=1e-6)


def test_block_satisfies_all_constraints():
    cfg, ch, S, C = instance(1)
    block = design_block(ch, 0, (3,), C, S, cfg)
    geom = CiGeometry(cfg.theta, 0.0)
    for l, v in enumerate(block.v):
        assert np.vdot(v, v).real <= cfg.slot_power * (1 + 1e-6)
        assert math.sqrt(anonymity_residual(ch, 0, 3, v)) <= math.sqrt(cfg.anonymity_bound) + 1e-8
        for m in range(cfg.N_s):
            u = rotated_receive_coefficient(C, ch[0], v, S.S[:, l], m)
            assert ci_satisfied(u, CiGeometry(cfg.theta, block.gammas[l]), tol=1e-8)
            assert ci_satisfied(u, geom)
        assert np.allclose(block.W[l] @ S.S[:, l], v)
    sdr = np.min([stream_sdr(C, ch[0], v, cfg.sigma_k_sq).min() for v in block.v])
    assert sdr >= block.Gamma_star * (1 - 1e-6)


def test_margin_non_decreasing_in_epsilon():
    cfg, ch, S, C = instance(2)
    last = -np.inf
    for eps in (1e-5, 1e-4, 1e-3, 1e-2, 1e-1):
        g = design_block(ch, 5, (7,), C, S, cfg.replace(epsilon=eps)).gamma_star
        assert g >= last - 1e-6
        last = g


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 10 ** 6), st.sampled_from([1e-4, 1e-2]))
def test_slot_solution_is_feasible(seed, eps):
    cfg, ch, S, C = instance(seed, epsilon=eps)
    p = assemble_p2(ch, 0, (1, 2), C, S.S[:, 0], cfg)
    sol = solve_socp(p)
    assert sol.status == OPTIMAL
    assert sol.max_violation <= 1e-6
    assert sol.x[-1] > 0  # gamma can always be positive: v in the null space of the aliases


def test_tight_epsilon_pushes_signal_into_alias_null_space():
    cfg, ch, S, C = instance(4, epsilon=1e-9)
    block = design_block(ch, 0, (1,), C, S, cfg)
    P = projection_complement(ch[1])
    for v in block.v:
        r = P @ ch[0] @ v
        assert np.linalg.norm(r) <= math.sqrt(cfg.anonymity_bound) + 1e-8


def test_rejects_self_alias_and_reports_infeasible(monkeypatch):
    cfg, ch, S, C = instance(5)
    with pytest.raises(ValueError):
        design_block(ch, 0, (0,), C, S, cfg)
    import anonmimo.precoder as pre
    from anonmimo.socp import SocpSolution
    monkeypatch.setattr(pre, "solve_socp_batch",
                        lambda probs, tol: [SocpSolution("Infeasible", np.zeros(p.n), np.nan, np.inf, 1) for p in probs])
    with pytest.raises(InfeasibleTimeslot) as exc:
        design_block(ch, 0, (1,), C, S, cfg)
    assert exc.value.slot == 0


def test_ci_geometry_checks():
    g = CiGeometry()
    assert ci_satisfied(1 + 0.5j, g) and not ci_satisfied(1 + 1.5j, g)
    assert not ci_satisfied(0.5 + 0j, CiGeometry(gamma=1.0))
    with pytest.raises(ValueError):
        CiGeometry(theta=2.0)
