import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from anonmimo.detector import reconstruct_signal, test_statistic as glrt_statistic
from anonmimo.errors import RootNotFound
from anonmimo.metrics import (anonymity_report, complexity_estimate, cross_traces, e_const, e_const_of_ratio,
                              e_const_sweep, expected_residuals, kld_closed_form, kld_monte_carlo,
                              trace_delta, transmitted_block)
from anonmimo.model import SystemConfig, sample_channels, sample_noise_profile, sample_symbols
from anonmimo.numerics import RngStream, sample_cscg


def instance(seed, cfg, k=0):
    r = RngStream(seed)
    ch = sample_channels(r.substream("c"), cfg)
    noise = sample_noise_profile(r.substream("n"), cfg, k)
    S = sample_symbols(r.substream("s"), cfg)
    W = sample_cscg(r.substream("w"), cfg.N_t, cfg.N_s, cfg.slot_power / (cfg.N_t * cfg.N_s))
    return ch, noise, S, W


def test_e_const_values():
    c = SystemConfig()
    assert e_const_of_ratio(1.0, c) == 0.0
    # 360 ln(1/2) + (1/2)(360 - 32)
    assert e_const_of_ratio(2.0, c) == pytest.approx(360 * math.log(0.5) + 164, abs=1e-12)
    assert e_const_of_ratio(2.0, c) == pytest.approx(-85.53, abs=5e-3)
    with pytest.raises(ValueError):
        e_const(0.0, 1.0, 12, 30, 4, 8)


ROOT = e_const_sweep(SystemConfig()).r_minus


@settings(max_examples=60, deadline=None)
@given(st.floats(0.05, 20.0))
def test_e_const_positive_only_between_root_and_one(r):
    value = e_const_of_ratio(r, SystemConfig())
    if ROOT + 1e-9 < r < 1 - 1e-9:
        assert value > 0
    elif r < ROOT - 1e-9 or r > 1 + 1e-9:
        assert value < 0


def test_sweep_root_and_slope():
    c = SystemConfig()
    sweep = e_const_sweep(c)
    assert 0 < sweep.r_minus < 1
    assert abs(e_const_of_ratio(sweep.r_minus, c)) < 1e-6
    h = 1e-5
    slope = (e_const_of_ratio(1 + h, c) - e_const_of_ratio(1 - h, c)) / (2 * h)
    assert slope == pytest.approx(-c.N_s * c.N_t, abs=1e-4)
    assert sweep.r.size == 200 and sweep.r[0] == pytest.approx(0.5) and sweep.r[-1] == pytest.approx(2.0)
    with pytest.raises(RootNotFound):
        e_const_sweep(c, r_min=0.95, r_max=2.0)


def test_trace_delta_decomposition(small_config):
    ch, noise, S, W = instance(0, small_config)
    full, proj = cross_traces(ch, 0, 1, W, S)
    assert trace_delta(ch, 0, 1, W, S) == pytest.approx(full - proj, rel=1e-9)
    assert trace_delta(ch, 0, 0, W, S) == pytest.approx(0.0, abs=1e-12)
    per_slot = [W] * S.L
    assert np.allclose(transmitted_block(per_slot, S), transmitted_block(W, S))
    with pytest.raises(ValueError):
        transmitted_block([W], S)


def test_closed_form_against_direct_statistics(small_config):
    # oracle: average T_k - T_i evaluated one draw at a time with the detector
    cfg = small_config.replace(snr_db=5.0)
    ch, noise, S, W = instance(11, cfg)
    X = ch[0] @ W @ S.S
    gen = np.random.default_rng(0)
    diffs = []
    for _ in range(3000):
        Y = X + sample_cscg(gen, cfg.N_r, cfg.L, noise.sigmas[0])
        diffs.append(glrt_statistic(ch[0], noise.sigmas[0], Y, S) - glrt_statistic(ch[2], noise.sigmas[2], Y, S))
    se = np.std(diffs, ddof=1) / math.sqrt(len(diffs))
    closed = kld_closed_form(ch, 0, 2, noise, W, S)
    assert abs(np.mean(diffs) - closed) < 4 * se
    mean, se2 = kld_monte_carlo(ch, 0, 2, noise, W, S, 3000, np.random.default_rng(1))
    assert abs(mean - closed) < 4 * se2
    assert se2 == pytest.approx(se, rel=0.15)


def test_expected_residuals_monte_carlo(small_config):
    ch, noise, S, W = instance(5, small_config)
    X = ch[0] @ W @ S.S
    sk = noise.sigmas[0]
    gen = np.random.default_rng(2)
    rk, ri = [], []
    for _ in range(3000):
        Y = X + sample_cscg(gen, *X.shape, sk)
        rk.append(np.sum(np.abs(reconstruct_signal(ch[0], Y, S) - Y) ** 2))
        ri.append(np.sum(np.abs(reconstruct_signal(ch[1], Y, S) - Y) ** 2))
    c = small_config
    Ek, Ei = expected_residuals(sk, noise.sigmas[1], c.N_r, c.L, c.N_s, c.N_t, cross_traces(ch, 0, 1, W, S))
    assert Ek == pytest.approx(sk * (c.N_r * c.L - c.N_t * c.N_s))
    assert abs(np.mean(rk) - Ek) < 4 * np.std(rk) / math.sqrt(3000)
    assert abs(np.mean(ri) - Ei) < 4 * np.std(ri) / math.sqrt(3000)


def test_anonymity_report_picks_closest_alias(small_config):
    ch, noise, S, W = instance(3, small_config)
    rep = anonymity_report(ch, 0, (1, 2, 3), noise, W, S)
    assert set(rep.per_alias) == {1, 2, 3}
    assert rep.kld == min(v[0] for v in rep.per_alias.values())
    assert rep.expected_Dk == -rep.kld
    for i, (kld, _, _) in rep.per_alias.items():
        assert kld == pytest.approx(kld_closed_form(ch, 0, i, noise, W, S), rel=1e-10)
    with pytest.raises(ValueError):
        anonymity_report(ch, 0, (), noise, W, S)


def test_complexity_counts():
    est = complexity_estimate(SystemConfig())
    assert est.n_var == 65 and est.beta == 12
    assert est.flop_order == pytest.approx(30 * math.log(1e8) * math.sqrt(12) * 32 ** 3)
    assert complexity_estimate(SystemConfig(a=3)).beta > est.beta
