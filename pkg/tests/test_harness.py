import csv
import io
import math
from fractions import Fraction

import numpy as np
import pytest

import anonmimo.harness as harness
from anonmimo.errors import ConfigError, EmptyResult, InfeasibleTimeslot
from anonmimo.harness import (REPORT_FIELDS, ExperimentSpec, Report, ReportRow, TrialOutcome, aggregate,
                              emit_report, plot_script, preset, render_report, report_from_json, run_experiment,
                              run_trial, wilson_half_width)
from anonmimo.metrics import EconstSweep
from anonmimo.model import ChannelSet, SystemConfig

SMALL = SystemConfig(K=4, N_r=6, N_t=3, N_s=2, L=8)


def test_trial_is_deterministic_and_keyed_by_value():
    a = ExperimentSpec(SMALL, "snr_db", (8.0, 24.0), trials=3, master_seed=5)
    b = ExperimentSpec(SMALL, "snr_db", (24.0,), trials=3, master_seed=5)
    assert run_trial(a, 24.0, 2) == run_trial(a, 24.0, 2)
    assert run_trial(a, 24.0, 2) == run_trial(b, 24.0, 2)
    assert run_trial(a, 24.0, 2) != run_trial(a, 24.0, 1)
    out = run_trial(a, 8.0, 0)
    assert 0 <= out.symbol_errors <= out.total_symbols == SMALL.N_s * SMALL.L
    assert out.k not in out.alias_set and len(out.alias_set) == SMALL.a


def test_report_independent_of_workers_and_chunking():
    spec = ExperimentSpec(SMALL, "snr_db", (10.0, 20.0), trials=7, master_seed=1)
    serial = run_experiment(spec)
    assert run_experiment(spec, threads=2, chunk=3) == serial
    assert render_report(run_experiment(spec, chunk=2)) == render_report(serial)


def test_noiseless_limit_decodes_everything():
    spec = ExperimentSpec(SMALL.replace(snr_db=80.0), "snr_db", (80.0,), trials=10)
    for t in range(10):
        out = run_trial(spec, 80.0, t)
        assert out.symbol_errors == 0 and out.correct and out.gamma_star > 0


def test_identical_channels_give_coin_flip(monkeypatch):
    cfg = SMALL.replace(K=2, d=0.0)
    real = harness.sample_channels

    def twins(rng, config):
        H = real(rng, config)[0]
        return ChannelSet(config, (H, H))

    monkeypatch.setattr(harness, "sample_channels", twins)
    spec = ExperimentSpec(cfg, "snr_db", (20.0,), trials=300)
    outs = [run_trial(spec, 20.0, t) for t in range(300)]
    assert all(o.tie for o in outs)
    assert all(o.correct == (o.k == 0) for o in outs)
    assert abs(aggregate("snr_db", 20.0, outs).der - 0.5) < 0.1


def test_aggregate_exact_and_excludes_infeasible():
    outs = [TrialOutcome(0, 0, (1,), True, False, 2, 10, 0.5),
            TrialOutcome(1, 1, (0,), False, False, 3, 10, 1.0),
            TrialOutcome(2, 0, (1,), False, True, 0, 10, 1.5),
            TrialOutcome(3, 1, (0,), False, False, 0, 10, math.nan, True)]
    row = aggregate("epsilon", 1e-3, outs)
    assert (row.trials, row.valid_trials, row.infeasible_trials) == (4, 3, 1)
    assert Fraction(row.der).limit_denominator(100) == Fraction(2, 3)
    assert row.ser == pytest.approx(5 / 30) and row.mean_gamma == pytest.approx(1.0)
    with pytest.raises(EmptyResult):
        aggregate("epsilon", 1e-3, outs[3:])


def test_wilson_half_width_reference():
    # Wilson interval for 30/100 at 95%: [0.2189, 0.3958]
    assert wilson_half_width(30, 100) == pytest.approx((0.39577 - 0.21886) / 2, abs=1e-4)
    assert 0 < wilson_half_width(0, 50) < 0.05
    assert math.isnan(wilson_half_width(0, 0))


def test_infeasible_trials_are_recorded(monkeypatch):
    def refuse(*args, **kwargs):
        raise InfeasibleTimeslot(0, 1e-3)

    monkeypatch.setattr(harness, "design_block", refuse)
    spec = ExperimentSpec(SMALL, "snr_db", (20.0,), trials=2)
    assert run_trial(spec, 20.0, 0).infeasible
    with pytest.raises(EmptyResult):
        run_experiment(spec)


def test_single_trial_report_echoes_outcome():
    spec = ExperimentSpec(SMALL, "epsilon", (1e-3,), trials=1, master_seed=3)
    out = run_trial(spec, 1e-3, 0)
    row = run_experiment(spec).rows[0]
    assert row.der == (0.0 if out.correct else 1.0)
    assert row.ser == out.symbol_errors / out.total_symbols
    assert row.mean_gamma == out.gamma_star


def test_csv_schema_and_json_round_trip(tmp_path):
    row = ReportRow("snr_db", 8.0, 100, 99, 1, 0.3, 0.02, 1 / 3, 0.01, math.pi)
    rep = Report("snr_db", (row,), "fig2")
    emit_report(rep, "csv", tmp_path / "r.csv")
    rows = list(csv.reader(io.StringIO((tmp_path / "r.csv").read_text())))
    assert tuple(rows[0]) == REPORT_FIELDS
    assert rows[1][REPORT_FIELDS.index("der")] == "0.29999999999999999"
    assert float(rows[1][REPORT_FIELDS.index("der_ci95")]) == 0.02
    assert float(rows[1][REPORT_FIELDS.index("ser")]) == 1 / 3
    assert report_from_json(render_report(rep, "json")) == rep
    empty = Report("snr_db", ())
    assert render_report(empty, "csv") == ",".join(REPORT_FIELDS) + "\n"
    assert report_from_json(render_report(empty, "json")) == empty
    with pytest.raises(OSError):
        emit_report(rep, "csv", tmp_path / "missing" / "r.csv")
    assert "r.csv" in plot_script(rep, tmp_path / "r.csv")


def test_presets_and_validation():
    assert preset("fig2").sweep_values == (8.0, 12.0, 16.0, 20.0, 24.0)
    assert preset("fig6").config.snr_db == 10.0
    with pytest.raises(KeyError):
        preset("fig9")
    sweep = run_experiment(preset("fig7"))
    assert isinstance(sweep, EconstSweep) and 0 < sweep.r_minus < 1
    with pytest.raises(ConfigError):
        ExperimentSpec(SMALL, "N_s", (2.5,))
    with pytest.raises(ConfigError):
        ExperimentSpec(SMALL, "snr_db", (10.0,), trials=0)
    with pytest.raises(ConfigError):
        ExperimentSpec(SMALL, "bogus", (1.0,))
    with pytest.raises(ConfigError):
        ExperimentSpec(SMALL, "N_s", (4,))  # N_s must stay below N_t = 3
