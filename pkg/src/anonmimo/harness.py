"""Seeded Monte-Carlo experiments: trial pipeline, sweeps, aggregation and reports."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import binomtest

from .combiner import build_combiner, build_partition
from .detector import decode_symbols, glrt_detect
from .errors import ConfigError, EmptyResult, InfeasibleTimeslot
from .metrics import EconstSweep, e_const_sweep
from .model import SystemConfig, sample_channels, sample_noise_profile, sample_symbols, select_alias_set
from .numerics import RngStream, sample_cscg
from .precoder import design_block

log = logging.getLogger(__name__)

SWEEP_VARS = ("snr_db", "epsilon", "N_s", "d", "r")
REPORT_FIELDS = ("sweep_var", "sweep_value", "trials", "valid_trials", "infeasible_trials",
                 "der", "der_ci95", "ser", "ser_ci95", "mean_gamma")
DEFAULT_TRIALS = 2000


@dataclass(frozen=True)
class ExperimentSpec:
    config: SystemConfig = field(default_factory=SystemConfig)
    sweep_var: str = "snr_db"
    sweep_values: tuple = (20.0,)
    trials: int = DEFAULT_TRIALS
    master_seed: int = 0
    preset: str | None = None

    def __post_init__(self):
        if self.sweep_var not in SWEEP_VARS:
            raise ConfigError(f"unknown sweep variable {self.sweep_var!r}")
        if self.trials < 1:
            raise ConfigError("trials must be at least 1")
        object.__setattr__(self, "sweep_values", tuple(self.sweep_values))
        if self.sweep_var != "r":
            for value in self.sweep_values:
                self.config_at(value)  # raises ConfigError on invalid points
        elif any(v <= 0 for v in self.sweep_values) or len(self.sweep_values) not in (0, 2, 3):
            raise ConfigError("an r sweep takes (r_min, r_max[, steps]) with positive bounds")

    def config_at(self, value) -> SystemConfig:
        if self.sweep_var == "r":
            return self.config
        if self.sweep_var == "N_s":
            if float(value) != int(value):
                raise ConfigError("N_s sweep values must be integers")
            value = int(value)
        else:
            value = float(value)
        return self.config.replace(**{self.sweep_var: value})


def _preset_table():
    base = SystemConfig()
    snr = (8.0, 12.0, 16.0, 20.0, 24.0)
    return {
        "fig2": ExperimentSpec(base, "snr_db", snr, preset="fig2"),
        "fig3": ExperimentSpec(base, "snr_db", snr, preset="fig3"),
        "fig4": ExperimentSpec(base.replace(snr_db=16.0), "epsilon", (1e-5, 1e-4, 1e-3, 1e-2, 1e-1), preset="fig4"),
        "fig5": ExperimentSpec(base, "N_s", (3, 4, 5), preset="fig5"),
        "fig6": ExperimentSpec(base.replace(snr_db=10.0), "d", tuple(0.5 * i for i in range(7)), preset="fig6"),
        "fig7": ExperimentSpec(base, "r", (0.5, 2.0, 200), trials=1, preset="fig7"),
    }


PRESETS = _preset_table()


def preset(name: str) -> ExperimentSpec:
    try:
        return PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


@dataclass(frozen=True)
class TrialOutcome:
    trial_id: int
    k: int
    alias_set: tuple
    correct: bool
    tie: bool
    symbol_errors: int
    total_symbols: int
    gamma_star: float
    infeasible: bool = False


def trial_stream(spec: ExperimentSpec, sweep_value, trial_id: int) -> RngStream:
    """Per-trial stream keyed by the sweep point and trial id only."""
    return RngStream(spec.master_seed).substream(spec.sweep_var, float(sweep_value), int(trial_id))


def run_trial(spec: ExperimentSpec, sweep_value, trial_id: int) -> TrialOutcome:
    """One block transmission: design, transmit, detect the sender and decode."""
    cfg = spec.config_at(sweep_value)
    rng = trial_stream(spec, sweep_value, trial_id)
    channels = sample_channels(rng.substream("channels"), cfg)
    k = int(rng.substream("user").generator().integers(cfg.K))
    alias_set = tuple(select_alias_set(rng.substream("alias"), cfg, k))
    noise = sample_noise_profile(rng.substream("noise"), cfg, k)
    S = sample_symbols(rng.substream("symbols"), cfg)
    combiner = build_combiner(build_partition(cfg.N_r, cfg.N_s))
    total = cfg.N_s * cfg.L
    try:
        block = design_block(channels, k, alias_set, combiner, S, cfg)
    except InfeasibleTimeslot as exc:
        log.debug("trial %d infeasible: %s", trial_id, exc)
        return TrialOutcome(trial_id, k, alias_set, False, False, 0, total, math.nan, True)
    Y = channels[k] @ block.V + sample_cscg(rng.substream("awgn"), cfg.N_r, cfg.L, noise.sigma_k_sq)
    detection = glrt_detect(channels, noise, Y, S, k)
    _, errors = decode_symbols(combiner, Y, S)
    return TrialOutcome(trial_id, k, alias_set, detection.correct, detection.tie, errors, total, block.gamma_star)


def wilson_half_width(successes: int, n: int) -> float:
    if n == 0:
        return math.nan
    ci = binomtest(int(successes), int(n)).proportion_ci(0.95, method="wilson")
    return 0.5 * (ci.high - ci.low)


@dataclass(frozen=True)
class ReportRow:
    sweep_var: str
    sweep_value: float
    trials: int
    valid_trials: int
    infeasible_trials: int
    der: float
    der_ci95: float
    ser: float
    ser_ci95: float
    mean_gamma: float


@dataclass(frozen=True)
class Report:
    sweep_var: str
    rows: tuple = ()
    preset: str | None = None

    def row(self, value) -> ReportRow:
        for r in self.rows:
            if r.sweep_value == value:
                return r
        raise KeyError(value)


def aggregate(sweep_var: str, sweep_value, outcomes) -> ReportRow:
    outcomes = list(outcomes)
    valid = [o for o in outcomes if not o.infeasible]
    if not valid:
        raise EmptyResult(f"all {len(outcomes)} trials infeasible at {sweep_var}={sweep_value}")
    wrong = sum(not o.correct for o in valid)
    sym_err = sum(o.symbol_errors for o in valid)
    sym_total = sum(o.total_symbols for o in valid)
    return ReportRow(
        sweep_var, float(sweep_value), len(outcomes), len(valid), len(outcomes) - len(valid),
        wrong / len(valid), wilson_half_width(wrong, len(valid)),
        sym_err / sym_total, wilson_half_width(sym_err, sym_total),
        float(np.mean([o.gamma_star for o in valid])),
    )


def _run_chunk(args):
    spec, value, ids = args
    return [run_trial(spec, value, t) for t in ids]


def run_experiment(spec: ExperimentSpec, threads: int = 1, chunk: int = 25):
    """Run every sweep point; returns a :class:`Report` (or an E_const table for r sweeps).

    Trials are split into fixed chunks, so the result does not depend on ``threads``.
    """
    if spec.sweep_var == "r":
        values = spec.sweep_values or (0.5, 2.0, 200)
        steps = int(values[2]) if len(values) > 2 else 200
        return e_const_sweep(spec.config, float(values[0]), float(values[1]), steps)
    tasks = [(spec, v, range(start, min(start + chunk, spec.trials)))
             for v in spec.sweep_values for start in range(0, spec.trials, chunk)]
    if threads > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_run_chunk, tasks))
    else:
        results = [_run_chunk(t) for t in tasks]
    per_point = {}
    for (_, value, _), outs in zip(tasks, results):
        per_point.setdefault(value, []).extend(outs)
    rows = []
    for value in spec.sweep_values:
        row = aggregate(spec.sweep_var, value, per_point[value])
        log.info("%s=%g der=%.4f ser=%.4g infeasible=%d", spec.sweep_var, value, row.der, row.ser, row.infeasible_trials)
        rows.append(row)
    return Report(spec.sweep_var, tuple(rows), spec.preset)


def _fmt(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    return format(float(value), ".17g")


def report_csv(report: Report) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPORT_FIELDS)
    for row in report.rows:
        writer.writerow([_fmt(getattr(row, f)) for f in REPORT_FIELDS])
    return buf.getvalue()


def report_json(report: Report) -> str:
    # numbers are written as 17-significant-digit literals so they round-trip exactly
    rows = []
    for row in report.rows:
        items = ", ".join(f'"{f}": ' + (json.dumps(getattr(row, f)) if f == "sweep_var" else _json_num(getattr(row, f)))
                          for f in REPORT_FIELDS)
        rows.append("    {" + items + "}")
    head = f'{{\n  "sweep_var": {json.dumps(report.sweep_var)},\n  "preset": {json.dumps(report.preset)},\n  "rows": ['
    return head + ("\n" + ",\n".join(rows) + "\n  " if rows else "") + "]\n}\n"


def _json_num(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if not math.isfinite(value):
        return "null"
    return format(float(value), ".17g")


def report_from_json(text: str) -> Report:
    data = json.loads(text)
    rows = []
    for r in data["rows"]:
        r = {k: (math.nan if v is None else v) for k, v in r.items()}
        rows.append(ReportRow(**r))
    return Report(data["sweep_var"], tuple(rows), data.get("preset"))


def econst_csv(sweep: EconstSweep) -> str:
    lines = ["r,E_const"] + [f"{_fmt(r)},{_fmt(e)}" for r, e in sweep.rows()]
    return "\n".join(lines) + "\n"


def render_report(report, fmt: str = "csv") -> str:
    if isinstance(report, EconstSweep):
        if fmt == "json":
            return json.dumps({"r_minus": report.r_minus, "rows": report.rows()}) + "\n"
        return econst_csv(report)
    if fmt == "csv":
        return report_csv(report)
    if fmt == "json":
        return report_json(report)
    raise ValueError(f"unknown format {fmt!r}")


def emit_report(report, fmt: str, path) -> None:
    """Write the report; ``OSError`` propagates for unwritable destinations."""
    Path(path).write_text(render_report(report, fmt))


def plot_script(report, csv_path) -> str:
    """A small matplotlib script that plots the CSV written for ``report``."""
    if isinstance(report, EconstSweep):
        return (
            "import csv\nimport matplotlib.pyplot as plt\n\n"
            f"rows = list(csv.DictReader(open({str(csv_path)!r})))\n"
            "r = [float(x['r']) for x in rows]\ne = [float(x['E_const']) for x in rows]\n"
            "plt.semilogx(r, e)\nplt.axhline(0.0, color='k', lw=0.5)\n"
            "plt.xlabel('r')\nplt.ylabel('E_const')\nplt.savefig('econst.png')\n"
        )
    return (
        "import csv\nimport matplotlib.pyplot as plt\n\n"
        f"rows = list(csv.DictReader(open({str(csv_path)!r})))\n"
        "x = [float(r['sweep_value']) for r in rows]\n"
        "fig, (a, b) = plt.subplots(1, 2, figsize=(9, 3.5))\n"
        "a.errorbar(x, [float(r['der']) for r in rows], yerr=[float(r['der_ci95']) for r in rows], marker='o')\n"
        "b.errorbar(x, [float(r['ser']) for r in rows], yerr=[float(r['ser_ci95']) for r in rows], marker='s')\n"
        "b.set_yscale('log')\n"
        f"a.set_xlabel({report.sweep_var!r})\nb.set_xlabel({report.sweep_var!r})\n"
        "a.set_ylabel('DER')\nb.set_ylabel('SER')\nfig.tight_layout()\n"
        f"fig.savefig({(report.preset or 'report') + '.png'!r})\n"
    )


def spec_to_dict(spec: ExperimentSpec) -> dict:
    d = asdict(spec)
    d["sweep_values"] = list(spec.sweep_values)
    return d
