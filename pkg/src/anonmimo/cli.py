"""Command-line interface: ``anonmimo <subcommand> [flags]``.

Configuration precedence is flag > config file > built-in default.  Exit
codes: 0 success, 1 usage error, 2 configuration error, 3 infeasible or empty
result (and a failed ``kld-check``), 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .combiner import build_combiner, build_partition
from .detector import decode_symbols, glrt_detect
from .errors import ConfigError, EmptyResult, InfeasibleTimeslot, RootNotFound
from .harness import (DEFAULT_TRIALS, PRESETS, SWEEP_VARS, ExperimentSpec, plot_script, render_report,
                      run_experiment)
from .metrics import complexity_estimate, e_const_sweep, kld_closed_form, kld_monte_carlo
from .model import SystemConfig, sample_channels, sample_noise_profile, sample_symbols, select_alias_set
from .numerics import RngStream, sample_cscg
from .precoder import anonymity_residual, design_block

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_IO = 0, 1, 2, 3, 4

# keys a config file may carry besides the SystemConfig fields
EXPERIMENT_KEYS = ("sweep_var", "sweep_values", "trials", "seed")

# small geometry used by kld-check unless a config file is given
KLD_CHECK_DEFAULTS = dict(K=4, N_r=6, N_t=3, N_s=2, L=8)

log = logging.getLogger("anonmimo")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


PRECEDENCE = "Settings are resolved as flag > config file > built-in default."


def _common(p: argparse.ArgumentParser, randomized: bool = True) -> None:
    p.epilog = PRECEDENCE
    p.add_argument("--config", type=Path, help="JSON file with SystemConfig fields (flags override it)")
    p.add_argument("--out", type=Path, help="output file (default: standard output)")
    p.add_argument("--format", choices=("csv", "json"), default=None, help="output format")
    p.add_argument("--epsilon", type=float, help="anonymity tolerance, relative to the per-slot power")
    p.add_argument("--snr-db", type=float, help="transmit SNR in dB")
    p.add_argument("--ns", type=int, help="number of data streams N_s")
    p.add_argument("--d", type=float, help="noise-uncertainty half-range in dB")
    if randomized:
        p.add_argument("--seed", type=int, default=None, help="master seed (default 0)")
    p.add_argument("-v", "--verbose", action="count", default=0, help="log progress to stderr (repeat for debug)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="anonmimo", description="Anonymous symbol-level MIMO precoding simulator.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="run a Monte-Carlo experiment or preset")
    _common(p)
    p.add_argument("--preset", choices=sorted(PRESETS), help="named experiment")
    p.add_argument("--trials", type=int, help=f"trials per sweep point (default {DEFAULT_TRIALS})")
    p.add_argument("--threads", type=int, default=1, help="worker processes (output does not depend on it)")
    p.add_argument("--sweep-var", choices=SWEEP_VARS, help="sweep variable for non-preset runs")
    p.add_argument("--sweep-values", type=float, nargs="+", help="sweep points (replace the preset's)")
    p.add_argument("--plot-script", type=Path, help="also write a matplotlib script plotting --out")

    p = sub.add_parser("design", help="design one precoded block and report margins and residuals")
    _common(p)

    p = sub.add_parser("detect", help="simulate one block and run GLRT detection and decoding")
    _common(p)

    p = sub.add_parser("kld-check", help="closed-form KLD against a Monte-Carlo estimate")
    _common(p)
    p.add_argument("--draws", type=int, default=20000, help="noise realisations (default 20000)")

    p = sub.add_parser("sweep-econst", help="tabulate the noise-only KLD term against the variance ratio")
    _common(p, randomized=False)
    p.add_argument("--r-min", type=float, default=0.5)
    p.add_argument("--r-max", type=float, default=2.0)
    p.add_argument("--steps", type=int, default=200)

    p = sub.add_parser("complexity", help="interior-point cost estimate for the slot problem")
    _common(p, randomized=False)
    p.add_argument("--tau", type=float, default=1e-8, help="target accuracy")
    return parser


def _load_file(path) -> tuple[dict, dict]:
    """Split a config document into SystemConfig fields and experiment keys."""
    if path is None:
        return {}, {}
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: configuration must be a JSON object")
    extra = {k: data.pop(k) for k in EXPERIMENT_KEYS if k in data}
    return data, extra


def _flag_overrides(args) -> dict:
    pairs = (("epsilon", args.epsilon), ("snr_db", args.snr_db), ("N_s", args.ns), ("d", args.d))
    return {k: v for k, v in pairs if v is not None}


def _resolve_config(args, base: SystemConfig | None = None) -> tuple[SystemConfig, dict]:
    fields, extra = _load_file(args.config)
    start = (base or SystemConfig()).to_dict()
    start.update(fields)
    start.update(_flag_overrides(args))
    return SystemConfig.from_dict(start), extra


def _seed(args, extra: dict) -> int:
    seed = args.seed if args.seed is not None else extra.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2 ** 64:
        raise ConfigError("seed must be an integer in [0, 2^64)")
    return seed


def _write(text: str, path) -> None:
    if path is None:
        sys.stdout.write(text)
        sys.stdout.flush()
    else:
        Path(path).write_text(text)


def _fmt(x) -> str:
    return format(float(x), ".17g")


def _records(rows: list[dict], fmt: str) -> str:
    """Render flat records as CSV (header from the first row) or a JSON array."""
    if fmt == "json":
        return json.dumps(rows, indent=2) + "\n"
    if not rows:
        return ""
    keys = list(rows[0])
    lines = [",".join(keys)]
    for r in rows:
        lines.append(",".join(_fmt(r[k]) if isinstance(r[k], float) else str(r[k]) for k in keys))
    return "\n".join(lines) + "\n"


def _cmd_run(args) -> int:
    fields, extra = _load_file(args.config)
    if args.preset:
        spec = PRESETS[args.preset]
        cfg = spec.config.to_dict()
        sweep_var, values, trials = spec.sweep_var, spec.sweep_values, spec.trials
    else:
        cfg = SystemConfig().to_dict()
        sweep_var = extra.get("sweep_var", "snr_db")
        values, trials = extra.get("sweep_values"), extra.get("trials", DEFAULT_TRIALS)
    cfg.update(fields)
    cfg.update(_flag_overrides(args))
    config = SystemConfig.from_dict(cfg)
    if args.sweep_var:
        if args.preset and args.sweep_var != sweep_var:
            raise UsageError(f"preset {args.preset} sweeps {sweep_var}, not {args.sweep_var}")
        sweep_var = args.sweep_var
    if args.sweep_values:
        values = args.sweep_values
    if values is None:
        values = (getattr(config, sweep_var),) if sweep_var != "r" else (0.5, 2.0, 200)
    if args.trials is not None:
        trials = args.trials
    if args.threads < 1:
        raise UsageError("--threads must be at least 1")
    if isinstance(trials, bool) or not isinstance(trials, int):
        raise ConfigError("trials must be an integer")
    if sweep_var in _flag_overrides(args):
        log.warning("the %s flag is superseded by the sweep values", sweep_var)
    spec = ExperimentSpec(config, sweep_var, tuple(values), trials, _seed(args, extra), args.preset)
    fmt = args.format or "csv"
    result = run_experiment(spec, threads=args.threads)
    _write(render_report(result, fmt), args.out)
    if args.plot_script:
        if args.out is None:
            raise UsageError("--plot-script needs --out")
        args.plot_script.write_text(plot_script(result, args.out))
    return EXIT_OK


def _instance(config: SystemConfig, seed: int):
    rng = RngStream(seed).substream("cli")
    channels = sample_channels(rng.substream("channels"), config)
    k = int(rng.substream("user").generator().integers(config.K))
    aliases = tuple(select_alias_set(rng.substream("alias"), config, k))
    noise = sample_noise_profile(rng.substream("noise"), config, k)
    S = sample_symbols(rng.substream("symbols"), config)
    return rng, channels, k, aliases, noise, S


def _cmd_design(args) -> int:
    config, extra = _resolve_config(args)
    _, channels, k, aliases, _, S = _instance(config, _seed(args, extra))
    combiner = build_combiner(build_partition(config.N_r, config.N_s))
    block = design_block(channels, k, aliases, combiner, S, config)
    rows = []
    for l, v in enumerate(block.v):
        row = {"slot": l, "gamma": float(block.gammas[l]), "power": float(np.vdot(v, v).real)}
        for i in aliases:
            row[f"residual_{i}"] = anonymity_residual(channels, k, i, v)
        rows.append(row)
    log.info("user %d aliases %s gamma*=%.6g Gamma*=%.6g", k, aliases, block.gamma_star, block.Gamma_star)
    if (args.format or "json") == "json":
        doc = {"k": k, "alias_set": list(aliases), "gamma_star": block.gamma_star,
               "Gamma_star": block.Gamma_star, "anonymity_bound": config.anonymity_bound,
               "slot_power": config.slot_power, "slots": rows}
        _write(json.dumps(doc, indent=2) + "\n", args.out)
    else:
        _write(_records(rows, "csv"), args.out)
    return EXIT_OK


def _cmd_detect(args) -> int:
    config, extra = _resolve_config(args)
    rng, channels, k, aliases, noise, S = _instance(config, _seed(args, extra))
    combiner = build_combiner(build_partition(config.N_r, config.N_s))
    block = design_block(channels, k, aliases, combiner, S, config)
    Y = channels[k] @ block.V + sample_cscg(rng.substream("awgn"), config.N_r, config.L, noise.sigma_k_sq)
    det = glrt_detect(channels, noise, Y, S, k)
    _, errors = decode_symbols(combiner, Y, S)
    rows = [{"user": i, "statistic": float(t), "alias": int(i in aliases)} for i, t in enumerate(det.statistics)]
    if (args.format or "json") == "json":
        doc = {"true_user": k, "detected": det.detected, "correct": det.correct, "tie": det.tie,
               "alias_set": list(aliases), "symbol_errors": errors, "total_symbols": S.S.size,
               "statistics": [float(t) for t in det.statistics]}
        _write(json.dumps(doc, indent=2) + "\n", args.out)
    else:
        _write(_records(rows, "csv"), args.out)
    return EXIT_OK


def _cmd_kld_check(args) -> int:
    config, extra = _resolve_config(args, SystemConfig(**KLD_CHECK_DEFAULTS))
    if args.draws < 2:
        raise UsageError("--draws must be at least 2")
    rng, channels, k, aliases, noise, S = _instance(config, _seed(args, extra))
    i = aliases[0] if aliases else (k + 1) % config.K
    # block-constant precoder with the per-slot power budget in expectation
    W = sample_cscg(rng.substream("precoder"), config.N_t, config.N_s, config.slot_power / (config.N_t * config.N_s))
    closed = kld_closed_form(channels, k, i, noise, W, S)
    mean, se = kld_monte_carlo(channels, k, i, noise, W, S, args.draws, rng.substream("mc"))
    z = (mean - closed) / se
    row = {"k": k, "i": i, "closed_form": closed, "monte_carlo": mean, "std_error": se, "z": z}
    _write(_records([row], args.format or "csv"), args.out)
    if abs(z) > 3:
        print(f"kld-check: |z| = {abs(z):.3f} exceeds 3", file=sys.stderr)
        return EXIT_INFEASIBLE
    return EXIT_OK


def _cmd_sweep_econst(args) -> int:
    config, _ = _resolve_config(args)
    sweep = e_const_sweep(config, args.r_min, args.r_max, args.steps)
    log.info("r_- = %.17g", sweep.r_minus)
    _write(render_report(sweep, args.format or "csv"), args.out)
    return EXIT_OK


def _cmd_complexity(args) -> int:
    config, _ = _resolve_config(args)
    est = complexity_estimate(config, args.tau)
    row = {"n_var": est.n_var, "beta": est.beta, "flop_order": est.flop_order, "per_slot": est.per_slot}
    _write(_records([row], args.format or "csv"), args.out)
    return EXIT_OK


COMMANDS = {"run": _cmd_run, "design": _cmd_design, "detect": _cmd_detect, "kld-check": _cmd_kld_check,
            "sweep-econst": _cmd_sweep_econst, "complexity": _cmd_complexity}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help exits 0, parse errors exit 1
        return int(exc.code or 0)
    level = logging.WARNING if args.verbose == 0 else logging.INFO if args.verbose == 1 else logging.DEBUG
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s", force=True)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"anonmimo: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"anonmimo: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InfeasibleTimeslot, EmptyResult, RootNotFound) as exc:
        print(f"anonmimo: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except OSError as exc:
        print(f"anonmimo: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
