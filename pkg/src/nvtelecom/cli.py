"""Command line entry point.

Verbs::

    nvtelecom run          simulate a scenario and estimate the fidelity
    nvtelecom sweep        repeat a run over values of one config key
    nvtelecom phase-trace  free-running interferometer lock cycles only
    nvtelecom report       re-estimate contrasts from an event CSV

Exit codes: 0 success, 2 configuration error, 3 insufficient signal.
"""

from __future__ import annotations

import argparse
import io
import json
import sys
from pathlib import Path

import numpy as np

from . import interferometer as itf
from .harness.config import ConfigError, ExperimentConfig, apply_values, load_config, preset
from .harness.runner import run_scenario, sweep, sweep_table, tomography_calibration
from .tomography import EventLog, InsufficientSignalError, estimate

EXIT_OK, EXIT_CONFIG, EXIT_SIGNAL = 0, 2, 3


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else preset(args.scenario or "telecom-zz")
    if args.config and args.scenario and args.scenario != cfg.scenario:
        raise ConfigError(f"--scenario {args.scenario} contradicts the config file ({cfg.scenario})")
    over = {}
    for key in ("seed", "trials", "workers"):
        v = getattr(args, key, None)
        if v is not None:
            over[key] = v
    return apply_values(cfg, over) if over else cfg


def _emit(text: str, out_dir, name: str) -> None:
    if out_dir is None:
        sys.stdout.write(text)
    else:
        p = Path(out_dir)
        p.mkdir(parents=True, exist_ok=True)
        (p / name).write_text(text)


def _result_csv(result_dict: dict) -> str:
    buf = io.StringIO()
    buf.write("quantity,value,std\n")
    for k in ("E_X", "E_Y", "E_Z", "fidelity"):
        v = result_dict[k]
        buf.write(f"{k},,\n" if v is None else f"{k},{v['value']!r},{v['std']!r}\n")
    s = result_dict["sigma_above_classical"]
    buf.write(f"sigma_above_classical,{'' if s is None else repr(s)},\n")
    return buf.getvalue()


def cmd_run(args) -> int:
    cfg = _config(args)
    rep = run_scenario(cfg)
    if args.out_dir is not None:
        rep.write(args.out_dir)
        r = rep.result.to_dict()
        f = r["fidelity"]
        summary = {k: r[k]["value"] for k in ("E_X", "E_Y", "E_Z") if r[k] is not None}
        if f is not None:
            summary["fidelity"] = f["value"]
        print(f"{cfg.scenario}: " + ", ".join(f"{k} = {v:.4f}" for k, v in summary.items())
              + f"; outputs in {args.out_dir}")
    elif args.format == "json":
        sys.stdout.write(rep.to_json())
    else:
        sys.stdout.write(_result_csv(rep.result.to_dict()))
    return EXIT_OK


def _values(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"--values must be comma-separated numbers, got {text!r}") from None


def cmd_sweep(args) -> int:
    cfg = _config(args)
    values = _values(args.values)
    reports = sweep(cfg, args.param, values)
    if args.format == "json":
        text = json.dumps([r.to_dict() for r in reports], indent=2, sort_keys=True) + "\n"
        _emit(text, args.out_dir, "sweep.json")
    else:
        _emit(sweep_table(args.param, values, reports), args.out_dir, "sweep.csv")
    return EXIT_OK


def cmd_phase_trace(args) -> int:
    cfg = _config(args)
    icfg = cfg.interferometer.for_basis(args.basis)
    seed = np.random.SeedSequence([cfg.seed, 0x70686173])  # independent of run streams
    trace = itf.simulate_phase_trace(icfg, args.cycles, np.random.default_rng(seed))
    if args.format == "json":
        pre, post = trace.errors("pre-lock", icfg.target), trace.errors("post-lock", icfg.target)
        text = json.dumps({
            "basis": args.basis,
            "cycles": args.cycles,
            "target": icfg.target,
            "pre_lock_std": float(np.std(pre)),
            "post_lock_std": float(np.std(post)),
            "predicted_pre_lock_std": float(np.hypot(icfg.residual_lock_sigma,
                                                     icfg.drift_rate * icfg.measurement_time)),
        }, indent=2, sort_keys=True) + "\n"
        _emit(text, args.out_dir, f"phase_trace_{args.basis}.json")
    else:
        _emit(trace.to_csv(), args.out_dir, f"phase_trace_{args.basis}.csv")
    return EXIT_OK


def cmd_report(args) -> int:
    cfg = _config(args)
    try:
        events = EventLog.read_csv(args.events)
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"cannot read events: {exc}") from None
    result = estimate(events, cal=tomography_calibration(cfg))
    if args.format == "json":
        _emit(result.to_json() + "\n", args.out_dir, "result.json")
    else:
        _emit(_result_csv(result.to_dict()), args.out_dir, "result.csv")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--scenario", help="preset to start from when no config file is given")
    common.add_argument("--seed", type=int)
    common.add_argument("--trials", type=int, help="analysed clicks per basis")
    common.add_argument("--workers", type=int)
    common.add_argument("--out-dir")
    common.add_argument("--format", choices=("csv", "json"), default="json")

    p = argparse.ArgumentParser(prog="nvtelecom", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="verb", required=True)
    sub.add_parser("run", parents=[common], help="simulate a scenario").set_defaults(func=cmd_run)
    s = sub.add_parser("sweep", parents=[common], help="sweep one numeric config key")
    s.add_argument("--param", required=True, help="dotted key, e.g. conversion.snr")
    s.add_argument("--values", required=True, help="comma-separated values")
    s.set_defaults(func=cmd_sweep)
    t = sub.add_parser("phase-trace", parents=[common], help="interferometer lock cycles")
    t.add_argument("--basis", choices=("X", "Y"), default="X")
    t.add_argument("--cycles", type=int, default=1000)
    t.set_defaults(func=cmd_phase_trace)
    r = sub.add_parser("report", parents=[common], help="re-estimate from an event CSV")
    r.add_argument("--events", required=True)
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InsufficientSignalError as exc:
        print(f"insufficient signal: {exc}", file=sys.stderr)
        return EXIT_SIGNAL


if __name__ == "__main__":
    sys.exit(main())
