"""Command-line entry point: synth, calibrate, sweep, tomo, report."""

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict

import numpy as np

from .pipeline import (PipelineConfig, SweepResult, calibrate_state, emit_reports, model_from_report,
                       run_sweep, single_point, write_heatmap)
from .synth import synth_dataset
from .traces import read_trace_file, write_trace_file, write_truth_csv

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERIC = 2

log = logging.getLogger("hdtomo")


class ConfigError(Exception):
    pass


def _float_list(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def load_config(args):
    """PipelineConfig from --config (JSON) with command-line overrides applied."""
    raw = {}
    if args.config:
        try:
            with open(args.config) as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a JSON object")
    raw = dict(raw)
    pipe = dict(raw.get("pipeline", {}))
    if getattr(args, "seed", None) is not None:
        raw["seed"] = args.seed
    if getattr(args, "n_traces", None) is not None:
        raw["n_traces"] = args.n_traces
    for name in ("n_list", "mode_source", "efficiency_mode", "phase_source", "workers"):
        value = getattr(args, name, None)
        if value is not None:
            pipe[name] = value
    if getattr(args, "fc_list", None) is not None:
        pipe["fc_list"] = [f * 1e6 for f in args.fc_list]
    raw["pipeline"] = pipe
    calib = getattr(args, "calibration", None)
    if calib:
        try:
            with open(calib) as fh:
                raw["state"] = asdict(model_from_report(json.load(fh)))
        except (OSError, KeyError, json.JSONDecodeError, TypeError) as exc:
            raise ConfigError(f"cannot read calibration {calib}: {exc}") from exc
    try:
        return PipelineConfig.from_dict(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _dataset(args, cfg):
    if getattr(args, "dataset", None):
        try:
            traces, _ = read_trace_file(args.dataset)
        except (OSError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        return traces
    log.info("synthesizing %d traces", cfg.acquisition.n_traces)
    return synth_dataset(cfg.acquisition, workers=cfg.workers).traces


def cmd_synth(args):
    cfg = load_config(args)
    ds = synth_dataset(cfg.acquisition, workers=cfg.workers)
    os.makedirs(args.out, exist_ok=True)
    write_trace_file(os.path.join(args.out, "traces.cvtr"), ds.traces, cfg.acquisition.config_hash())
    write_truth_csv(os.path.join(args.out, "truth.csv"), ds.traces.trace_id, ds.theta, ds.x_true)
    with open(os.path.join(args.out, "config.json"), "w") as fh:
        json.dump(cfg.acquisition.to_dict(), fh, indent=2, sort_keys=True)
    print(f"wrote {len(ds.traces)} traces to {args.out}")
    return EXIT_OK


def cmd_calibrate(args):
    cfg = load_config(args)
    model, report = calibrate_state(args.target, cfg.acquisition, xi=args.xi, eta_prep=args.eta_prep,
                                    dim=cfg.dim, iters=cfg.iters)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "calibration.json")
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    print(f"r={model.r:.4f} xi={model.xi:.4f} eta_prep={model.eta_prep:.4f} "
          f"W00={report['achieved_W00']:.4f} -> {path}")
    return EXIT_OK


def cmd_sweep(args):
    cfg = load_config(args)
    traces = _dataset(args, cfg)
    outcome = run_sweep(traces, cfg)
    emit_reports(outcome, args.out)
    for r in outcome.results:
        status = r.error or f"W00={r.W00:+.4f} F={r.fidelity_vs_baseline:.3f} mismatch={r.mode_mismatch:.3f}"
        print(f"f_c={r.f_c / 1e6:6.1f} MHz f_s={r.f_s / 1e6:8.1f} Msps  {status}")
    failed = [r for r in outcome.results if r.error]
    return EXIT_NUMERIC if failed and len(failed) == len(outcome.results) else EXIT_OK


def cmd_tomo(args):
    cfg = load_config(args)
    traces = _dataset(args, cfg)
    res, _, _, grid = single_point(traces, cfg, args.fc * 1e6, args.n, args.out)
    print(f"f_c={res.f_c / 1e6:g} MHz f_s={res.f_s / 1e6:g} Msps W00={res.W00:+.4f} "
          f"min W={grid.values.min():+.4f} converged_at={res.maxlik_converged_at}")
    return EXIT_OK


def cmd_report(args):
    path = os.path.join(args.input, "results.json")
    try:
        with open(path) as fh:
            records = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    results = [SweepResult(**rec) for rec in records]
    if not results:
        raise ConfigError("no results to report")
    out = args.out or args.input
    os.makedirs(out, exist_ok=True)
    write_heatmap(os.path.join(out, "heatmap.csv"), results)
    fcs = sorted({r.f_c for r in results})
    fss = sorted({r.f_s for r in results}, reverse=True)
    table = {(r.f_c, r.f_s): r for r in results}
    print("W(0,0)  rows: f_c [MHz], columns: f_s [Msps]; * marks 2 f_c > f_s")
    print(" " * 8 + "".join(f"{fs / 1e6:>9.1f}" for fs in fss))
    for fc in fcs:
        cells = []
        for fs in fss:
            r = table.get((fc, fs))
            if r is None or r.error or r.W00 is None or np.isnan(r.W00):
                cells.append(f"{'-':>9}")
            else:
                cells.append(f"{r.W00:>+8.3f}{'' if r.nyquist_ok else '*'}".rjust(9))
        print(f"{fc / 1e6:>7.0f} " + "".join(cells))
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="hdtomo", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, sweep=False):
        sp.add_argument("--config", help="JSON file with AcquisitionConfig keys and a 'pipeline' section")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--n-traces", type=int, dest="n_traces")
        sp.add_argument("--workers", type=int)
        sp.add_argument("--calibration", help="calibration.json whose state replaces the configured one")
        sp.add_argument("--out", required=True)
        if sweep:
            sp.add_argument("--dataset", help="CVTR trace file (default: synthesize from the config)")
            sp.add_argument("--mode-source", choices=["reconstructed", "ideal"], dest="mode_source")
            sp.add_argument("--efficiency-mode", choices=["povm", "rescale"], dest="efficiency_mode")
            sp.add_argument("--phase-source", choices=["truth", "estimated"], dest="phase_source")

    sp = sub.add_parser("synth", help="generate a trace dataset file")
    common(sp)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("calibrate", help="fit state parameters to a baseline W(0,0)")
    common(sp)
    sp.add_argument("--target", type=float, default=-0.084)
    sp.add_argument("--xi", type=float)
    sp.add_argument("--eta-prep", type=float, dest="eta_prep")
    sp.set_defaults(func=cmd_calibrate)

    sp = sub.add_parser("sweep", help="run the (f_c, f_s) degradation grid")
    common(sp, sweep=True)
    sp.add_argument("--fc-list", type=_float_list, dest="fc_list", help="cutoffs in MHz, comma separated")
    sp.add_argument("--n-list", type=_int_list, dest="n_list", help="decimation factors, comma separated")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("tomo", help="reconstruct a single (f_c, n) point")
    common(sp, sweep=True)
    sp.add_argument("--fc", type=float, default=301.0, help="cutoff in MHz")
    sp.add_argument("--n", type=int, default=1, help="decimation factor")
    sp.set_defaults(func=cmd_tomo)

    sp = sub.add_parser("report", help="summarize a sweep directory")
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, FloatingPointError, RuntimeError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
