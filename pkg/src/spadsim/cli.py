"""Command-line entry point.

Exit codes: 0 success, 2 usage or configuration error, 3 not enough data,
4 a fit did not converge.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import formats
from .config import ConfigError, RunConfig
from .errors import ConvergenceError, InsufficientDataError, MemoryBudgetError, ParameterError, UnitMismatchError
from .intervals import build_histogram, characterize_histogram
from .model import AfterpulseProfile, SourceParams, app_from_amplitude, tail_amplitude
from .montecarlo import cascade_oracle, simulate
from .ratecurve import dead_time_verdict, prediction_table
from .waveform import (
    discriminate,
    frequency_response,
    loss_for_peak_depth,
    peak_notch_depth,
    random_avalanche_times,
    synthesize_trace,
)

log = logging.getLogger("spadsim")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_CONVERGENCE = 4


def _config(args, **overrides) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    return cfg.updated(**overrides)


def _sidecar(out: Path, suffix: str) -> Path:
    return out.with_name(out.name + suffix)


def cmd_simulate(args) -> int:
    cfg = _config(args)
    out = Path(args.out or "stream.txt")
    stream = simulate(cfg.detector(), cfg.source(), cfg["sim.n_gates"], cfg["seed"], max_events=cfg["sim.max_events"])
    formats.write_stream(stream, out)
    cfg.write(_sidecar(out, ".config.yaml"))
    log.info("wrote %d events over %d gates to %s", len(stream), stream.n_gates, out)
    return EXIT_OK


def cmd_characterize(args) -> int:
    cfg = _config(args, **{"analysis.n_a": args.n_a, "analysis.n_bins": args.n_bins, "analysis.mu": args.mu})
    stream = formats.read_stream(args.stream)
    rep_rate = stream.source.rep_rate if stream.source is not None else cfg["source.rep_rate_hz"]
    mu = cfg["analysis.mu"]
    if mu is None:
        if stream.source is None:
            raise ConfigError("mean photon number unknown: pass --mu or set analysis.mu")
        mu = stream.source.mu
    src = SourceParams(rep_rate, mu)
    hist = build_histogram(stream, src, cfg["analysis.n_bins"])
    provenance = {"stream_header": formats.stream_header(stream), "config": dict(cfg.values)}
    result = characterize_histogram(hist, mu, cfg["analysis.n_a"], cfg.operating_point(), provenance)
    out = Path(args.out or Path(args.stream).with_suffix(".report.json"))
    report = result.to_dict()
    report["tool_version"] = __version__
    if stream.detector is not None:
        a = tail_amplitude(stream.detector.afterpulse)
        report["injected"] = {"qe": stream.detector.qe, "amplitude_A": a, "app": app_from_amplitude(a)}
    formats.write_json(report, out)
    formats.write_histogram_csv(hist, _sidecar(out, ".hist.csv"))
    cfg.write(_sidecar(out, ".config.yaml"))
    print(f"QE  = {result.qe:.6g} +/- {result.qe_sigma:.2g}")
    print(f"APP = {result.app:.6g} +/- {result.app_sigma:.2g}")
    return EXIT_OK


def cmd_rate_fit(args) -> int:
    cfg = _config(args, **{"rate.rep_rate_hz": args.rep_rate, "rate.n_d_max": args.n_d_max})
    curve = formats.read_rate_curve_csv(args.csv, cfg["rate.rep_rate_hz"], cfg["rate.window_s"])
    results = dead_time_verdict(curve, cfg["rate.n_d_max"])
    out = Path(args.out or Path(args.csv).with_suffix(".ratefit.json"))
    payload = {
        "tool_version": __version__,
        "rep_rate_hz": curve.rep_rate,
        "n_points": len(curve),
        "photon_rate_uncertainty": "treated as exact",
        "models": [r.to_dict() for r in results],
        "compatible_n_d": [r.n_d_tested for r in results if r.verdict == "compatible"],
        "indeterminate": results[0].indeterminate,
        "config": dict(cfg.values),
    }
    formats.write_json(payload, out)
    pos = curve.n_ph[curve.n_ph > 0]
    lo, hi = (pos.min() / 10, pos.max() * 10) if pos.size else (1.0, 1e10)
    table = prediction_table(results, curve.rep_rate, lo, hi, cfg["rate.grid_points"])
    formats.write_prediction_csv(table, [r.n_d_tested for r in results], _sidecar(out, ".pred.csv"))
    cfg.write(_sidecar(out, ".config.yaml"))
    for r in results:
        print(f"n_d={r.n_d_tested}: QE={r.qe:.6g} chi2/dof={r.chi2:.4g}/{r.dof} p={r.p_value:.3g} {r.verdict}")
    return EXIT_OK


def _resolved_stub(cfg):
    stub = cfg.stub()
    if cfg["stub.target_depth_db"] is not None:
        stub = stub.with_loss(loss_for_peak_depth(cfg["stub.target_depth_db"], stub))
    return stub


def cmd_stub(args) -> int:
    cfg = _config(args)
    stub = _resolved_stub(cfg)
    f, att = frequency_response(stub, cfg["sweep.f_min_hz"], cfg["sweep.f_max_hz"], cfg["sweep.n_points"], cfg["stub.cap_db"])
    out = Path(args.out or "stub_response.csv")
    formats.write_columns_csv(out, ["freq_hz", "atten_db"], f, att)
    f_peak, depth = peak_notch_depth(stub, cap_db=cfg["stub.cap_db"])
    formats.write_json(
        {"tool_version": __version__, "stub": stub.to_dict(), "first_notch_hz": f_peak, "peak_depth_db": depth, "config": dict(cfg.values)},
        _sidecar(out, ".json"),
    )
    cfg.write(_sidecar(out, ".config.yaml"))
    print(f"first notch {f_peak:.6g} Hz, depth {depth:.4g} dB")
    return EXIT_OK


def cmd_trace(args) -> int:
    cfg = _config(args)
    stub = _resolved_stub(cfg)
    times = cfg["trace.avalanche_times_s"]
    if cfg["trace.n_random_avalanches"]:
        times = list(times) + random_avalanche_times(
            cfg["trace.n_random_avalanches"], cfg["trace.gate_freq_hz"], cfg["trace.duration_s"], cfg["seed"]
        ).tolist()
    tp = cfg.trace(sorted(times))
    trace = synthesize_trace(tp, stub)
    events = discriminate(trace.v, cfg["discriminator.upper_v"], cfg["discriminator.lower_v"], tp.sample_rate)
    out = Path(args.out or "trace.csv")
    formats.write_columns_csv(out, ["time_s", "volts"], trace.t, trace.v)
    if args.binary:
        formats.write_trace_binary(trace, {"trace": tp.to_dict(), "stub": stub.to_dict()}, _sidecar(out, ".f64"))
    formats.write_columns_csv(
        _sidecar(out, ".events.csv"), ["time_s", "width_s", "complete"], events.times, events.widths, events.complete.astype(int)
    )
    formats.write_columns_csv(_sidecar(out, ".truth.csv"), ["time_s"], np.asarray(tp.avalanche_times))
    cfg.write(_sidecar(out, ".config.yaml"))
    print(f"{len(events)} discriminated events from {len(tp.avalanche_times)} avalanches")
    return EXIT_OK


def cmd_cascade(args) -> int:
    overrides = {}
    if args.probs:
        overrides["detector.afterpulse_probs"] = args.probs
    if args.n_primaries:
        overrides["cascade.n_primaries"] = args.n_primaries
    cfg = _config(args, **overrides)
    ap = AfterpulseProfile(cfg["detector.afterpulse_probs"])
    res = cascade_oracle(ap, cfg["cascade.n_primaries"], cfg["seed"])
    a = tail_amplitude(ap)
    out = Path(args.out or "cascade.json")
    payload = {"tool_version": __version__, **res.to_dict(), "amplitude_A": a, "closed_form_app": app_from_amplitude(a), "config": dict(cfg.values)}
    formats.write_json(payload, out)
    cfg.write(_sidecar(out, ".config.yaml"))
    print(f"mean afterpulses per primary {res.mean:.6g} +/- {res.stderr:.2g} (closed form {payload['closed_form_app']:.6g})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat YAML run configuration")
    common.add_argument("--seed", type=int, help="override the configured RNG seed")
    common.add_argument("--out", help="primary output path; sidecars are written next to it")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="spadsim", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"spadsim {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="generate a detection event stream")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("characterize", parents=[common], help="QE and APP from an event stream")
    s.add_argument("stream")
    s.add_argument("--n-a", type=int, dest="n_a")
    s.add_argument("--n-bins", type=int, dest="n_bins")
    s.add_argument("--mu", type=float)
    s.set_defaults(func=cmd_characterize)

    s = sub.add_parser("rate-fit", parents=[common], help="dead-time test on a count-rate curve")
    s.add_argument("csv")
    s.add_argument("--rep-rate", type=float, dest="rep_rate")
    s.add_argument("--n-d-max", type=int, dest="n_d_max")
    s.set_defaults(func=cmd_rate_fit)

    s = sub.add_parser("stub", parents=[common], help="notch response of the shorted stub")
    s.set_defaults(func=cmd_stub)

    s = sub.add_parser("trace", parents=[common], help="synthesize and discriminate an output trace")
    s.add_argument("--binary", action="store_true", help="also write raw float64 samples with a JSON sidecar")
    s.set_defaults(func=cmd_trace)

    s = sub.add_parser("cascade-oracle", parents=[common], help="Monte Carlo afterpulse cascade")
    s.add_argument("--probs", type=lambda v: [float(x) for x in v.split(",")], help="comma-separated p_a(n)")
    s.add_argument("--n-primaries", type=int, dest="n_primaries")
    s.set_defaults(func=cmd_cascade)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ParameterError, UnitMismatchError, MemoryBudgetError, FileNotFoundError) as exc:
        print(f"spadsim: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InsufficientDataError as exc:
        print(f"spadsim: insufficient data: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ConvergenceError as exc:
        print(f"spadsim: fit did not converge: {exc}", file=sys.stderr)
        for it, chi2, params in exc.trace[-5:]:
            print(f"  iter {it}: chi2={chi2:.6g} params={list(params)}", file=sys.stderr)
        return EXIT_CONVERGENCE


if __name__ == "__main__":
    sys.exit(main())
