"""Command-line entry point: simulate, detect, bench, report, verify.

Exit codes: 0 when something was found (or a store verified clean),
1 when nothing was found (or verification failed), 2 on usage or input
errors. Every run echoes its effective configuration to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from . import __version__
from .baselines import BASELINE_METHODS, BaselineConfig, Method, baseline_detect
from .bench import BenchConfig, SuiteError, builtin_suite, load_suite, results_to_csv, results_to_table, run_benchmark
from .channels import (
    CACHE_PRESET_BASE_NS,
    CACHE_PRESET_JITTER_NS,
    BitMessage,
    Channel,
    ChannelSpec,
    NoiseSpec,
    Scheme,
    SimulationError,
    balance_stc_message,
    merge_traces,
    simulate_channel,
    simulate_noise,
)
from .detector import DetectorConfig, detect
from .forensics import build_report, store_evidence, verify_store
from .trace import TraceError, key_from_dict, parse_trace, write_trace

EXIT_FOUND, EXIT_NOT_FOUND, EXIT_ERROR = 0, 1, 2
SUMMARY_LIMIT = 5

CHANNEL_NAMES = {"shm": Channel.SHARED_MEMORY, "cache": Channel.CACHE,
                 "load": Channel.CPU_LOAD, "ip": Channel.IP_TIMING}

# scheme, base, long, jitter used when the flags are omitted
CHANNEL_DEFAULTS = {
    Channel.CACHE: (Scheme.STC, 100_000, None, 100.0),
    Channel.CPU_LOAD: (Scheme.DTC, 2_000_000, 5_000_000, 2_000.0),
    Channel.SHARED_MEMORY: (Scheme.DTC, 500_000, 1_000_000, 500.0),
    Channel.IP_TIMING: (Scheme.DTC, 30_000_000, 50_000_000, 30_000.0),
}


class UsageError(Exception):
    pass


def _echo_config(cfg: dict) -> None:
    print("effective config: " + json.dumps(cfg, sort_keys=True), file=sys.stderr)


def _read_bits(spec: str, seed: int) -> BitMessage:
    if spec.startswith("@"):
        path = Path(spec[1:])
        try:
            text = "".join(path.read_text(encoding="utf-8").split())
        except OSError as exc:
            raise UsageError(f"cannot read bits file {path}: {exc}") from exc
        try:
            msg = BitMessage.from_string(text)
        except ValueError as exc:
            raise UsageError(f"{path}: {exc}") from exc
        if not len(msg):
            raise UsageError(f"{path}: empty message")
        return msg
    try:
        n = int(spec)
    except ValueError:
        raise UsageError(f"--bits expects a count or @file, got {spec!r}") from None
    if n < 1:
        raise UsageError("--bits count must be >= 1")
    return BitMessage.random(n, [seed, 0x5EED])


# --------------------------------------------------------------------------
# subcommands


def cmd_simulate(args) -> int:
    channel = CHANNEL_NAMES[args.channel]
    d_scheme, d_base, d_long, d_jitter = CHANNEL_DEFAULTS[channel]
    if args.preset:
        if channel is not Channel.CACHE or (args.scheme not in (None, "stc")):
            raise UsageError("--preset flush-reload applies to --channel cache --scheme stc only")
        if args.base_ns is not None or args.long_ns is not None:
            raise UsageError("--preset fixes the slot length; drop --base-ns/--long-ns")
        d_base, d_jitter = CACHE_PRESET_BASE_NS, CACHE_PRESET_JITTER_NS
    scheme = Scheme(args.scheme.upper()) if args.scheme else d_scheme
    if scheme is Scheme.STC and args.long_ns is not None:
        raise UsageError("--long-ns is meaningless for an STC channel")
    if scheme is Scheme.STC and channel is Channel.CPU_LOAD:
        raise UsageError("the load channel is DTC only")
    base = args.base_ns if args.base_ns is not None else d_base
    if scheme is Scheme.DTC:
        if args.long_ns is not None:
            long_ns = args.long_ns
        elif args.base_ns is None and d_long is not None:
            long_ns = d_long
        else:
            raise UsageError("a DTC channel needs --long-ns")
    else:
        long_ns = None
    jitter = args.jitter_ns if args.jitter_ns is not None else (
        d_jitter if args.base_ns is None else base / 1000.0)
    try:
        spec = ChannelSpec(channel, scheme, base, long_ns, jitter, start_ns=args.start_ns)
    except SimulationError as exc:
        raise UsageError(str(exc)) from exc
    msg = _read_bits(args.bits, args.seed)
    if args.preset:
        msg = balance_stc_message(msg)
    noise = None
    if args.noise_procs > 0:
        noise = NoiseSpec(args.noise_procs, args.noise_rate_hz, args.noise_pool,
                          int(args.noise_duration_s * 1e9))
    _echo_config({"command": "simulate", "channel": spec.to_dict(), "preset": args.preset,
                  "bits": len(msg), "seed": args.seed,
                  "noise": None if noise is None else noise.to_dict(), "out": str(args.out)})
    try:
        trace = simulate_channel(msg, spec, args.seed)
    except SimulationError as exc:
        raise UsageError(str(exc)) from exc
    if noise is not None:
        end = int(trace.timestamps[-1]) + 1 if len(trace) else 0
        noise = replace(noise, duration_ns=max(noise.duration_ns, end))
        trace = merge_traces(trace, simulate_noise(noise, args.seed + 1, spec.trace_kind))
    write_trace(trace, args.out)
    print(f"injected {spec.scheme.value} channel on {spec.key} ({len(trace)} records) -> {args.out}")
    return EXIT_FOUND


def _detector_config(args) -> DetectorConfig:
    try:
        return DetectorConfig(args.repeat_threshold, args.k1, args.k2, args.min_group_frac,
                              reads_only=not args.all_accesses)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _baseline_config(args) -> BaselineConfig:
    try:
        return BaselineConfig(args.window_size, args.epsilon, args.similarity_threshold,
                              args.regularity_threshold)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _run_detection(args):
    det_cfg = _detector_config(args)
    base_cfg = _baseline_config(args)
    methods = list(Method) if args.method == "all" else [Method(args.method)]
    _echo_config({"command": args.command, "input": str(args.input),
                  "methods": [m.value for m in methods], "detector": det_cfg.to_dict(),
                  "baseline": base_cfg.to_dict()})
    trace = parse_trace(args.input)
    verdicts = detect(trace, det_cfg) if Method.SIGNATURE in methods else []
    baselines = baseline_detect(trace, base_cfg, det_cfg,
                                [m for m in BASELINE_METHODS if m in methods])
    report = build_report(trace, verdicts, det_cfg, baselines)
    report.config["methods"] = [m.value for m in methods]
    report.config["baseline"] = base_cfg.to_dict()
    found = report.positive or any(b.flagged for b in baselines)
    return trace, report, baselines, found


def _summary(report, baselines) -> str:
    lines = []
    for f in report.findings:
        dec = f["decoded"]
        bits = dec["bits"] or ""
        shown = bits if len(bits) <= 64 else bits[:64] + "..."
        lines.append(f"signature: {f['channel_type']} on {_key_text(f['key'])} "
                     f"(base {f['base_interval_ns']:.0f} ns, {len(f['groups'])} groups) "
                     f"decoded {len(bits)} bits {shown}")
    for m in BASELINE_METHODS:
        flagged = [b for b in baselines if b.method is m and b.flagged]
        for b in flagged[:SUMMARY_LIMIT]:
            lines.append(f"{m.value}: flagged {b.key} (score {b.score:.4g})")
        if len(flagged) > SUMMARY_LIMIT:
            lines.append(f"{m.value}: ... {len(flagged) - SUMMARY_LIMIT} more flagged keys")
    if not lines:
        lines.append("no covert timing channel found")
    return "\n".join(lines)


def _key_text(d: dict) -> str:
    return str(key_from_dict(d))


def cmd_detect(args) -> int:
    _, report, baselines, found = _run_detection(args)
    if args.out:
        Path(args.out).write_text(report.to_json(), encoding="utf-8")
    else:
        sys.stdout.write(report.to_json())
    print(_summary(report, baselines), file=sys.stderr if not args.out else sys.stdout)
    return EXIT_FOUND if found else EXIT_NOT_FOUND


def cmd_report(args) -> int:
    trace, report, baselines, found = _run_detection(args)
    paths = store_evidence(report, trace, args.store, margin=args.margin)
    print(_summary(report, baselines))
    for p in paths:
        print(f"wrote {p}")
    return EXIT_FOUND if found else EXIT_NOT_FOUND


def cmd_verify(args) -> int:
    _echo_config({"command": "verify", "store": str(args.store)})
    if not Path(args.store).is_dir():
        raise UsageError(f"{args.store} is not a directory")
    problems = verify_store(args.store)
    for p in problems:
        print(p)
    if problems:
        return EXIT_NOT_FOUND
    print(f"{args.store}: intact")
    return EXIT_FOUND


def cmd_bench(args) -> int:
    if args.suite:
        scenarios = load_suite(args.suite)
        if args.trials is not None:
            scenarios = [replace(s, trials=args.trials) for s in scenarios]
    else:
        scenarios = builtin_suite(args.builtin, trials=args.trials if args.trials is not None else 200)
    try:
        cfg = BenchConfig(
            detector=_detector_config(args),
            baseline=_baseline_config(args),
            methods=tuple(Method) if args.method == "all" else (Method(args.method),),
            calibrate=not args.no_calibrate,
            calibration_trials=args.calibration_trials,
            target_fp=args.target_fp,
            jobs=args.jobs,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    _echo_config({"command": "bench", "seed": args.seed, "bench": cfg.to_dict(),
                  "scenarios": [s.to_dict() for s in scenarios],
                  "out": None if args.out is None else str(args.out)})

    def progress(sc, rows):
        parts = ", ".join(
            f"{r.method.value} succ={'-' if r.success_rate is None else f'{r.success_rate:.3f}'}"
            f" fp={r.false_positive_rate:.3f}" for r in rows)
        print(f"[{sc.name}] {parts}", file=sys.stderr)

    results = run_benchmark(scenarios, cfg, args.seed, progress=progress)
    table = results_to_table(results)
    sys.stdout.write(table)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "results.csv").write_text(results_to_csv(results), encoding="utf-8")
        (out / "results.txt").write_text(table, encoding="utf-8")
        (out / "results.json").write_text(json.dumps(
            {"seed": args.seed, "config": cfg.to_dict(),
             "results": [r.to_dict() for r in results]}, indent=2, sort_keys=True) + "\n",
            encoding="utf-8")
    return EXIT_FOUND


# --------------------------------------------------------------------------
# parser


def _add_detector_flags(p: argparse.ArgumentParser) -> None:
    d, b = DetectorConfig(), BaselineConfig()
    p.add_argument("--method", choices=[m.value for m in Method] + ["all"], default="signature")
    p.add_argument("--repeat-threshold", type=int, default=d.repeat_threshold)
    p.add_argument("--k1", type=float, default=d.k1, help="grouping relative-difference bound")
    p.add_argument("--k2", type=float, default=d.k2, help="smoothness bound")
    p.add_argument("--min-group-frac", type=float, default=d.min_group_frac)
    p.add_argument("--all-accesses", action="store_true",
                   help="consider writes and executes, not only reads")
    p.add_argument("--window-size", type=int, default=b.window_size)
    p.add_argument("--epsilon", type=float, default=b.epsilon)
    p.add_argument("--similarity-threshold", type=float, default=b.similarity_threshold)
    p.add_argument("--regularity-threshold", type=float, default=b.regularity_threshold)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tcforensics",
                                     description="Covert timing channel simulation and detection")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write a simulated channel trace")
    p.add_argument("--channel", choices=sorted(CHANNEL_NAMES), required=True)
    p.add_argument("--scheme", choices=["stc", "dtc"])
    p.add_argument("--preset", choices=["flush-reload"])
    p.add_argument("--bits", default="1000", help="message length, or @file with a bit string")
    p.add_argument("--base-ns", type=int)
    p.add_argument("--long-ns", type=int)
    p.add_argument("--jitter-ns", type=float)
    p.add_argument("--start-ns", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise-procs", type=int, default=0)
    p.add_argument("--noise-rate-hz", type=float, default=NoiseSpec.mean_rate_hz)
    p.add_argument("--noise-pool", type=int, default=NoiseSpec.page_pool)
    p.add_argument("--noise-duration-s", type=float, default=NoiseSpec.duration_ns / 1e9)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("detect", help="scan a trace and write a report")
    p.add_argument("--input", type=Path, required=True)
    _add_detector_flags(p)
    p.add_argument("--out", type=Path, help="report path (stdout when omitted)")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("report", help="detect and store report, evidence slices and manifest")
    p.add_argument("--input", type=Path, required=True)
    _add_detector_flags(p)
    p.add_argument("--store", type=Path, required=True)
    p.add_argument("--margin", type=int, default=5, help="neighbouring records kept per range")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("verify", help="re-hash an evidence store")
    p.add_argument("--store", type=Path, required=True)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("bench", help="run a benchmark suite")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--suite", type=Path, help="JSON scenario list")
    src.add_argument("--builtin", choices=["table1", "normal"])
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--calibration-trials", type=int, default=BenchConfig.calibration_trials)
    p.add_argument("--target-fp", type=float, default=BenchConfig.target_fp,
                   help="trial-level FP rate the baseline thresholds are calibrated to")
    p.add_argument("--no-calibrate", action="store_true",
                   help="use the baseline thresholds as given")
    _add_detector_flags(p)
    p.set_defaults(method="all")
    p.add_argument("--out", type=Path, help="directory for results.csv/.txt/.json")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) if exc.code in (0, None) else EXIT_ERROR
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"tcforensics {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (TraceError, SuiteError, OSError) as exc:
        print(f"tcforensics {args.command}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
