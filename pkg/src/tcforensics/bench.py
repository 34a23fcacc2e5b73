"""Seeded benchmark harness: success and false-positive rates per method.

Every trial draws its seed from ``SeedSequence([base_seed, scenario_index,
trial_index])`` so a suite reruns bit-for-bit. Baseline thresholds are
calibrated on noise-only trials (separate seeds) to a target trial-level
false-positive rate before the suite runs.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .baselines import BASELINE_METHODS, BaselineConfig, Method, calibrate, is_flagged, score_series
from .channels import (
    CACHE_PRESET_BASE_NS,
    CACHE_PRESET_JITTER_NS,
    BitMessage,
    Channel,
    ChannelSpec,
    NoiseSpec,
    Scheme,
    balance_stc_message,
    merge_traces,
    simulate_channel,
    simulate_noise,
)
from .detector import ChannelType, DetectorConfig, _split_candidates, analyze_series, interarrival
from .trace import Trace, TraceKind

PRESETS = ("flush_reload",)
CALIBRATION_TAG = 0xCA11B
ALL_METHODS = (Method.SIGNATURE,) + BASELINE_METHODS


class SuiteError(ValueError):
    pass


@dataclass(frozen=True)
class Scenario:
    name: str
    channel: ChannelSpec | None = None
    noise: NoiseSpec | None = None
    message_bits: int = 1000
    trials: int = 200
    preset: str | None = None

    def __post_init__(self):
        if self.preset is not None:
            if self.preset not in PRESETS:
                raise SuiteError(f"unknown preset {self.preset!r}")
            if self.channel is None:
                object.__setattr__(self, "channel", ChannelSpec(
                    Channel.CACHE, Scheme.STC, CACHE_PRESET_BASE_NS,
                    jitter_sigma_ns=CACHE_PRESET_JITTER_NS))
        if self.channel is None and self.noise is None:
            raise SuiteError(f"scenario {self.name!r} has neither a channel nor noise")
        if self.trials < 1:
            raise SuiteError("trials must be >= 1")
        if self.channel is not None and self.message_bits < 1:
            raise SuiteError("message_bits must be >= 1")

    @property
    def kind(self) -> TraceKind:
        if self.channel is not None:
            return self.channel.trace_kind
        return TraceKind.MEMORY

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "channel": None if self.channel is None else self.channel.to_dict(),
            "noise": None if self.noise is None else self.noise.to_dict(),
            "message_bits": self.message_bits,
            "trials": self.trials,
            "preset": self.preset,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        d = dict(d)
        unknown = set(d) - {"name", "channel", "noise", "message_bits", "trials", "preset", "kind"}
        if unknown:
            raise SuiteError(f"unknown scenario fields: {sorted(unknown)}")
        kind = d.pop("kind", None)
        if d.get("channel") is not None:
            d["channel"] = ChannelSpec.from_dict(d["channel"])
        if d.get("noise") is not None:
            d["noise"] = NoiseSpec.from_dict(d["noise"])
        sc = cls(**d)
        if kind is not None and TraceKind(kind) is not sc.kind:
            raise SuiteError(f"scenario {sc.name!r}: kind {kind!r} does not match its channel")
        return sc


@dataclass(frozen=True)
class BenchConfig:
    detector: DetectorConfig = DetectorConfig()
    baseline: BaselineConfig = BaselineConfig()
    methods: tuple = ALL_METHODS
    calibrate: bool = True
    calibration_trials: int = 100
    target_fp: float = 0.10
    jobs: int = 1

    def __post_init__(self):
        object.__setattr__(self, "methods", tuple(Method(m) for m in self.methods))
        if not self.methods:
            raise ValueError("at least one method is required")
        if not 0 < self.target_fp < 1:
            raise ValueError("target_fp must lie in (0, 1)")
        if self.calibration_trials < 1:
            raise ValueError("calibration_trials must be >= 1")
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")

    def to_dict(self) -> dict:
        return {"detector": self.detector.to_dict(), "baseline": self.baseline.to_dict(),
                "methods": [m.value for m in self.methods], "calibrate": self.calibrate,
                "calibration_trials": self.calibration_trials, "target_fp": self.target_fp,
                "jobs": self.jobs}


@dataclass(frozen=True)
class BenchResult:
    scenario: str
    method: Method
    success_rate: float | None
    false_positive_rate: float
    trials: int
    successes: int = 0
    false_positives: int = 0
    type_confusion: int = 0
    errors: int = 0
    thresholds: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"scenario": self.scenario, "method": self.method.value,
                "success_rate": self.success_rate, "false_positive_rate": self.false_positive_rate,
                "trials": self.trials, "successes": self.successes,
                "false_positives": self.false_positives, "type_confusion": self.type_confusion,
                "errors": self.errors, "thresholds": self.thresholds}


# --------------------------------------------------------------------------
# builtin suites


def table1_suite(trials: int = 200, message_bits: int = 1000) -> list[Scenario]:
    """Five channels, each clean and merged with the default noise."""
    channels = [
        ("cache", ChannelSpec(Channel.CACHE, Scheme.STC, 100_000, jitter_sigma_ns=100.0), None),
        ("load", ChannelSpec(Channel.CPU_LOAD, Scheme.DTC, 2_000_000, 5_000_000,
                             jitter_sigma_ns=2_000.0), None),
        ("shm", ChannelSpec(Channel.SHARED_MEMORY, Scheme.DTC, 500_000, 1_000_000,
                            jitter_sigma_ns=500.0), None),
        ("ip", ChannelSpec(Channel.IP_TIMING, Scheme.DTC, 30_000_000, 50_000_000,
                           jitter_sigma_ns=30_000.0), None),
        ("flush-reload", None, "flush_reload"),
    ]
    out = []
    for name, spec, preset in channels:
        out.append(Scenario(name, spec, None, message_bits, trials, preset))
        out.append(Scenario(f"{name} with noise", spec, NoiseSpec(), message_bits, trials, preset))
    return out


def normal_suite(trials: int = 200) -> list[Scenario]:
    return [Scenario("normal", None, NoiseSpec(), trials=trials)]


BUILTIN_SUITES = {"table1": table1_suite, "normal": normal_suite}


def builtin_suite(name: str, trials: int = 200) -> list[Scenario]:
    try:
        return BUILTIN_SUITES[name](trials=trials)
    except KeyError:
        raise SuiteError(f"unknown builtin suite {name!r}") from None


def load_suite(path) -> list[Scenario]:
    """Read a JSON list of scenario objects."""
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise SuiteError(f"{path}: {exc}") from exc
    if isinstance(data, dict):
        data = data.get("scenarios")
    if not isinstance(data, list) or not data:
        raise SuiteError(f"{path}: expected a non-empty list of scenarios")
    try:
        return [Scenario.from_dict(d) for d in data]
    except (TypeError, ValueError, KeyError) as exc:
        raise SuiteError(f"{path}: {exc}") from exc


# --------------------------------------------------------------------------
# trials


def trial_seed(base_seed: int, scenario_index: int, trial_index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([base_seed, scenario_index, trial_index])


def build_trial_trace(scenario: Scenario, seed: np.random.SeedSequence) -> Trace:
    """Simulate one trial: channel at a random offset inside the noise window."""
    msg_seed, chan_seed, noise_seed, off_seed = (int(s.generate_state(1)[0]) for s in seed.spawn(4))
    trace = None
    if scenario.channel is not None:
        msg = BitMessage.random(scenario.message_bits, msg_seed)
        if scenario.preset == "flush_reload":
            msg = balance_stc_message(msg)
        trace = simulate_channel(msg, scenario.channel, chan_seed)
    if scenario.noise is None:
        return trace
    noise = scenario.noise
    if trace is not None and len(trace):
        span = int(trace.timestamps[-1] - trace.timestamps[0])
        noise = replace(noise, duration_ns=max(int(noise.duration_ns), span + 1))
        offset = int(np.random.default_rng(off_seed).integers(0, noise.duration_ns - span))
        shifted = {**trace.columns, "t": trace.columns["t"] - trace.timestamps[0] + offset}
        trace = Trace(trace.kind, shifted, page_size=trace.page_size, meta=trace.meta)
    background = simulate_noise(noise, noise_seed, scenario.kind)
    return background if trace is None else merge_traces(trace, background)


def _key_scores(trace: Trace, det_cfg: DetectorConfig, base_cfg: BaselineConfig, methods):
    """Per candidate key: signature verdict type and raw baseline scores."""
    accepted, rejected = _split_candidates(trace, det_cfg)
    t = trace.timestamps
    out = []
    for key, ix in accepted:
        row = {"key": key}
        if Method.SIGNATURE in methods:
            row[Method.SIGNATURE] = analyze_series(key, t[ix], ix, det_cfg).channel_type
        if any(m in methods for m in BASELINE_METHODS):
            vals = interarrival(t[ix], key).values_ns
            for m in BASELINE_METHODS:
                if m in methods:
                    row[m] = score_series(vals, m, base_cfg)[0]
        out.append(row)
    return out


def run_trial(scenario: Scenario, seed: np.random.SeedSequence, det_cfg: DetectorConfig,
              base_cfgs: dict, methods) -> dict:
    """Outcome of one trial per method: hit, type confusion, false positive."""
    trace = build_trial_trace(scenario, seed)
    truth_key = None if scenario.channel is None else scenario.channel.key
    truth_type = None if scenario.channel is None else ChannelType(scenario.channel.scheme.value)
    rows = _key_scores(trace, det_cfg, base_cfgs.get(Method.VARIANCE, BaselineConfig()), methods)
    out = {}
    for m in methods:
        hit = confused = fp = False
        for row in rows:
            if m is Method.SIGNATURE:
                flagged = row[m] is not ChannelType.NONE
            else:
                flagged = is_flagged(row[m], m, base_cfgs[m])
            if not flagged:
                continue
            if row["key"] == truth_key:
                if m is Method.SIGNATURE and row[m] is not truth_type:
                    confused = True
                else:
                    hit = True
            else:
                fp = True
        out[m] = {"hit": hit, "confused": confused, "fp": fp}
    return out


def _stable_int(obj) -> int:
    return int(hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:8], 16)


def calibration_scores(noise: NoiseSpec, kind: TraceKind, trials: int, base_seed: int,
                       det_cfg: DetectorConfig, cfg: BaselineConfig) -> dict:
    """Baseline scores of every key in ``trials`` noise-only traces, per method."""
    tag = _stable_int({"kind": TraceKind(kind).value, "noise": noise.to_dict()})
    scores = {m: [] for m in BASELINE_METHODS}
    for i in range(trials):
        seed = np.random.SeedSequence([base_seed, CALIBRATION_TAG, tag, i])
        trace = simulate_noise(noise, int(seed.generate_state(1)[0]), kind)
        rows = _key_scores(trace, det_cfg, cfg, BASELINE_METHODS)
        for m in BASELINE_METHODS:
            scores[m].append([r[m] for r in rows if r[m] is not None])
    return scores


def calibrated_configs(scenario: Scenario, cfg: BenchConfig, base_seed: int, cache: dict) -> dict:
    """Baseline configs per method, thresholds set on the scenario's noise model."""
    if not cfg.calibrate:
        return {m: cfg.baseline for m in BASELINE_METHODS}
    noise = scenario.noise or NoiseSpec()
    ck = (scenario.kind, noise)
    if ck not in cache:
        scores = calibration_scores(noise, scenario.kind, cfg.calibration_trials, base_seed,
                                    cfg.detector, cfg.baseline)
        cache[ck] = {m: calibrate(scores[m], m, cfg.target_fp, cfg.baseline)
                     for m in BASELINE_METHODS}
    return cache[ck]


def _trial_job(args):
    scenario, seed, det_cfg, base_cfgs, methods = args
    try:
        return run_trial(scenario, seed, det_cfg, base_cfgs, methods)
    except Exception as exc:  # recorded, never aborts the suite
        return {"error": f"{type(exc).__name__}: {exc}"}


def run_benchmark(scenarios: Sequence[Scenario], cfg: BenchConfig = BenchConfig(),
                  base_seed: int = 0, progress=None) -> list[BenchResult]:
    """Run every scenario for its trial count and aggregate rates per method."""
    results = []
    cache: dict = {}
    executor = ProcessPoolExecutor(cfg.jobs) if cfg.jobs > 1 else None
    try:
        for si, sc in enumerate(scenarios):
            base_cfgs = calibrated_configs(sc, cfg, base_seed, cache)
            jobs = [(sc, trial_seed(base_seed, si, ti), cfg.detector, base_cfgs, cfg.methods)
                    for ti in range(sc.trials)]
            if executor is None:
                outcomes = [_trial_job(j) for j in jobs]
            else:
                outcomes = list(executor.map(_trial_job, jobs, chunksize=8))
            results.extend(_aggregate(sc, outcomes, cfg.methods, base_cfgs))
            if progress is not None:
                progress(sc, results[-len(cfg.methods):])
    finally:
        if executor is not None:
            executor.shutdown()
    return results


def _aggregate(sc: Scenario, outcomes: list, methods, base_cfgs) -> list[BenchResult]:
    n = len(outcomes)
    errors = sum(1 for o in outcomes if "error" in o)
    out = []
    for m in methods:
        ok = [o[m] for o in outcomes if "error" not in o]
        hits = sum(o["hit"] for o in ok)
        fps = sum(o["fp"] for o in ok)
        confused = sum(o["confused"] for o in ok)
        thresholds = {}
        if m is Method.VARIANCE:
            thresholds = {"regularity_threshold": base_cfgs[m].regularity_threshold}
        elif m is Method.EPSILON:
            thresholds = {"similarity_threshold": base_cfgs[m].similarity_threshold}
        out.append(BenchResult(
            scenario=sc.name, method=m,
            success_rate=None if sc.channel is None else hits / n,
            false_positive_rate=fps / n, trials=n, successes=hits, false_positives=fps,
            type_confusion=confused, errors=errors, thresholds=thresholds))
    return out


# --------------------------------------------------------------------------
# output

CSV_COLUMNS = ("scenario", "method", "success_rate", "false_positive_rate", "trials")


def _fmt_rate(r: float | None) -> str:
    return "" if r is None else f"{r:.4f}"


def results_to_csv(results: Sequence[BenchResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in results:
        w.writerow([r.scenario, r.method.value, _fmt_rate(r.success_rate),
                    _fmt_rate(r.false_positive_rate), r.trials])
    return buf.getvalue()


def results_to_table(results: Sequence[BenchResult]) -> str:
    """Scenario rows, one success/FP column pair per method."""
    methods = list(dict.fromkeys(r.method for r in results))
    rows: dict[str, dict] = {}
    for r in results:
        rows.setdefault(r.scenario, {})[r.method] = r
    name_w = max([len("scenario")] + [len(s) for s in rows])
    head = "scenario".ljust(name_w) + "".join(f" | {m.value + ' succ':>14} {'FP':>7}" for m in methods)
    lines = [head, "-" * len(head)]
    for name, by_m in rows.items():
        cells = []
        for m in methods:
            r = by_m.get(m)
            succ = "-" if r is None or r.success_rate is None else f"{100 * r.success_rate:.2f}%"
            fp = "-" if r is None else f"{100 * r.false_positive_rate:.2f}%"
            cells.append(f" | {succ:>14} {fp:>7}")
        lines.append(name.ljust(name_w) + "".join(cells))
    return "\n".join(lines) + "\n"
