"""Seeded generators for covert timing channels and background noise.

Four channels are modelled as the record streams a page-level memory
monitor or a packet tap would see:

* ``shared_memory`` and ``cpu_load``: two-interval (DTC) channels on one
  page of one process.
* ``cache``: slot-based (STC) channel, seen through the spy's probe page.
* ``ip_timing``: DTC or STC on a single UDP 5-tuple.

All generators are pure functions of their arguments and seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Sequence

import numpy as np

from .trace import (
    DEFAULT_PAGE_SIZE,
    CandidateKey,
    FlowKey,
    PageKey,
    Protocol,
    Trace,
    TraceError,
    TraceKind,
    concat_columns,
    ip_to_int,
    key_from_dict,
)


class Channel(str, Enum):
    SHARED_MEMORY = "shared_memory"
    CACHE = "cache"
    CPU_LOAD = "cpu_load"
    IP_TIMING = "ip_timing"


class Scheme(str, Enum):
    STC = "STC"
    DTC = "DTC"


class SimulationError(ValueError):
    pass


class DecodeError(ValueError):
    pass


DEFAULT_KEYS = {
    Channel.CACHE: PageKey(1, 2767, 0x195A0000),
    Channel.SHARED_MEMORY: PageKey(1, 1893, 0x2A4C1000),
    Channel.CPU_LOAD: PageKey(2, 3121, 0x0813F000),
    Channel.IP_TIMING: FlowKey("192.168.87.2", 48628, "192.168.87.4", 6789, Protocol.UDP),
}

# Minimum relative separation of the two DTC levels (the default grouping bound).
MIN_LEVEL_SEPARATION = 0.1


@dataclass(frozen=True)
class BitMessage:
    bits: tuple = ()

    def __post_init__(self):
        bits = tuple(int(b) for b in self.bits)
        if any(b not in (0, 1) for b in bits):
            raise ValueError("bits must be 0 or 1")
        object.__setattr__(self, "bits", bits)

    @classmethod
    def from_string(cls, text: str) -> "BitMessage":
        text = text.strip()
        if any(ch not in "01" for ch in text):
            raise ValueError(f"not a bit string: {text!r}")
        return cls(tuple(int(ch) for ch in text))

    @classmethod
    def random(cls, n: int, rng) -> "BitMessage":
        rng = np.random.default_rng(rng)
        return cls(tuple(rng.integers(0, 2, size=n).tolist()))

    def __len__(self):
        return len(self.bits)

    def __iter__(self):
        return iter(self.bits)

    def __str__(self):
        return "".join(map(str, self.bits))


def as_message(message) -> BitMessage:
    if isinstance(message, BitMessage):
        return message
    if isinstance(message, str):
        return BitMessage.from_string(message)
    return BitMessage(tuple(message))


@dataclass(frozen=True)
class ChannelSpec:
    channel: Channel
    scheme: Scheme
    base_interval_ns: int
    long_interval_ns: int | None = None
    jitter_sigma_ns: float = 0.0
    key: CandidateKey | None = None
    start_ns: int = 0

    def __post_init__(self):
        object.__setattr__(self, "channel", Channel(self.channel))
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        if self.key is None:
            object.__setattr__(self, "key", DEFAULT_KEYS[self.channel])
        if int(self.base_interval_ns) <= 0:
            raise SimulationError("base_interval_ns must be positive")
        if self.jitter_sigma_ns < 0:
            raise SimulationError("jitter_sigma_ns must be >= 0")
        if self.start_ns < 0:
            raise SimulationError("start_ns must be >= 0")
        if self.scheme is Scheme.DTC:
            if self.long_interval_ns is None or self.long_interval_ns <= self.base_interval_ns:
                raise SimulationError("DTC needs long_interval_ns > base_interval_ns")
            sep = (self.long_interval_ns - self.base_interval_ns) / self.base_interval_ns
            if sep <= MIN_LEVEL_SEPARATION:
                raise SimulationError(
                    f"DTC levels {self.base_interval_ns}/{self.long_interval_ns} ns are not "
                    f"separable (relative gap {sep:.3f} <= {MIN_LEVEL_SEPARATION})")
        want_flow = self.channel is Channel.IP_TIMING
        if want_flow != isinstance(self.key, FlowKey):
            raise SimulationError(f"{self.channel.value} channel needs a "
                                  f"{'FlowKey' if want_flow else 'PageKey'}")

    @property
    def trace_kind(self) -> TraceKind:
        return TraceKind.PACKET if self.channel is Channel.IP_TIMING else TraceKind.MEMORY

    def to_dict(self) -> dict:
        return {
            "channel": self.channel.value,
            "scheme": self.scheme.value,
            "base_interval_ns": int(self.base_interval_ns),
            "long_interval_ns": None if self.long_interval_ns is None else int(self.long_interval_ns),
            "jitter_sigma_ns": float(self.jitter_sigma_ns),
            "key": self.key.to_dict(),
            "start_ns": int(self.start_ns),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ChannelSpec":
        d = dict(d)
        if d.get("key") is not None:
            d["key"] = key_from_dict(d["key"])
        return cls(**d)


@dataclass(frozen=True)
class NoiseSpec:
    """Background processes issuing Poisson page accesses (or packets).

    Each process owns ``page_pool`` pages (or destination endpoints) and
    touches one of them, uniformly at random, at exponential inter-arrival
    times with mean ``1/mean_rate_hz``. ``read_fraction`` of memory
    accesses are reads, the rest writes.
    """

    n_processes: int = 20
    mean_rate_hz: float = 50.0
    page_pool: int = 16
    duration_ns: int = 200_000_000_000
    read_fraction: float = 0.8

    def __post_init__(self):
        for name in ("n_processes", "mean_rate_hz", "page_pool", "duration_ns"):
            if getattr(self, name) < 0:
                raise SimulationError(f"{name} must be >= 0")
        if not 0.0 <= self.read_fraction <= 1.0:
            raise SimulationError("read_fraction must lie in [0, 1]")

    def to_dict(self) -> dict:
        return {"n_processes": int(self.n_processes), "mean_rate_hz": float(self.mean_rate_hz),
                "page_pool": int(self.page_pool), "duration_ns": int(self.duration_ns),
                "read_fraction": float(self.read_fraction)}

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSpec":
        return cls(**d)


# --------------------------------------------------------------------------
# helpers


def _jittered(nominal: np.ndarray, sigma: float, rng) -> np.ndarray:
    """Add rounded Gaussian noise, then clamp so times stay >= 0 and strictly increasing."""
    t = nominal.astype(np.int64)
    if sigma > 0 and t.size:
        t = t + np.rint(rng.normal(0.0, sigma, size=t.size)).astype(np.int64)
    if t.size:
        t[0] = max(int(t[0]), 0)
        # strictly increasing: t[i] >= t[i-1] + 1
        idx = np.arange(t.size, dtype=np.int64)
        t = np.maximum.accumulate(t - idx) + idx
    return t


def _channel_trace(spec: ChannelSpec, times: np.ndarray, meta: dict,
                   page_size: int = DEFAULT_PAGE_SIZE) -> Trace:
    n = times.size
    key = spec.key
    if spec.trace_kind is TraceKind.MEMORY:
        if key.page % page_size:
            raise SimulationError(f"channel page {key.page:#x} is not {page_size}-aligned")
        cols = {
            "t": times,
            "dom": np.full(n, key.domain_id, dtype=np.int64),
            "pid": np.full(n, key.pid, dtype=np.int64),
            "page": np.full(n, key.page, dtype=np.uint64),
            "acc": np.zeros(n, dtype=np.int8),
        }
        return Trace(TraceKind.MEMORY, cols, page_size=page_size, meta=meta)
    cols = {
        "t": times,
        "src_ip": np.full(n, ip_to_int(key.src_ip), dtype=np.uint32),
        "src_port": np.full(n, key.src_port, dtype=np.int64),
        "dst_ip": np.full(n, ip_to_int(key.dst_ip), dtype=np.uint32),
        "dst_port": np.full(n, key.dst_port, dtype=np.int64),
        "proto": np.full(n, 0 if Protocol(key.protocol) is Protocol.UDP else 1, dtype=np.int8),
        "len": np.zeros(n, dtype=np.int64),
    }
    return Trace(TraceKind.PACKET, cols, meta=meta)


def _meta(generator: str, spec: ChannelSpec, seed: int, message: BitMessage) -> dict:
    return {"generator": generator, "seed": int(seed), "channel": spec.to_dict(),
            "message": str(message)}


def normalize_stc_message(message) -> BitMessage:
    """Pad a message so it starts and ends with 1.

    Leading and trailing runs of zeros produce no events and so cannot be
    observed; a 1 is prepended and/or appended when needed.
    """
    bits = as_message(message).bits
    if 1 not in bits:
        raise SimulationError("an all-zero STC message emits no events")
    if bits[0] != 1:
        bits = (1,) + bits
    if bits[-1] != 1:
        bits = bits + (1,)
    return BitMessage(bits)


# --------------------------------------------------------------------------
# simulators


def simulate_stc(message, spec: ChannelSpec, seed: int) -> Trace:
    """One event at each slot whose bit is 1; silence for 0.

    The message is normalised with :func:`normalize_stc_message`; the trace
    meta records the normalised bits. Event ``i`` is emitted at
    ``start_ns + slot_i * base_interval_ns`` plus Gaussian jitter.
    """
    if spec.scheme is not Scheme.STC:
        raise SimulationError(f"simulate_stc called with a {spec.scheme.value} spec")
    if spec.channel is Channel.CPU_LOAD:
        raise SimulationError("cpu_load is modelled as a DTC channel only")
    msg = normalize_stc_message(message)
    rng = np.random.default_rng(seed)
    slots = np.flatnonzero(np.array(msg.bits, dtype=np.int8))
    nominal = spec.start_ns + slots.astype(np.int64) * int(spec.base_interval_ns)
    times = _jittered(nominal, spec.jitter_sigma_ns, rng)
    return _channel_trace(spec, times, _meta("simulate_stc", spec, seed, msg))


def simulate_dtc(message, spec: ChannelSpec, seed: int) -> Trace:
    """One initial event, then one event per bit after the long (1) or short (0) interval."""
    if spec.scheme is not Scheme.DTC:
        raise SimulationError(f"simulate_dtc called with a {spec.scheme.value} spec")
    msg = as_message(message)
    if not len(msg):
        raise SimulationError("empty message")
    rng = np.random.default_rng(seed)
    bits = np.array(msg.bits, dtype=np.int64)
    gaps = np.where(bits == 1, int(spec.long_interval_ns), int(spec.base_interval_ns))
    if spec.jitter_sigma_ns > 0:
        gaps = gaps + np.rint(rng.normal(0.0, spec.jitter_sigma_ns, size=gaps.size)).astype(np.int64)
    gaps = np.maximum(gaps, 1)
    times = spec.start_ns + np.concatenate(([0], np.cumsum(gaps))).astype(np.int64)
    return _channel_trace(spec, times, _meta("simulate_dtc", spec, seed, msg))


def simulate_channel(message, spec: ChannelSpec, seed: int) -> Trace:
    if spec.scheme is Scheme.STC:
        return simulate_stc(message, spec, seed)
    return simulate_dtc(message, spec, seed)


CACHE_PRESET_BASE_NS = 200_000
CACHE_PRESET_JITTER_NS = 200.0
CACHE_PRESET_MULTIPLES = 5
CACHE_PRESET_MIN_SHARE = 0.06


def _run_histogram(bits: Sequence[int]) -> dict:
    """Map interval multiple k -> count for an STC message (k-1 zeros between ones)."""
    ones = [i for i, b in enumerate(bits) if b]
    hist: dict[int, int] = {}
    for a, b in zip(ones, ones[1:]):
        hist[b - a] = hist.get(b - a, 0) + 1
    return hist


def balance_stc_message(message, multiples: int = CACHE_PRESET_MULTIPLES,
                        min_share: float = CACHE_PRESET_MIN_SHARE) -> BitMessage:
    """Append a tail so each interval multiple 1..``multiples`` holds >= ``min_share``.

    A message without zeros carries no slot structure and is returned
    unchanged apart from STC normalisation.
    """
    msg = normalize_stc_message(message)
    bits = list(msg.bits)
    if 0 not in bits:
        return msg
    hist = _run_histogram(bits)
    total = sum(hist.values())
    while True:
        short = [k for k in range(1, multiples + 1) if hist.get(k, 0) < min_share * total]
        if not short:
            break
        for k in short:
            bits.extend([0] * (k - 1) + [1])
            hist[k] = hist.get(k, 0) + 1
            total += 1
    return BitMessage(tuple(bits))


def simulate_cache_stc_preset(message, seed: int, *, key: CandidateKey | None = None,
                              start_ns: int = 0) -> Trace:
    """Flush-reload style cache channel: STC on the spy's probe page, 200 us slots."""
    spec = ChannelSpec(Channel.CACHE, Scheme.STC, CACHE_PRESET_BASE_NS,
                       jitter_sigma_ns=CACHE_PRESET_JITTER_NS,
                       key=key or DEFAULT_KEYS[Channel.CACHE], start_ns=start_ns)
    trace = simulate_stc(balance_stc_message(message), spec, seed)
    meta = dict(trace.meta, generator="simulate_cache_stc_preset")
    return trace.with_meta(meta)


# --------------------------------------------------------------------------
# noise

NOISE_PID_BASE = 20000
NOISE_PAGE_REGION = 0x7F00_0000_0000
NOISE_PAGE_SLOTS = 1 << 24


def _poisson_times(rate_hz: float, duration_ns: int, rng) -> np.ndarray:
    if rate_hz <= 0 or duration_ns <= 0:
        return np.zeros(0, dtype=np.int64)
    mean_ns = 1e9 / rate_hz
    expected = duration_ns / mean_ns
    chunk = int(expected + 6 * math.sqrt(expected) + 16)
    parts = []
    last = 0.0
    while True:
        gaps = rng.exponential(mean_ns, size=chunk)
        times = last + np.cumsum(gaps)
        parts.append(times)
        last = times[-1]
        if last >= duration_ns:
            break
    times = np.concatenate(parts)
    times = times[times < duration_ns]
    return np.floor(times).astype(np.int64)


def simulate_noise(noise: NoiseSpec, seed: int, kind=TraceKind.MEMORY,
                   page_size: int = DEFAULT_PAGE_SIZE, start_ns: int = 0) -> Trace:
    """Background traffic: independent Poisson processes over private page pools.

    Memory noise gives every process a fresh pid and ``page_pool`` pages no
    other process touches. Packet noise gives every process its own source
    endpoint and ``page_pool`` destination endpoints, so each 5-tuple belongs
    to one process.
    """
    kind = TraceKind(kind)
    meta = {"generator": "simulate_noise", "seed": int(seed), "noise": noise.to_dict()}
    n_proc = int(noise.n_processes)
    if n_proc == 0:
        return Trace.empty(kind, page_size=page_size, meta=meta)
    rng = np.random.default_rng(seed)
    pool = max(int(noise.page_pool), 1)
    per_proc_times = [_poisson_times(noise.mean_rate_hz, int(noise.duration_ns), rng)
                      for _ in range(n_proc)]
    counts = np.array([t.size for t in per_proc_times], dtype=np.int64)
    proc = np.repeat(np.arange(n_proc, dtype=np.int64), counts)
    t = np.concatenate(per_proc_times) + int(start_ns) if counts.sum() else np.zeros(0, np.int64)
    slot = rng.integers(0, pool, size=t.size)

    if kind is TraceKind.MEMORY:
        page_ids = rng.choice(NOISE_PAGE_SLOTS, size=n_proc * pool, replace=False)
        pages = (NOISE_PAGE_REGION + page_ids.astype(np.uint64) * np.uint64(page_size)).reshape(n_proc, pool)
        doms = rng.integers(1, 3, size=n_proc)
        acc = np.where(rng.random(t.size) < noise.read_fraction, 0, 1).astype(np.int8)
        cols = {
            "t": t,
            "dom": doms[proc],
            "pid": NOISE_PID_BASE + proc,
            "page": pages[proc, slot],
            "acc": acc,
        }
    else:
        src_ip = np.array([ip_to_int(f"10.0.{i // 250}.{i % 250 + 2}") for i in range(n_proc)],
                          dtype=np.uint32)
        src_port = rng.choice(np.arange(32768, 61000), size=n_proc, replace=False)
        dst_ip = (np.uint32(ip_to_int("10.1.0.0"))
                  + rng.integers(2, 60000, size=(n_proc, pool)).astype(np.uint32))
        dst_port = rng.integers(1024, 65536, size=(n_proc, pool))
        proto = rng.integers(0, 2, size=n_proc).astype(np.int8)
        cols = {
            "t": t,
            "src_ip": src_ip[proc],
            "src_port": src_port[proc],
            "dst_ip": dst_ip[proc, slot],
            "dst_port": dst_port[proc, slot],
            "proto": proto[proc],
            "len": rng.integers(0, 1461, size=t.size),
        }
    order = np.argsort(t, kind="stable")
    cols = {name: np.asarray(arr)[order] for name, arr in cols.items()}
    return Trace(kind, cols, page_size=page_size, meta=meta)


def merge_traces(a: Trace, b: Trace) -> Trace:
    """Time-ordered union of two traces of the same kind (stable: ``a`` first on ties).

    Merging with an empty trace returns the other trace unchanged.
    """
    if a.kind is not b.kind:
        raise TraceError(f"cannot merge a {a.kind.value} trace with a {b.kind.value} trace")
    if a.kind is TraceKind.MEMORY and a.page_size != b.page_size:
        raise TraceError(f"page size mismatch: {a.page_size} vs {b.page_size}")
    if len(b) == 0:
        return a
    if len(a) == 0:
        return b
    cols = concat_columns([a, b])
    order = np.argsort(cols["t"], kind="stable")
    cols = {name: arr[order] for name, arr in cols.items()}
    return Trace(a.kind, cols, page_size=a.page_size, meta={"merged": [a.meta, b.meta]})


def add_key_noise(trace: Trace, fraction: float, seed: int) -> Trace:
    """Add ``fraction * len(trace)`` extra events on the trace's own key.

    Models unrelated activity by the channel process on its channel page
    (or flow): copies of existing records re-timed uniformly over the
    trace span. Useful for stressing detectors beyond private-page noise.
    """
    if not 0 <= fraction:
        raise SimulationError("fraction must be >= 0")
    n_extra = int(round(fraction * len(trace)))
    if n_extra == 0 or len(trace) < 2:
        return trace
    rng = np.random.default_rng(seed)
    t = trace.timestamps
    src = rng.integers(0, len(trace), size=n_extra)
    cols = {name: np.concatenate([arr, arr[src]]) for name, arr in trace.columns.items()}
    cols["t"] = np.concatenate([t, rng.integers(int(t[0]), int(t[-1]) + 1, size=n_extra)])
    order = np.argsort(cols["t"], kind="stable")
    cols = {name: arr[order] for name, arr in cols.items()}
    meta = dict(trace.meta, key_noise={"fraction": float(fraction), "seed": int(seed)})
    return Trace(trace.kind, cols, page_size=trace.page_size, meta=meta)


# --------------------------------------------------------------------------
# decoders


def _values(ia) -> list:
    vals = getattr(ia, "values_ns", ia)
    return [int(v) for v in np.asarray(vals, dtype=np.int64).tolist()]


def decode_dtc(ia, t0_ns: float, t1_ns: float) -> BitMessage:
    """Midpoint rule: above the midpoint is 1, at or below it is 0."""
    if not t0_ns < t1_ns:
        raise DecodeError("decode_dtc needs t0 < t1")
    vals = _values(ia)
    if not vals:
        raise DecodeError("empty interval series")
    mid = (t0_ns + t1_ns) / 2.0
    return BitMessage(tuple(1 if v > mid else 0 for v in vals))


def decode_stc(ia, base_ns: float) -> BitMessage:
    """Expand each interval of ~k slots into k-1 zeros and a one, after a leading 1."""
    if not base_ns > 0:
        raise DecodeError("base_ns must be positive")
    bits = [1]
    for v in _values(ia):
        k = math.floor(v / base_ns + 0.5)
        if k < 1:
            raise DecodeError(f"interval {v} ns rounds to zero slots of {base_ns} ns")
        bits.extend([0] * (k - 1))
        bits.append(1)
    return BitMessage(tuple(bits))


def message_from_meta(meta: dict) -> BitMessage | None:
    text = meta.get("message")
    return None if text is None else BitMessage.from_string(text)


def with_key(spec: ChannelSpec, key: CandidateKey) -> ChannelSpec:
    return replace(spec, key=key)
