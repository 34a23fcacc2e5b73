import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tcforensics.channels import (
    CACHE_PRESET_BASE_NS,
    DEFAULT_KEYS,
    BitMessage,
    Channel,
    ChannelSpec,
    DecodeError,
    NoiseSpec,
    Scheme,
    SimulationError,
    add_key_noise,
    balance_stc_message,
    decode_dtc,
    decode_stc,
    merge_traces,
    normalize_stc_message,
    simulate_cache_stc_preset,
    simulate_channel,
    simulate_dtc,
    simulate_noise,
    simulate_stc,
)
from tcforensics.detector import ChannelType, detect, interarrival
from tcforensics.trace import Trace, TraceError, TraceKind, dumps_trace

T = 1_000_000


def stc(channel="cache", base=T, jitter=0.0):
    return ChannelSpec(channel, Scheme.STC, base, jitter_sigma_ns=jitter)


def dtc(channel="shared_memory", base=300_000_000, long=500_000_000, jitter=0.0):
    return ChannelSpec(channel, Scheme.DTC, base, long, jitter)


def ia_of(trace):
    return interarrival(trace.timestamps).values_ns.tolist()


def slot_walk_oracle(bits, base):
    """Inter-arrival times by walking the slot index of every 1-bit."""
    ones = [i for i, b in enumerate(bits) if b == "1"]
    return [(b - a) * base for a, b in zip(ones, ones[1:])]


class TestSpec:
    def test_dtc_needs_long(self):
        with pytest.raises(SimulationError):
            ChannelSpec("shared_memory", "DTC", 100)
        with pytest.raises(SimulationError):
            ChannelSpec("shared_memory", "DTC", 100, 100)

    def test_dtc_levels_separable(self):
        with pytest.raises(SimulationError):
            ChannelSpec("shared_memory", "DTC", 100, 110)
        ChannelSpec("shared_memory", "DTC", 100, 111)

    def test_key_type_matches_channel(self):
        with pytest.raises(SimulationError):
            ChannelSpec("ip_timing", "DTC", 100, 200, key=DEFAULT_KEYS[Channel.CACHE])

    def test_round_trip_dict(self):
        for spec in (stc(), dtc("ip_timing")):
            assert ChannelSpec.from_dict(spec.to_dict()) == spec

    def test_noise_spec_non_negative(self):
        with pytest.raises(SimulationError):
            NoiseSpec(n_processes=-1)


class TestSimulateStc:
    def test_all_ones_base(self):
        tr = simulate_stc("1111", stc(base=200_000), 0)
        assert len(tr) == 4
        assert ia_of(tr) == [200_000] * 3

    def test_one_silent_slot(self):
        assert ia_of(simulate_stc("101", stc(), 0)) == [2 * T]

    def test_slot_walk_oracle(self):
        assert ia_of(simulate_stc("1101101", stc(), 0)) == slot_walk_oracle("1101101", T)

    def test_all_zero_rejected(self):
        with pytest.raises(SimulationError):
            simulate_stc("000", stc(), 0)

    def test_scheme_mismatch(self):
        with pytest.raises(SimulationError):
            simulate_stc("101", dtc(), 0)

    def test_load_is_dtc_only(self):
        with pytest.raises(SimulationError):
            simulate_stc("101", stc("cpu_load"), 0)

    def test_padding_rule(self):
        assert str(normalize_stc_message("0110")) == "101101"
        assert str(normalize_stc_message("1")) == "1"
        tr = simulate_stc("0110", stc(), 0)
        assert tr.meta["message"] == "101101"

    def test_ip_stc_packets(self):
        tr = simulate_stc("1011", stc("ip_timing"), 0)
        assert tr.kind is TraceKind.PACKET
        assert {tr.key_at(i) for i in range(len(tr))} == {DEFAULT_KEYS[Channel.IP_TIMING]}

    def test_start_offset(self):
        spec = ChannelSpec("cache", "STC", T, start_ns=5)
        assert simulate_stc("11", spec, 0).timestamps.tolist() == [5, 5 + T]


class TestSimulateDtc:
    def test_case_study_levels(self):
        assert ia_of(simulate_dtc("10", dtc("ip_timing"), 0)) == [500_000_000, 300_000_000]

    def test_single_symbol(self):
        assert ia_of(simulate_dtc("0000", dtc(), 0)) == [300_000_000] * 4

    def test_per_bit_replay_oracle(self, rng):
        spec = dtc()
        for seed in range(10):
            bits = str(BitMessage.random(64, seed))
            tr = simulate_dtc(bits, spec, seed)
            expected = [spec.long_interval_ns if b == "1" else spec.base_interval_ns for b in bits]
            assert ia_of(tr) == expected

    def test_scheme_mismatch(self):
        with pytest.raises(SimulationError):
            simulate_dtc("1", stc(), 0)

    def test_memory_channels_carry_key(self):
        for ch in ("shared_memory", "cpu_load"):
            spec = dtc(ch, 1000, 2000, jitter=30.0)
            tr = simulate_dtc("0110" * 40, spec, 1)
            assert tr.kind is TraceKind.MEMORY
            assert {tr.key_at(i) for i in range(len(tr))} == {spec.key}

    def test_jitter_keeps_times_increasing(self):
        tr = simulate_dtc("01" * 200, dtc(base=10, long=20, jitter=50.0), 4)
        assert np.all(np.diff(tr.timestamps) >= 1)


class TestDeterminism:
    def test_same_seed_identical_bytes(self):
        a = simulate_channel("1101" * 30, stc(jitter=100.0), 9)
        b = simulate_channel("1101" * 30, stc(jitter=100.0), 9)
        assert dumps_trace(a) == dumps_trace(b)

    def test_seed_changes_jitter(self):
        a = simulate_channel("1101" * 30, stc(jitter=100.0), 9)
        b = simulate_channel("1101" * 30, stc(jitter=100.0), 10)
        assert dumps_trace(a) != dumps_trace(b)


class TestPreset:
    def test_all_ones_single_level(self):
        tr = simulate_cache_stc_preset("1" * 300, 0)
        ia = np.array(ia_of(tr))
        assert np.all(np.abs(ia - CACHE_PRESET_BASE_NS) < 2000)

    def test_five_groups_min_base(self):
        msg = BitMessage.random(1000, 3)
        v = [x for x in detect(simulate_cache_stc_preset(msg, 3)) if x.positive]
        assert len(v) == 1 and v[0].channel_type is ChannelType.STC
        assert len(v[0].groups) >= 5
        assert abs(v[0].base_interval_ns - 200_000) <= 20_000

    def test_zero_run_histogram_matches_groups(self):
        for seed in range(5):
            msg = balance_stc_message(BitMessage.random(1000, seed))
            bits = str(msg)
            runs = Counter(b - a for a, b in zip(
                *[[i for i, c in enumerate(bits) if c == "1"][k:] for k in (0, 1)]))
            total = sum(runs.values())
            expected = sum(1 for c in runs.values() if c >= 0.05 * total)
            tr = simulate_cache_stc_preset(msg, seed)
            v = detect(tr)[0]
            assert len(v.groups) == expected

    def test_balance_shares(self):
        msg = balance_stc_message("1" + "0" * 9 + "1")
        bits = str(msg)
        ones = [i for i, c in enumerate(bits) if c == "1"]
        runs = Counter(b - a for a, b in zip(ones, ones[1:]))
        total = sum(runs.values())
        for k in range(1, 6):
            assert runs[k] >= 0.06 * total


class TestNoise:
    def test_zero_processes_empty(self):
        assert len(simulate_noise(NoiseSpec(n_processes=0), 1)) == 0

    def test_same_seed_identical(self):
        spec = NoiseSpec(duration_ns=5 * 10**9)
        assert simulate_noise(spec, 4) == simulate_noise(spec, 4)
        assert simulate_noise(spec, 4, TraceKind.PACKET) == simulate_noise(spec, 4, TraceKind.PACKET)

    def test_poisson_count(self):
        tr = simulate_noise(NoiseSpec(20, 50.0, 16, 60 * 10**9), 2024)
        mean = 20 * 50 * 60
        assert abs(len(tr) - mean) <= 5 * math.sqrt(mean)

    def test_no_page_shared_between_pids(self):
        tr = simulate_noise(NoiseSpec(duration_ns=10 * 10**9), 5)
        c = tr.columns
        owners = {}
        for page, pid in zip(c["page"].tolist(), c["pid"].tolist()):
            assert owners.setdefault(page, pid) == pid
        assert len(set(c["pid"].tolist())) == 20

    def test_pages_aligned_and_sorted(self):
        from tcforensics.trace import validate_trace
        assert validate_trace(simulate_noise(NoiseSpec(duration_ns=10**10), 6)) == []
        assert validate_trace(simulate_noise(NoiseSpec(duration_ns=10**10), 6, "packet")) == []

    def test_read_fraction(self):
        tr = simulate_noise(NoiseSpec(duration_ns=30 * 10**9, read_fraction=0.8), 7)
        frac = float(np.mean(tr.columns["acc"] == 0))
        assert abs(frac - 0.8) < 0.02

    def test_packet_flows_owned_by_one_source(self):
        tr = simulate_noise(NoiseSpec(duration_ns=10 * 10**9), 8, TraceKind.PACKET)
        c = tr.columns
        srcs = set(zip(c["src_ip"].tolist(), c["src_port"].tolist()))
        assert len(srcs) == 20


class TestMerge:
    def test_identity_with_empty(self):
        t = simulate_stc("1011", stc(), 0)
        assert merge_traces(t, Trace.empty(TraceKind.MEMORY)) == t
        assert merge_traces(Trace.empty(TraceKind.MEMORY), t) == t

    def test_count_and_order(self):
        a = simulate_stc("1011" * 10, stc(), 0)
        b = simulate_noise(NoiseSpec(duration_ns=10**9), 1)
        m = merge_traces(a, b)
        assert len(m) == len(a) + len(b)
        assert np.all(np.diff(m.timestamps) >= 0)
        assert m.meta["merged"] == [a.meta, b.meta]

    def test_stable_ties(self):
        from conftest import memory_trace
        a = memory_trace([5, 10], pid=1)
        b = memory_trace([5, 10], pid=2)
        assert merge_traces(a, b).columns["pid"].tolist() == [1, 2, 1, 2]

    def test_kind_mismatch(self):
        with pytest.raises(TraceError):
            merge_traces(Trace.empty("memory"), Trace.empty("packet"))

    def test_page_size_mismatch(self):
        with pytest.raises(TraceError):
            merge_traces(Trace.empty("memory", page_size=4096), Trace.empty("memory", page_size=8192))


class TestKeyNoise:
    def test_adds_events_on_key(self):
        tr = simulate_dtc("01" * 100, dtc(base=1000, long=2000), 0)
        noisy = add_key_noise(tr, 0.1, 1)
        assert len(noisy) == len(tr) + 20
        assert {noisy.key_at(i) for i in range(len(noisy))} == {tr.key_at(0)}

    def test_zero_fraction_identity(self):
        tr = simulate_dtc("01" * 100, dtc(base=1000, long=2000), 0)
        assert add_key_noise(tr, 0.0, 1) is tr


class TestDecode:
    def test_dtc_case_study(self):
        assert str(decode_dtc([500_000_000, 300_000_000], 300_000_000, 500_000_000)) == "10"

    def test_dtc_midpoint_tie_is_zero(self):
        assert str(decode_dtc([400, 400, 401, 399], 300, 500)) == "0010"

    def test_dtc_errors(self):
        with pytest.raises(DecodeError):
            decode_dtc([], 1, 2)
        with pytest.raises(DecodeError):
            decode_dtc([1], 2, 2)

    def test_stc_examples(self):
        assert str(decode_stc([2 * T], T)) == "101"
        assert str(decode_stc([T, T, T], T)) == "1111"

    def test_stc_rounds_to_zero(self):
        with pytest.raises(DecodeError):
            decode_stc([T // 3], T)
        with pytest.raises(DecodeError):
            decode_stc([T], 0)


# --------------------------------------------------------------------------
# properties

bit_strings = st.text("01", min_size=1, max_size=300)


@settings(max_examples=200, deadline=None)
@given(bit_strings, st.integers(1, 10**9))
def test_dtc_round_trip(bits, seed):
    spec = dtc(base=700, long=1300)
    tr = simulate_dtc(bits, spec, seed)
    assert str(decode_dtc(interarrival(tr.timestamps), 700, 1300)) == bits
    assert len(set(ia_of(tr))) <= 2


@settings(max_examples=200, deadline=None)
@given(bit_strings.filter(lambda s: "1" in s), st.integers(0, 10**6), st.integers(0, 49))
def test_stc_round_trip_with_small_jitter(bits, seed, jitter_pct):
    base = 100_000
    jitter = base * jitter_pct / 1000.0  # below base/20
    norm = str(normalize_stc_message(bits))
    tr = simulate_stc(bits, stc(base=base, jitter=jitter), seed)
    if len(tr) == 1:
        assert norm == "1"
        return
    assert str(decode_stc(interarrival(tr.timestamps), base)) == norm


@settings(max_examples=200, deadline=None)
@given(bit_strings.filter(lambda s: s.count("1") >= 2))
def test_stc_intervals_are_exact_multiples(bits):
    tr = simulate_stc(bits, stc(base=12345), 0)
    assert all(v % 12345 == 0 for v in ia_of(tr))
    assert ia_of(tr) == slot_walk_oracle(str(normalize_stc_message(bits)), 12345)
