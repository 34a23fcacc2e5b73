"""Simulation and detection of cross-VM covert timing channels.

Traces are page-level memory accesses or packets. Detection follows a
long-term behaviour signature (repetitive, smooth, multi-level
inter-arrival times on one key) with variance and epsilon-similarity
baselines for comparison.
"""

__version__ = "0.1.0"

from .baselines import (
    BaselineConfig,
    BaselineVerdict,
    Method,
    baseline_detect,
    epsilon_similarity,
    regularity_score,
)
from .bench import BenchConfig, BenchResult, Scenario, run_benchmark
from .channels import (
    BitMessage,
    add_key_noise,
    Channel,
    ChannelSpec,
    NoiseSpec,
    Scheme,
    decode_dtc,
    decode_stc,
    merge_traces,
    simulate_cache_stc_preset,
    simulate_channel,
    simulate_dtc,
    simulate_noise,
    simulate_stc,
)
from .detector import (
    ChannelType,
    DetectionVerdict,
    DetectorConfig,
    IntervalGroup,
    IntervalSeries,
    candidate_flows,
    candidate_pages,
    classify_pattern,
    detect,
    group_sorted_intervals,
    interarrival,
    prune_minor_groups,
    smoothness_coefficient,
)
from .forensics import ForensicReport, build_report, store_evidence, verify_store
from .kernels import BACKEND
from .trace import (
    FlowKey,
    MemoryAccessRecord,
    PacketRecord,
    PageKey,
    Trace,
    TraceKind,
    parse_trace,
    validate_trace,
    write_trace,
)

__all__ = [name for name in dir() if not name.startswith("_")]
