"""Long-term behaviour signature detector.

Pipeline per candidate key (a page fixed to one process, or an exact
5-tuple):

1. keep keys with at least ``repeat_threshold`` events, pages only when a
   single pid accesses them;
2. inter-arrival times of consecutive events;
3. sort and split into groups wherever the relative step exceeds ``k1``;
4. drop minor groups (< ``min_group_frac`` of all intervals);
5. every surviving group must be flat: mean-normalised OLS slope < ``k2``;
6. two groups -> DTC; more than two whose means are integer multiples of
   the smallest -> STC.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from . import kernels
from .trace import (
    CandidateKey,
    FlowKey,
    PageKey,
    Protocol,
    Trace,
    TraceKind,
    int_to_ip,
)


class ChannelType(str, Enum):
    DTC = "DTC"
    STC = "STC"
    NONE = "none"


class RejectReason(str, Enum):
    TOO_FEW_EVENTS = "too_few_events"
    PID_INCONSISTENT = "pid_inconsistent"
    NOT_SMOOTH = "not_smooth"
    NO_PATTERN = "no_pattern"


@dataclass(frozen=True)
class DetectorConfig:
    repeat_threshold: int = 100
    k1: float = 0.1
    k2: float = 0.01
    min_group_frac: float = 0.05
    reads_only: bool = True

    def __post_init__(self):
        if self.repeat_threshold < 2:
            raise ValueError("repeat_threshold must be >= 2")
        if not 0 < self.k1 < 1:
            raise ValueError("k1 must lie in (0, 1)")
        if not self.k2 > 0:
            raise ValueError("k2 must be > 0")
        if not 0 <= self.min_group_frac < 1:
            raise ValueError("min_group_frac must lie in [0, 1)")

    def to_dict(self) -> dict:
        return {"repeat_threshold": self.repeat_threshold, "k1": self.k1, "k2": self.k2,
                "min_group_frac": self.min_group_frac, "reads_only": self.reads_only}


@dataclass(frozen=True, eq=False)
class IntervalSeries:
    key: CandidateKey | None
    values_ns: np.ndarray
    dropped_nonpositive: int = 0

    def __post_init__(self):
        vals = np.array(self.values_ns, dtype=np.int64).reshape(-1)
        if np.any(vals <= 0):
            raise ValueError("interval values must be positive")
        vals.flags.writeable = False
        object.__setattr__(self, "values_ns", vals)

    def __len__(self):
        return int(self.values_ns.shape[0])


@dataclass(frozen=True, eq=False)
class IntervalGroup:
    values_ns: np.ndarray
    count: int
    mean_ns: float
    slope: float

    @classmethod
    def from_values(cls, values) -> "IntervalGroup":
        vals = np.asarray(values, dtype=np.int64)
        if vals.size == 0:
            raise ValueError("a group holds at least one interval")
        return cls(vals, int(vals.size), float(vals.mean()), float(kernels.ols_slope(vals)))

    @property
    def min_ns(self) -> int:
        return int(self.values_ns[0])

    @property
    def max_ns(self) -> int:
        return int(self.values_ns[-1])

    def summary(self) -> dict:
        return {"count": self.count, "mean_ns": self.mean_ns, "min_ns": self.min_ns,
                "max_ns": self.max_ns, "slope": self.slope}


@dataclass(frozen=True, eq=False)
class DetectionVerdict:
    key: CandidateKey
    channel_type: ChannelType
    groups: tuple = ()
    base_interval_ns: float | None = None
    evidence: tuple = ()
    rejected_reason: RejectReason | None = None
    n_intervals: int = 0
    dropped_nonpositive: int = 0
    pruned_groups: int = 0
    note: str | None = None

    @property
    def positive(self) -> bool:
        return self.channel_type is not ChannelType.NONE

    @property
    def level_means(self) -> list[float]:
        return [g.mean_ns for g in self.groups]

    def to_dict(self, include_evidence: bool = True) -> dict:
        d = {
            "key": self.key.to_dict(),
            "channel_type": self.channel_type.value,
            "base_interval_ns": self.base_interval_ns,
            "groups": [g.summary() for g in self.groups],
            "n_intervals": self.n_intervals,
            "dropped_nonpositive": self.dropped_nonpositive,
            "pruned_groups": self.pruned_groups,
            "rejected_reason": None if self.rejected_reason is None else self.rejected_reason.value,
            "note": self.note,
            "evidence_count": len(self.evidence),
        }
        if include_evidence:
            d["evidence"] = _index_ranges(self.evidence)
        elif self.evidence:
            d["evidence_span"] = [min(self.evidence), max(self.evidence)]
        return d


def _index_ranges(indices: Sequence[int]) -> list[list[int]]:
    """Compress sorted indices into inclusive [start, end] runs."""
    out: list[list[int]] = []
    for i in indices:
        if out and i == out[-1][1] + 1:
            out[-1][1] = i
        else:
            out.append([i, i])
    return out


# --------------------------------------------------------------------------
# candidate extraction


def _segments(sorted_cols: list[np.ndarray]) -> np.ndarray:
    """Start offsets of runs of equal rows in lexicographically sorted columns."""
    n = sorted_cols[0].shape[0]
    change = np.zeros(n, dtype=bool)
    change[0] = True
    for col in sorted_cols:
        change[1:] |= col[1:] != col[:-1]
    return np.flatnonzero(change)


def _split_candidates(trace: Trace, cfg: DetectorConfig):
    """Return (accepted, pid_inconsistent) lists of (key, indices)."""
    if len(trace) == 0:
        return [], []
    c = trace.columns
    if trace.kind is TraceKind.MEMORY:
        base = np.arange(len(trace), dtype=np.int64)
        if cfg.reads_only:
            base = base[c["acc"] == 0]
        if base.size == 0:
            return [], []
        dom = c["dom"][base]
        page = c["page"][base]
        order = np.lexsort((base, page, dom))
        idx = base[order]
        starts = _segments([dom[order], page[order]])
    else:
        cols = [c["src_ip"], c["src_port"], c["dst_ip"], c["dst_port"], c["proto"]]
        base = np.arange(len(trace), dtype=np.int64)
        order = np.lexsort((base,) + tuple(reversed(cols)))
        idx = order
        starts = _segments([col[order] for col in cols])
    ends = np.append(starts[1:], idx.size)
    counts = ends - starts
    accepted = []
    rejected = []
    for s, e in zip(starts[counts >= cfg.repeat_threshold].tolist(),
                    ends[counts >= cfg.repeat_threshold].tolist()):
        ix = idx[s:e]
        if trace.kind is TraceKind.MEMORY:
            pids = c["pid"][ix]
            key = PageKey(int(c["dom"][ix[0]]), int(pids[0]), int(c["page"][ix[0]]))
            if np.any(pids != pids[0]):
                rejected.append((key, ix))
                continue
        else:
            i0 = int(ix[0])
            key = FlowKey(int_to_ip(c["src_ip"][i0]), int(c["src_port"][i0]),
                          int_to_ip(c["dst_ip"][i0]), int(c["dst_port"][i0]),
                          Protocol.UDP if int(c["proto"][i0]) == 0 else Protocol.TCP)
        accepted.append((key, ix))
    accepted.sort(key=lambda kv: kv[0].sort_key())
    rejected.sort(key=lambda kv: kv[0].sort_key())
    return accepted, rejected


def candidate_pages(trace: Trace, cfg: DetectorConfig = DetectorConfig()):
    """Pages accessed at least ``repeat_threshold`` times, always by the same pid.

    Returns a list of ``(PageKey, record_indices)``; indices are in time order.
    """
    if trace.kind is not TraceKind.MEMORY:
        raise ValueError("candidate_pages needs a memory trace")
    return _split_candidates(trace, cfg)[0]


def rejected_pages(trace: Trace, cfg: DetectorConfig = DetectorConfig()):
    """Pages over the repeat threshold that more than one pid accessed."""
    if trace.kind is not TraceKind.MEMORY:
        raise ValueError("rejected_pages needs a memory trace")
    return _split_candidates(trace, cfg)[1]


def candidate_flows(trace: Trace, cfg: DetectorConfig = DetectorConfig()):
    """Exact 5-tuples carrying at least ``repeat_threshold`` packets."""
    if trace.kind is not TraceKind.PACKET:
        raise ValueError("candidate_flows needs a packet trace")
    return _split_candidates(trace, cfg)[0]


def candidates(trace: Trace, cfg: DetectorConfig = DetectorConfig()):
    return _split_candidates(trace, cfg)[0]


# --------------------------------------------------------------------------
# per-series steps


def interarrival(timestamps, key: CandidateKey | None = None) -> IntervalSeries:
    """Consecutive differences; zero or negative differences are dropped and counted."""
    ts = np.asarray(timestamps, dtype=np.int64)
    if ts.size < 2:
        raise ValueError("need at least two events to form an interval")
    vals, dropped = kernels.interarrival(ts)
    return IntervalSeries(key, vals, int(dropped))


def group_sorted_intervals(ia, k1: float = 0.1) -> list[IntervalGroup]:
    vals = np.sort(np.asarray(getattr(ia, "values_ns", ia), dtype=np.int64))
    if vals.size == 0:
        return []
    starts = kernels.group_starts(vals, k1)
    bounds = np.append(starts, vals.size)
    return [IntervalGroup.from_values(vals[bounds[i]:bounds[i + 1]]) for i in range(starts.size)]


def prune_minor_groups(groups: Sequence[IntervalGroup], total_count: int | None = None,
                       min_group_frac: float = 0.05) -> list[IntervalGroup]:
    """Drop groups holding fewer than ``min_group_frac * total_count`` intervals."""
    if total_count is None:
        total_count = sum(g.count for g in groups)
    limit = min_group_frac * total_count
    return [g for g in groups if not g.count < limit]


def smoothness_coefficient(group) -> float:
    """|OLS slope| of value/mean against index/(n-1); 0 for a single interval."""
    vals = getattr(group, "values_ns", group)
    return float(kernels.ols_slope(np.asarray(vals, dtype=np.int64)))


def _near_integer(ratio: float, tol: float) -> bool:
    return abs(ratio - round(ratio)) <= tol


def classify_pattern(groups: Sequence[IntervalGroup], k1: float = 0.1) -> ChannelType:
    means = [g.mean_ns for g in groups]
    if len(means) == 2:
        return ChannelType.DTC
    if len(means) > 2:
        low = min(means)
        if all(_near_integer(m / low, k1) for m in means):
            return ChannelType.STC
    return ChannelType.NONE


def analyze_series(key: CandidateKey, timestamps, evidence, cfg: DetectorConfig) -> DetectionVerdict:
    ev = tuple(int(i) for i in np.asarray(evidence).tolist())
    if np.asarray(timestamps).size < 2:
        return DetectionVerdict(key, ChannelType.NONE, evidence=ev,
                                rejected_reason=RejectReason.TOO_FEW_EVENTS)
    ia = interarrival(timestamps, key)
    n = len(ia)
    common = dict(evidence=ev, n_intervals=n, dropped_nonpositive=ia.dropped_nonpositive)
    if n < 2:
        return DetectionVerdict(key, ChannelType.NONE,
                                rejected_reason=RejectReason.TOO_FEW_EVENTS, **common)
    groups = group_sorted_intervals(ia, cfg.k1)
    kept = prune_minor_groups(groups, n, cfg.min_group_frac)
    common["pruned_groups"] = len(groups) - len(kept)
    if not kept:
        return DetectionVerdict(key, ChannelType.NONE,
                                rejected_reason=RejectReason.NO_PATTERN, **common)
    kept = tuple(kept)
    if any(g.slope >= cfg.k2 for g in kept):
        return DetectionVerdict(key, ChannelType.NONE, groups=kept,
                                rejected_reason=RejectReason.NOT_SMOOTH, **common)
    kind = classify_pattern(kept, cfg.k1)
    if kind is ChannelType.NONE:
        return DetectionVerdict(key, kind, groups=kept,
                                rejected_reason=RejectReason.NO_PATTERN, **common)
    base = min(g.mean_ns for g in kept)
    note = None
    if kind is ChannelType.DTC:
        ratio = max(g.mean_ns for g in kept) / base
        if _near_integer(ratio, cfg.k1):
            note = f"level ratio {ratio:.3f} is near-integer; an STC reading is also possible"
    return DetectionVerdict(key, kind, groups=kept, base_interval_ns=base, note=note, **common)


def detect(trace: Trace, cfg: DetectorConfig = DetectorConfig()) -> list[DetectionVerdict]:
    """Run the full pipeline and return one verdict per candidate key, in key order."""
    accepted, rejected = _split_candidates(trace, cfg)
    t = trace.timestamps
    out = [analyze_series(key, t[ix], ix, cfg) for key, ix in accepted]
    out.extend(DetectionVerdict(key, ChannelType.NONE, evidence=tuple(ix.tolist()),
                                rejected_reason=RejectReason.PID_INCONSISTENT)
               for key, ix in rejected)
    out.sort(key=lambda v: v.key.sort_key())
    return out


def positives(verdicts: Sequence[DetectionVerdict]) -> list[DetectionVerdict]:
    return [v for v in verdicts if v.positive]
