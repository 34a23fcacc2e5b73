"""Regularity (variance) and epsilon-similarity baselines.

Both consume the same candidate keys and inter-arrival series as the
signature detector but decide by a single score against a threshold:

* regularity: split arrival-ordered intervals into non-overlapping
  windows, take each window's standard deviation, and report the standard
  deviation of the pairwise relative differences between them. Low values
  mean the traffic is regular.
* epsilon-similarity: fraction of consecutive sorted intervals whose
  relative difference is below epsilon. High values mean the intervals
  cluster into a few tight levels.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from . import kernels
from .detector import DetectorConfig, _split_candidates, interarrival
from .trace import CandidateKey, Trace

# d_ij for a pair where exactly one window has zero spread
ZERO_SIGMA_CAP = 10.0


class Method(str, Enum):
    SIGNATURE = "signature"
    VARIANCE = "variance"
    EPSILON = "epsilon"


BASELINE_METHODS = (Method.VARIANCE, Method.EPSILON)


@dataclass(frozen=True)
class BaselineConfig:
    window_size: int = 100
    epsilon: float = 0.1
    similarity_threshold: float = 0.9
    regularity_threshold: float = 1.0

    def __post_init__(self):
        if self.window_size < 2:
            raise ValueError("window_size must be >= 2")
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must lie in (0, 1)")
        if not 0 <= self.similarity_threshold <= 1:
            raise ValueError("similarity_threshold must lie in [0, 1]")
        if self.regularity_threshold < 0:
            raise ValueError("regularity_threshold must be >= 0")

    def to_dict(self) -> dict:
        return {"window_size": self.window_size, "epsilon": self.epsilon,
                "similarity_threshold": self.similarity_threshold,
                "regularity_threshold": self.regularity_threshold}


def _values(ia) -> np.ndarray:
    return np.asarray(getattr(ia, "values_ns", ia), dtype=np.int64)


def regularity_score(ia, window_size: int = 100) -> float:
    vals = _values(ia)
    if vals.size < 2 * window_size:
        raise ValueError(f"need at least {2 * window_size} intervals, got {vals.size}")
    return float(kernels.regularity(vals, window_size, ZERO_SIGMA_CAP))


def epsilon_similarity(ia, epsilon: float = 0.1) -> float:
    vals = _values(ia)
    if vals.size < 2:
        raise ValueError("need at least two intervals")
    return float(kernels.epsilon_fraction(np.sort(vals), epsilon))


@dataclass(frozen=True)
class BaselineVerdict:
    key: CandidateKey
    method: Method
    score: float | None
    flagged: bool
    skipped_reason: str | None = None

    def to_dict(self) -> dict:
        return {"key": self.key.to_dict(), "method": self.method.value, "score": self.score,
                "flagged": self.flagged, "skipped_reason": self.skipped_reason}


def score_series(vals: np.ndarray, method: Method, cfg: BaselineConfig):
    """Return (score, skipped_reason) for one interval series."""
    if method is Method.VARIANCE:
        if vals.size < 2 * cfg.window_size:
            return None, f"series_too_short ({vals.size} < {2 * cfg.window_size})"
        return regularity_score(vals, cfg.window_size), None
    if vals.size < 2:
        return None, "series_too_short"
    return epsilon_similarity(vals, cfg.epsilon), None


def is_flagged(score: float | None, method: Method, cfg: BaselineConfig) -> bool:
    if score is None:
        return False
    if method is Method.VARIANCE:
        return score <= cfg.regularity_threshold
    return score >= cfg.similarity_threshold


def baseline_detect(trace: Trace, cfg: BaselineConfig = BaselineConfig(),
                    det_cfg: DetectorConfig = DetectorConfig(),
                    methods: Iterable[Method] = BASELINE_METHODS) -> list[BaselineVerdict]:
    """Score every candidate key with each requested baseline method."""
    methods = [Method(m) for m in methods]
    accepted, _ = _split_candidates(trace, det_cfg)
    t = trace.timestamps
    out = []
    for key, ix in accepted:
        vals = interarrival(t[ix], key).values_ns
        for m in methods:
            score, skipped = score_series(vals, m, cfg)
            out.append(BaselineVerdict(key, m, score, is_flagged(score, m, cfg), skipped))
    return out


def calibrate(scores_per_trial: Sequence[Sequence[float]], method: Method,
              target_fp: float, cfg: BaselineConfig) -> BaselineConfig:
    """Pick the threshold that flags about ``target_fp`` of noise-only trials.

    ``scores_per_trial`` holds, for each noise-only trial, the scores of all
    its keys. A trial is flagged when its most channel-like key crosses the
    threshold, so the threshold is a quantile of the per-trial extremes.
    """
    method = Method(method)
    if method is Method.VARIANCE:
        extremes = [min(s) for s in scores_per_trial if len(s)]
        if not extremes:
            return cfg
        thr = float(np.quantile(extremes, target_fp, method="lower"))
        return replace(cfg, regularity_threshold=thr)
    extremes = [max(s) for s in scores_per_trial if len(s)]
    if not extremes:
        return cfg
    thr = float(np.quantile(extremes, 1.0 - target_fp, method="higher"))
    return replace(cfg, similarity_threshold=thr)
