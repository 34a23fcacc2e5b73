"""Forensic reports and a filesystem evidence store."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

import numpy as np

from .channels import DecodeError, decode_dtc, decode_stc
from .detector import ChannelType, DetectionVerdict, DetectorConfig, interarrival
from .trace import Trace, TraceError, parse_trace, write_trace

REPORT_NAME = "report.json"
MANIFEST_NAME = "manifest.json"
REPORT_VERSION = 1


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _sha256_file(path: Path) -> str:
    return _sha256_bytes(Path(path).read_bytes())


def _find_ground_truth(meta: dict, key_dict: dict):
    """Search (possibly merged) trace meta for the message injected under ``key_dict``."""
    stack = [meta]
    while stack:
        m = stack.pop()
        if not isinstance(m, dict):
            continue
        chan = m.get("channel")
        if isinstance(chan, dict) and chan.get("key") == key_dict and "message" in m:
            return m["message"]
        stack.extend(m.get("merged", []))
    return None


def decode_verdict(trace: Trace, verdict: DetectionVerdict) -> dict:
    """Decode the bits carried by a positive verdict using its detected levels."""
    out: dict = {"scheme": verdict.channel_type.value, "bits": None, "error": None}
    try:
        ia = interarrival(trace.timestamps[np.asarray(verdict.evidence, dtype=np.int64)])
        if verdict.channel_type is ChannelType.DTC:
            low, high = sorted(verdict.level_means)
            out["levels_ns"] = [low, high]
            out["bits"] = str(decode_dtc(ia, low, high))
        else:
            out["base_ns"] = verdict.base_interval_ns
            out["bits"] = str(decode_stc(ia, verdict.base_interval_ns))
    except (DecodeError, ValueError) as exc:
        out["error"] = str(exc)
    return out


@dataclass
class ForensicReport:
    trace_info: dict
    config: dict
    findings: list
    verdicts: list
    baselines: list = field(default_factory=list)
    generated_at: str = ""

    def to_dict(self) -> dict:
        return {
            "version": REPORT_VERSION,
            "generated_at": self.generated_at,
            "trace": self.trace_info,
            "config": self.config,
            "findings": self.findings,
            "verdicts": self.verdicts,
            "baselines": self.baselines,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def content_hash(self) -> str:
        """Hash of everything except the generation timestamp."""
        d = self.to_dict()
        d.pop("generated_at")
        return _sha256_bytes(_canonical(d).encode())

    @classmethod
    def from_dict(cls, d: dict) -> "ForensicReport":
        return cls(d["trace"], d["config"], d["findings"], d["verdicts"],
                   d.get("baselines", []), d.get("generated_at", ""))

    @property
    def positive(self) -> bool:
        return bool(self.findings)


def build_report(trace: Trace, verdicts: Sequence[DetectionVerdict],
                 cfg: DetectorConfig = DetectorConfig(), baseline_verdicts=(),
                 generated_at: str | None = None) -> ForensicReport:
    """Summarise detector output; each positive verdict gets a decoding attempt."""
    n = len(trace)
    for v in verdicts:
        if v.evidence and not 0 <= min(v.evidence) <= max(v.evidence) < n:
            raise TraceError(f"verdict for {v.key} references records outside the trace")
    findings = []
    for v in verdicts:
        if not v.positive:
            continue
        entry = v.to_dict()
        entry["decoded"] = decode_verdict(trace, v)
        truth = _find_ground_truth(trace.meta, v.key.to_dict())
        if truth is not None:
            entry["decoded"]["matches_ground_truth"] = entry["decoded"]["bits"] == truth
        findings.append(entry)
    if generated_at is None:
        generated_at = datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
    info = {
        "source": trace.source,
        "kind": trace.kind.value,
        "n_records": n,
        "page_size": trace.page_size,
        "content_hash": trace.content_hash(),
    }
    return ForensicReport(
        trace_info=info,
        config=cfg.to_dict(),
        findings=findings,
        verdicts=[v.to_dict(include_evidence=False) for v in verdicts if not v.positive],
        baselines=[b.to_dict() for b in baseline_verdicts],
        generated_at=generated_at,
    )


def report_index_ranges(report: ForensicReport) -> list[list[int]]:
    out = []
    for entry in report.findings:
        out.extend(entry["evidence"])
    for entry in report.verdicts:
        if "evidence_span" in entry:
            out.append(entry["evidence_span"])
    return out


def check_report_indices(report: ForensicReport, trace: Trace) -> list[str]:
    """Return problems with evidence ranges that fall outside ``trace``."""
    n = len(trace)
    problems = []
    for lo, hi in report_index_ranges(report):
        if not 0 <= lo <= hi < n:
            problems.append(f"range [{lo}, {hi}] outside 0..{n - 1}")
    return problems


def _slice_indices(ranges: list[list[int]], n: int, margin: int) -> np.ndarray:
    mask = np.zeros(n, dtype=bool)
    for lo, hi in ranges:
        mask[max(lo - margin, 0):min(hi + margin, n - 1) + 1] = True
    return np.flatnonzero(mask)


def store_evidence(report: ForensicReport, trace: Trace, store_dir, margin: int = 5) -> list[Path]:
    """Write the report, one trace slice per finding, and a hash manifest.

    Slices keep every evidence record plus ``margin`` neighbours on each
    side; their meta maps slice rows back to original record indices.
    Re-running on identical inputs rewrites byte-identical slices and
    manifest.
    """
    store = Path(store_dir)
    store.mkdir(parents=True, exist_ok=True)
    written = []
    files = {}
    trace_hash = report.trace_info["content_hash"]
    for i, finding in enumerate(report.findings):
        idx = _slice_indices(finding["evidence"], len(trace), margin)
        ranges = _runs(idx)
        sl = trace.take(idx, meta={"evidence_slice": {
            "source_hash": trace_hash,
            "key": finding["key"],
            "index_ranges": ranges,
            "margin": margin,
        }})
        path = store / f"slice_{i:03d}.jsonl"
        write_trace(sl, path)
        files[path.name] = _sha256_file(path)
        written.append(path)
    report_path = store / REPORT_NAME
    report_path.write_text(report.to_json(), encoding="utf-8")
    written.insert(0, report_path)
    manifest = {
        "version": REPORT_VERSION,
        "trace_hash": trace_hash,
        "report_content_hash": report.content_hash(),
        "slices": files,
    }
    manifest_path = store / MANIFEST_NAME
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    written.append(manifest_path)
    return written


def _runs(idx: np.ndarray) -> list[list[int]]:
    out: list[list[int]] = []
    for i in idx.tolist():
        if out and i == out[-1][1] + 1:
            out[-1][1] = i
        else:
            out.append([i, i])
    return out


def verify_store(store_dir) -> list[str]:
    """Re-hash a store written by :func:`store_evidence`; returns mismatches (empty if intact)."""
    store = Path(store_dir)
    problems = []
    manifest_path = store / MANIFEST_NAME
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        return [f"manifest unreadable: {exc}"]
    try:
        report = ForensicReport.from_dict(
            json.loads((store / REPORT_NAME).read_text(encoding="utf-8")))
        if report.content_hash() != manifest.get("report_content_hash"):
            problems.append(f"{REPORT_NAME}: content hash mismatch")
    except (OSError, ValueError, KeyError) as exc:
        problems.append(f"{REPORT_NAME}: unreadable ({exc})")
        report = None
    for name, digest in sorted(manifest.get("slices", {}).items()):
        path = store / name
        if not path.exists():
            problems.append(f"{name}: missing")
            continue
        if _sha256_file(path) != digest:
            problems.append(f"{name}: hash mismatch")
            continue
        try:
            sl = parse_trace(path)
        except (TraceError, OSError) as exc:
            problems.append(f"{name}: does not parse ({exc})")
            continue
        info = sl.meta.get("evidence_slice", {})
        if info.get("source_hash") != manifest.get("trace_hash"):
            problems.append(f"{name}: source hash does not match manifest")
        covered = sum(hi - lo + 1 for lo, hi in info.get("index_ranges", []))
        if covered != len(sl):
            problems.append(f"{name}: index ranges cover {covered} rows, slice has {len(sl)}")
        if report is not None:
            finding = next((f for f in report.findings if f["key"] == info.get("key")), None)
            if finding is None:
                problems.append(f"{name}: no finding for key {info.get('key')}")
            else:
                kept = set()
                for lo, hi in info.get("index_ranges", []):
                    kept.update(range(lo, hi + 1))
                for lo, hi in finding["evidence"]:
                    if not all(i in kept for i in range(lo, hi + 1)):
                        problems.append(f"{name}: evidence range [{lo}, {hi}] not in slice")
                        break
    return problems
