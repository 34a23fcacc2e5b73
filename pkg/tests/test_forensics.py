import json

import pytest

from tcforensics.baselines import baseline_detect
from tcforensics.channels import (
    BitMessage,
    ChannelSpec,
    NoiseSpec,
    merge_traces,
    simulate_cache_stc_preset,
    simulate_dtc,
    simulate_noise,
)
from tcforensics.detector import DetectionVerdict, ChannelType, detect
from tcforensics.forensics import (
    ForensicReport,
    build_report,
    check_report_indices,
    store_evidence,
    verify_store,
)
from tcforensics.trace import PageKey, Trace, TraceError, TraceKind, parse_trace

STAMP = "2026-01-01T00:00:00Z"


@pytest.fixture(scope="module")
def noisy_dtc():
    spec = ChannelSpec("shared_memory", "DTC", 500_000, 1_000_000, 500.0, start_ns=10**9)
    msg = BitMessage.random(400, 11)
    tr = merge_traces(simulate_dtc(msg, spec, 11),
                      simulate_noise(NoiseSpec(n_processes=5, duration_ns=20 * 10**9), 11))
    return tr, msg


class TestBuildReport:
    def test_ip_case_study_decodes_exactly(self):
        spec = ChannelSpec("ip_timing", "DTC", 300_000_000, 500_000_000)
        msg = BitMessage.random(300, 1)
        tr = simulate_dtc(msg, spec, 1)
        rep = build_report(tr, detect(tr), generated_at=STAMP)
        (f,) = rep.findings
        assert f["decoded"]["bits"] == str(msg)
        assert f["decoded"]["matches_ground_truth"] is True
        assert f["decoded"]["levels_ns"] == [300_000_000, 500_000_000]

    def test_stc_decoding(self):
        msg = BitMessage.random(500, 2)
        tr = simulate_cache_stc_preset(msg, 2)
        (f,) = build_report(tr, detect(tr)).findings
        assert f["decoded"]["matches_ground_truth"] is True

    def test_ground_truth_through_merge(self, noisy_dtc):
        tr, msg = noisy_dtc
        rep = build_report(tr, detect(tr))
        (f,) = rep.findings
        assert f["decoded"]["bits"] == str(msg)
        assert f["decoded"]["matches_ground_truth"] is True
        assert all(v["channel_type"] == "none" for v in rep.verdicts)

    def test_empty_report_is_json(self):
        rep = build_report(Trace.empty(TraceKind.MEMORY), [], generated_at=STAMP)
        d = json.loads(rep.to_json())
        assert d["findings"] == [] and d["verdicts"] == []
        assert not rep.positive

    def test_indices_resolve(self, noisy_dtc):
        tr, _ = noisy_dtc
        rep = build_report(tr, detect(tr), baseline_verdicts=baseline_detect(tr))
        assert check_report_indices(rep, tr) == []
        assert check_report_indices(rep, tr.take(range(10)))

    def test_out_of_trace_evidence_rejected(self):
        v = DetectionVerdict(PageKey(1, 1, 0), ChannelType.NONE, evidence=(0, 5))
        with pytest.raises(TraceError):
            build_report(Trace.empty(TraceKind.MEMORY), [v])

    def test_content_hash_ignores_timestamp(self, noisy_dtc):
        tr, _ = noisy_dtc
        vs = detect(tr)
        a = build_report(tr, vs, generated_at=STAMP)
        b = build_report(tr, vs, generated_at="2030-05-05T00:00:00Z")
        assert a.content_hash() == b.content_hash()
        assert ForensicReport.from_dict(json.loads(a.to_json())).content_hash() == a.content_hash()

    def test_json_stable_ordering(self, noisy_dtc):
        tr, _ = noisy_dtc
        text = build_report(tr, detect(tr), generated_at=STAMP).to_json()
        assert text == json.dumps(json.loads(text), indent=2, sort_keys=True) + "\n"


class TestStore:
    def test_three_files(self, noisy_dtc, tmp_path):
        tr, _ = noisy_dtc
        rep = build_report(tr, detect(tr), generated_at=STAMP)
        paths = store_evidence(rep, tr, tmp_path / "s")
        assert sorted(p.name for p in paths) == ["manifest.json", "report.json", "slice_000.jsonl"]
        assert verify_store(tmp_path / "s") == []

    def test_slice_contains_evidence(self, noisy_dtc, tmp_path):
        tr, _ = noisy_dtc
        rep = build_report(tr, detect(tr), generated_at=STAMP)
        store_evidence(rep, tr, tmp_path, margin=3)
        sl = parse_trace(tmp_path / "slice_000.jsonl")
        info = sl.meta["evidence_slice"]
        rows = [i for lo, hi in info["index_ranges"] for i in range(lo, hi + 1)]
        assert len(rows) == len(sl)
        assert sl == tr.take(rows, meta=sl.meta)
        ev = {i for lo, hi in rep.findings[0]["evidence"] for i in range(lo, hi + 1)}
        assert ev <= set(rows)
        # the channel key is found again in the slice alone
        (v,) = [x for x in detect(sl) if x.positive]
        assert v.key == PageKey(1, 1893, 0x2A4C1000)

    def test_idempotent(self, noisy_dtc, tmp_path):
        tr, _ = noisy_dtc
        vs = detect(tr)
        store_evidence(build_report(tr, vs, generated_at=STAMP), tr, tmp_path / "a")
        store_evidence(build_report(tr, vs, generated_at="2031-01-01T00:00:00Z"), tr, tmp_path / "b")
        for name in ("manifest.json", "slice_000.jsonl"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_tampered_slice(self, noisy_dtc, tmp_path):
        tr, _ = noisy_dtc
        store_evidence(build_report(tr, detect(tr)), tr, tmp_path)
        p = tmp_path / "slice_000.jsonl"
        p.write_text(p.read_text().replace('"t":', '"t": ', 1))
        assert any("hash mismatch" in x for x in verify_store(tmp_path))

    def test_tampered_report(self, noisy_dtc, tmp_path):
        tr, _ = noisy_dtc
        store_evidence(build_report(tr, detect(tr)), tr, tmp_path)
        p = tmp_path / "report.json"
        d = json.loads(p.read_text())
        d["findings"][0]["channel_type"] = "STC"
        p.write_text(json.dumps(d))
        assert any("report.json" in x for x in verify_store(tmp_path))

    def test_missing_slice_and_manifest(self, noisy_dtc, tmp_path):
        tr, _ = noisy_dtc
        store_evidence(build_report(tr, detect(tr)), tr, tmp_path)
        (tmp_path / "slice_000.jsonl").unlink()
        assert any("missing" in x for x in verify_store(tmp_path))
        (tmp_path / "manifest.json").unlink()
        assert verify_store(tmp_path)[0].startswith("manifest unreadable")

    def test_no_findings_store(self, tmp_path):
        tr = simulate_noise(NoiseSpec(n_processes=2, duration_ns=10**10), 1)
        paths = store_evidence(build_report(tr, detect(tr)), tr, tmp_path)
        assert sorted(p.name for p in paths) == ["manifest.json", "report.json"]
        assert verify_store(tmp_path) == []
