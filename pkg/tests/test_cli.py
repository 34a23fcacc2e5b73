import csv
import json
import subprocess
import sys

import pytest

from tcforensics.cli import main
from tcforensics.trace import parse_trace


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def dtc_trace(tmp_path, capsys):
    p = tmp_path / "ip.jsonl"
    code, out, _ = run(capsys, "simulate", "--channel", "ip", "--scheme", "dtc",
                       "--base-ns", 300_000_000, "--long-ns", 500_000_000, "--jitter-ns", 0,
                       "--bits", 200, "--seed", 3, "--out", p)
    assert code == 0
    return p


class TestSimulate:
    def test_ip_case_study(self, dtc_trace):
        tr = parse_trace(dtc_trace)
        assert len(tr) == 201
        assert tr.meta["channel"]["long_interval_ns"] == 500_000_000

    def test_prints_key_and_config(self, tmp_path, capsys):
        code, out, err = run(capsys, "simulate", "--channel", "cache", "--scheme", "stc",
                             "--base-ns", 200_000, "--out", tmp_path / "c.jsonl")
        assert code == 0
        assert "dom1/pid2767/0x195a0000" in out
        cfg = json.loads(err.split("effective config: ", 1)[1].splitlines()[0])
        assert cfg["channel"]["base_interval_ns"] == 200_000
        assert cfg["channel"]["jitter_sigma_ns"] == 200.0

    def test_same_flags_identical_file(self, tmp_path, capsys):
        args = ["simulate", "--channel", "shm", "--noise-procs", 3, "--noise-duration-s", 5,
                "--seed", 7]
        run(capsys, *args, "--out", tmp_path / "a.jsonl")
        run(capsys, *args, "--out", tmp_path / "b.jsonl")
        assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()

    @pytest.mark.parametrize("extra", [
        ["--channel", "cache", "--scheme", "stc", "--long-ns", 5],
        ["--channel", "shm", "--scheme", "dtc", "--base-ns", 1000],
        ["--channel", "load", "--scheme", "stc"],
        ["--channel", "shm", "--base-ns", 1000, "--long-ns", 1050],
        ["--channel", "ip", "--preset", "flush-reload"],
        ["--channel", "shm", "--bits", "0"],
        ["--channel", "shm", "--bits", "abc"],
        ["--channel", "nope"],
        ["--channel", "shm", "--unknown-flag"],
    ])
    def test_invalid_combos_exit_2(self, tmp_path, capsys, extra):
        code, _, _ = run(capsys, "simulate", *extra, "--out", tmp_path / "x.jsonl")
        assert code == 2

    def test_bits_from_file(self, tmp_path, capsys):
        bits = tmp_path / "m.txt"
        bits.write_text("0110 1011\n" * 30)
        p = tmp_path / "t.jsonl"
        assert run(capsys, "simulate", "--channel", "shm", "--bits", f"@{bits}", "--out", p)[0] == 0
        assert parse_trace(p).meta["message"] == "01101011" * 30

    def test_preset(self, tmp_path, capsys):
        p = tmp_path / "fr.jsonl"
        assert run(capsys, "simulate", "--channel", "cache", "--preset", "flush-reload",
                   "--out", p)[0] == 0
        assert parse_trace(p).meta["channel"]["base_interval_ns"] == 200_000


class TestDetect:
    def test_finds_dtc(self, dtc_trace, tmp_path, capsys):
        out = tmp_path / "r.json"
        code, stdout, err = run(capsys, "detect", "--input", dtc_trace, "--out", out)
        assert code == 0
        rep = json.loads(out.read_text())
        (f,) = rep["findings"]
        assert f["channel_type"] == "DTC"
        assert f["decoded"]["matches_ground_truth"] is True
        assert "effective config" in err

    def test_empty_trace_exit_1(self, tmp_path, capsys):
        p = tmp_path / "e.jsonl"
        p.write_text('{"kind":"memory","page_size":4096,"meta":{}}\n')
        out = tmp_path / "r.json"
        code, _, _ = run(capsys, "detect", "--input", p, "--out", out)
        assert code == 1
        assert json.loads(out.read_text())["findings"] == []

    def test_high_threshold_exit_1(self, dtc_trace, capsys):
        code, stdout, _ = run(capsys, "detect", "--input", dtc_trace, "--repeat-threshold", 1_000_000)
        assert code == 1
        assert json.loads(stdout)["findings"] == []

    def test_invalid_trace_exit_2(self, tmp_path, capsys):
        p = tmp_path / "bad.jsonl"
        p.write_text('{"kind":"memory","meta":{}}\n{"t":-1}\n')
        assert run(capsys, "detect", "--input", p)[0] == 2
        assert run(capsys, "detect", "--input", tmp_path / "missing.jsonl")[0] == 2

    def test_bad_config_exit_2(self, dtc_trace, capsys):
        assert run(capsys, "detect", "--input", dtc_trace, "--k1", 2)[0] == 2

    def test_baseline_methods(self, dtc_trace, capsys):
        code, stdout, _ = run(capsys, "detect", "--input", dtc_trace, "--method", "epsilon")
        rep = json.loads(stdout)
        assert code == 0
        assert rep["findings"] == []
        assert [b["method"] for b in rep["baselines"]] == ["epsilon"]
        code, stdout, _ = run(capsys, "detect", "--input", dtc_trace, "--method", "all")
        assert {b["method"] for b in json.loads(stdout)["baselines"]} == {"variance", "epsilon"}


class TestReportVerify:
    def test_store_and_verify(self, dtc_trace, tmp_path, capsys):
        store = tmp_path / "store"
        code, out, _ = run(capsys, "report", "--input", dtc_trace, "--store", store)
        assert code == 0
        assert {p.name for p in store.iterdir()} == {"report.json", "slice_000.jsonl", "manifest.json"}
        assert run(capsys, "verify", "--store", store)[0] == 0
        with (store / "slice_000.jsonl").open("a") as fh:
            fh.write("\n")
        code, out, _ = run(capsys, "verify", "--store", store)
        assert code == 1 and "hash mismatch" in out

    def test_verify_missing_dir(self, tmp_path, capsys):
        assert run(capsys, "verify", "--store", tmp_path / "nope")[0] == 2


class TestBench:
    def test_suite_file(self, tmp_path, capsys):
        suite = tmp_path / "suite.json"
        suite.write_text(json.dumps([
            {"name": "shm", "channel": {"channel": "shared_memory", "scheme": "DTC",
                                        "base_interval_ns": 500000, "long_interval_ns": 1000000,
                                        "jitter_sigma_ns": 500.0},
             "message_bits": 300, "trials": 2},
        ]))
        out = tmp_path / "out"
        args = ["bench", "--suite", suite, "--seed", 4, "--calibration-trials", 3, "--out", out]
        code, stdout, _ = run(capsys, *args)
        assert code == 0
        rows = list(csv.DictReader((out / "results.csv").open()))
        assert [r["method"] for r in rows] == ["signature", "variance", "epsilon"]
        assert rows[0]["success_rate"] == "1.0000"
        first = (out / "results.csv").read_bytes()
        run(capsys, *args)
        assert (out / "results.csv").read_bytes() == first

    def test_builtin_one_trial(self, tmp_path, capsys):
        code, stdout, _ = run(capsys, "bench", "--builtin", "normal", "--trials", 1,
                              "--calibration-trials", 2, "--out", tmp_path)
        assert code == 0
        rows = list(csv.DictReader((tmp_path / "results.csv").open()))
        assert all(r["false_positive_rate"] in ("0.0000", "1.0000") for r in rows)

    def test_malformed_suite_exit_2(self, tmp_path, capsys):
        suite = tmp_path / "s.json"
        suite.write_text("[{\"name\": 1}]")
        assert run(capsys, "bench", "--suite", suite)[0] == 2
        assert run(capsys, "bench", "--suite", tmp_path / "missing.json")[0] == 2

    def test_needs_suite_source(self, capsys):
        assert run(capsys, "bench")[0] == 2


def test_module_entry_point(tmp_path):
    p = subprocess.run([sys.executable, "-m", "tcforensics.cli", "--version"],
                       capture_output=True, text=True)
    assert p.returncode == 0 and "tcforensics" in p.stdout
