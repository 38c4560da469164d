import csv
import io
import json
import subprocess
import sys

import pytest

from martcert.cli import EXIT_FAIL, EXIT_INPUT, EXIT_NONE, EXIT_OK, EXIT_USAGE, main
from martcert.suites import benchmark_path

A1_LOW = ["--param", "p1=0.2", "--param", "p2=0.4"]


def run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_synth_and_check_round_trip(tmp_path, capsys):
    cert = tmp_path / "c.json"
    code, out, _ = run(["synth", benchmark_path("a1.app"), *A1_LOW, "--out", str(cert)], capsys)
    assert code == EXIT_OK
    assert "bound: <= 0.825" in out and "trivial: false" in out
    d = json.loads(cert.read_text())
    assert d["kind"] == "nnrep" and d["provenance"] == "synthesized-exact"
    code, out, _ = run(["check", benchmark_path("a1.app"), *A1_LOW, str(cert)], capsys)
    assert code == EXIT_OK and out.startswith("pass")
    code, out, _ = run(["check", "--exact", benchmark_path("a1.app"), *A1_LOW, str(cert)], capsys)
    assert code == EXIT_OK


def test_corrupted_certificate_fails(tmp_path, capsys):
    cert = tmp_path / "c.json"
    run(["synth", benchmark_path("d3.json"), "--out", str(cert)], capsys)
    d = json.loads(cert.read_text())
    d["locations"]["l3"] = "1/2*x"
    cert.write_text(json.dumps(d))
    code, out, _ = run(["check", benchmark_path("d3.json"), str(cert)], capsys)
    assert code == EXIT_FAIL and "fail at" in out


def test_hand_certificate_file(tmp_path, capsys):
    d = {"kind": "nnrep", "params": {"level": "1"}, "provenance": "hand-written",
         "locations": {"l1": "1/2", "l2": "1/2", "l3": "1/2", "l4": "1/2", "l5": "1", "l6": "0"}}
    cert = tmp_path / "h.json"
    cert.write_text(json.dumps(d))
    code, out, _ = run(["check", benchmark_path("d2.json"), str(cert)], capsys)
    assert code == EXIT_OK, out


def test_fingerprint_mismatch(tmp_path, capsys):
    cert = tmp_path / "c.json"
    run(["synth", benchmark_path("a1.app"), *A1_LOW, "--out", str(cert)], capsys)
    code, _, err = run(["check", benchmark_path("a1.app"), "--param", "p1=0.3", "--param", "p2=0.4",
                        str(cert)], capsys)
    assert code == EXIT_INPUT and "fingerprint" in err


def test_sclsub_lower_bound(capsys):
    code, out, _ = run(["synth", benchmark_path("a1.app"), "--param", "p1=0.8", "--param", "p2=0.1",
                        "--cert", "sclsub"], capsys)
    assert code == EXIT_OK and "bound: >= 0.752507" in out


def test_no_refuting_map_exits_two(capsys):
    code, out, _ = run(["synth", benchmark_path("fig3.json"), "--cert", "eps-rep"], capsys)
    assert code == EXIT_NONE and "no refuting" in out


def test_eps_rep_reports_azuma(capsys):
    code, out, _ = run(["synth", benchmark_path("d1.json"), "--cert", "eps-rep"], capsys)
    assert code == EXIT_OK and "refutation only" in out and "kappa: 23/4" in out


@pytest.mark.parametrize("argv,code", [
    ([], EXIT_USAGE),
    (["bench"], EXIT_USAGE),
    (["bench", "--suite", "nope"], EXIT_USAGE),
    (["synth", "/no/such/file.app"], EXIT_INPUT),
    (["synth", "--cert", "bogus", "x.app"], EXIT_USAGE),
    (["synth", "--template", "linear", "--degree", "2", "x.app"], EXIT_USAGE),
])
def test_exit_codes(argv, code, capsys):
    assert run(argv, capsys)[0] == code


def test_parse_error_exit(tmp_path, capsys):
    bad = tmp_path / "bad.app"
    bad.write_text("x := 1 +\n")
    code, _, err = run(["synth", str(bad)], capsys)
    assert code == EXIT_INPUT and "1:" in err


def test_oracle_command(tmp_path, capsys):
    out_csv = tmp_path / "v.csv"
    code, out, _ = run(["oracle", benchmark_path("d1_alt.json"), "--bound", "x=0:10", "--mc", "20000",
                        "--out", str(out_csv)], capsys)
    assert code == EXIT_OK and "states: 41" in out and "monte carlo" in out
    assert out_csv.exists()


def test_bench_table4(tmp_path, capsys):
    out = tmp_path / "t4.csv"
    code, text, _ = run(["bench", "--suite", "table4", "--out", str(out), "--no-times"], capsys)
    assert code == EXIT_OK
    rows = list(csv.DictReader(io.StringIO(out.read_text())))
    assert len(rows) == 8
    assert rows[1]["bound"] == "0.752507" and rows[0]["bound"] == "0"


def test_bench_table3_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    run(["bench", "--suite", "table3", "--out", str(a), "--no-times"], capsys)
    run(["bench", "--suite", "table3", "--out", str(b), "--no-times", "--jobs", "2"], capsys)
    assert a.read_bytes() == b.read_bytes()
    rows = list(csv.DictReader(io.StringIO(a.read_text())))
    assert [r["benchmark"] for r in rows] == ["c-1", "c-2", "c-3", "c-4"]
    assert "refutation-only" in rows[0]["status"]


def test_bench_table2_without_solver(tmp_path, capsys, monkeypatch):
    monkeypatch.delenv("MARTCERT_SDP_SOLVER", raising=False)
    out = tmp_path / "t2.csv"
    code, _, _ = run(["bench", "--suite", "table2", "--out", str(out), "--no-times"], capsys)
    assert code == EXIT_OK
    rows = list(csv.DictReader(io.StringIO(out.read_text())))
    poly = [r for r in rows if "deg" in r["kind"]]
    assert len(poly) == 4 and all(r["status"] == "skipped (solver unavailable)" for r in poly)
    lin = [r for r in rows if "deg" not in r["kind"]]
    assert [r["bound"] for r in lin] == ["0.825", "1"]


def test_console_script():
    r = subprocess.run([sys.executable, "-m", "martcert.cli", "synth", benchmark_path("d4.json")],
                       capture_output=True, text=True)
    assert r.returncode == EXIT_OK and "trivial: true" in r.stdout
