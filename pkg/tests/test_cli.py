import csv
import json
import subprocess
import sys
from pathlib import Path

import pytest

from cowkd.cli import main

SEED = "cd" * 32


def run_args(tmp_path, *extra):
    return ["run", "--fibre-km", "1", "--batches", "1",
            "--blocks-per-batch", "4", "--chunk-qubits", str(1 << 21),
            "--seed", SEED, "--compression", "11.5", "--no-security-check",
            "--out", str(tmp_path), *extra]


def test_run_loopback_writes_reports(tmp_path, capsys):
    assert main(run_args(tmp_path)) == 0
    out = capsys.readouterr().out
    assert "session summary" in out
    for role in ("alice", "bob"):
        report = json.loads((tmp_path / f"report_{role}.json").read_text())
        assert report["secret_bits"] > 0
        rows = list(csv.DictReader(open(tmp_path / f"batches_{role}.csv")))
        assert len(rows) == report["batches"]
        assert float(rows[0]["qber_raw"]) < 0.05
    ra = json.loads((tmp_path / "report_alice.json").read_text())
    rb = json.loads((tmp_path / "report_bob.json").read_text())
    assert ra["pool_digest"] == rb["pool_digest"]


def test_run_is_deterministic_under_fixed_seed(tmp_path, capsys):
    assert main(run_args(tmp_path / "a")) == 0
    assert main(run_args(tmp_path / "b")) == 0
    capsys.readouterr()
    ra = json.loads((tmp_path / "a/report_bob.json").read_text())
    rb = json.loads((tmp_path / "b/report_bob.json").read_text())
    assert ra["transcript"] == rb["transcript"]
    assert ra["pool_digest"] == rb["pool_digest"]


def test_run_rejects_bad_config(tmp_path, capsys):
    code = main(["run", "--compression", "banana", "--out", str(tmp_path)])
    assert code == 2
    assert "configuration error" in capsys.readouterr().err


def test_finite_key_preset_outputs_budget(capsys):
    assert main(["finite-key", "--fibre-km", "1"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["budget"]["eps_qkd"] == pytest.approx(4e-9, rel=1e-12)
    assert abs(out["f_sec"] - 0.115) < 0.03


def test_finite_key_asymptotic_dominates(capsys):
    assert main(["finite-key", "--fibre-km", "1"]) == 0
    finite = json.loads(capsys.readouterr().out)
    assert main(["finite-key", "--fibre-km", "1", "--asymptotic"]) == 0
    asym = json.loads(capsys.readouterr().out)
    assert asym["f_sec"] > finite["f_sec"]


def test_finite_key_explicit_observables(capsys):
    args = ["finite-key", "--mu", "0.105", "--qber-raw", "0.0191",
            "--qber-effective", "0.0342", "--visibility-raw", "0.9781",
            "--dark-qber", "0.0085", "--noise-qber", "0.0019"]
    assert main(args) == 0
    out = json.loads(capsys.readouterr().out)
    assert abs(out["f_sec"] - 0.065) < 0.03


def test_finite_key_missing_observables_is_config_error(capsys):
    assert main(["finite-key", "--mu", "0.1"]) == 2


def test_sweep_sift_cost_round_trips(tmp_path, capsys):
    assert main(["sweep", "--param", "sift-p", "--values", "1e-4:1e-1:10",
                 "--out", str(tmp_path)]) == 0
    capsys.readouterr()
    rows = list(csv.DictReader(open(tmp_path / "sift_cost.csv")))
    assert len(rows) == 10
    for row in rows:
        assert float(row["best_cost"]) <= 2 * float(row["shannon_limit"])


def test_sweep_empty_range_header_only(tmp_path, capsys):
    code = main(["sweep", "--param", "sift-p", "--values", "", "--out", str(tmp_path)])
    assert code == 0
    capsys.readouterr()
    lines = (tmp_path / "sift_cost.csv").read_text().strip().splitlines()
    assert len(lines) == 1 and lines[0].startswith("p_detect")
    code = main(["sweep", "--param", "sift-p", "--values", "not-a-number",
                 "--out", str(tmp_path)])
    assert code == 2


def test_gen_psk(tmp_path, capsys):
    path = tmp_path / "psk.bin"
    assert main(["gen-psk", str(path), "--bytes", "2048"]) == 0
    assert path.stat().st_size == 2048


@pytest.mark.slow
def test_console_entrypoint_subprocess(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "cowkd.cli", "finite-key", "--fibre-km", "25"],
        capture_output=True, text=True, timeout=120)
    assert proc.returncode == 0
    out = json.loads(proc.stdout)
    assert abs(out["f_sec"] - 0.065) < 0.03


@pytest.mark.slow
def test_sweep_fibre_authenticated_rate_decreasing(tmp_path, capsys):
    args = ["sweep", "--param", "fibre-km", "--values", "1,5,12.5,20,25",
            "--batches", "1", "--blocks-per-batch", "16",
            "--chunk-qubits", str(1 << 19), "--seed", SEED,
            "--compression", "8", "--no-security-check",
            "--out", str(tmp_path)]
    assert main(args) == 0
    capsys.readouterr()
    rows = list(csv.DictReader(open(tmp_path / "fibre_sweep.csv")))
    assert len(rows) == 5
    rates = [float(r["authenticated_rate_bps"]) for r in rows]
    assert all(a > b for a, b in zip(rates, rates[1:])), rates


def test_run_with_config_files(tmp_path, capsys):
    from cowkd.presets import channel_params

    chan = tmp_path / "channel.json"
    channel_params(1.0).save(chan)
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"batches": 1, "blocks-per-batch": 4,
                               "chunk-qubits": 1 << 21,
                               "compression": "11.5",
                               "no_security_check": True}))
    code = main(["run", "--seed", SEED, "--config", str(cfg),
                 "--channel-config", str(chan), "--out", str(tmp_path / "o")])
    assert code == 0
    report = json.loads((tmp_path / "o/report_bob.json").read_text())
    assert report["batches"] == 1
    capsys.readouterr()
