import json
import subprocess
import sys
import time

import pytest

from hermes_cic.cli import main
from hermes_cic.scenario import bundled_path

CLI = [sys.executable, "-m", "hermes_cic"]


def test_invalid_alpha_names_field(tmp_path, capsys):
    bad = tmp_path / "bad.scenario"
    bad.write_text(bundled_path().read_text().replace("alpha: 0.1", "alpha: 1.5"))
    assert main(["simulate", str(bad), "--out", str(tmp_path / "o")]) == 1
    assert "controller.alpha" in capsys.readouterr().err


def test_missing_file_is_validation_error(tmp_path):
    assert main(["simulate", str(tmp_path / "nope.scenario"), "--out", str(tmp_path)]) == 1


def test_simulate_writes_artifacts_and_report_recomputes(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["simulate", "table2.scenario", "--out", str(out)]) == 0
    line = capsys.readouterr().out.strip().splitlines()[-1]
    fields = dict(kv.split("=", 1) for kv in line.split(";"))
    assert fields["mutual_exclusion_violations"] == "0"
    for name in ("trajectory.csv", "delays.csv", "sequence.csv", "report.json", "scenario.scenario",
                 "figures/positions.png", "figures/speeds.png", "figures/collision.png"):
        assert (out / name).exists(), name
    first = json.loads((out / "report.json").read_text())
    assert main(["report", str(out), "--no-figures"]) == 0
    again = json.loads((out / "report.json").read_text())
    assert again["settling_time_s"] == pytest.approx(first["settling_time_s"], abs=0.011)
    assert again["mutual_exclusion_violations"] == 0


def test_uncontrolled_flags_collision(tmp_path, capsys):
    assert main(["simulate", "table2.scenario", "--uncontrolled", "--no-figures",
                 "--out", str(tmp_path)]) == 2
    assert "enters" in capsys.readouterr().out


def test_report_rejects_broken_csv(tmp_path):
    main(["simulate", "table2.scenario", "--ideal", "--no-figures", "--out", str(tmp_path)])
    (tmp_path / "trajectory.csv").write_text("t_s,oops\n1,2\n")
    assert main(["report", str(tmp_path), "--no-figures"]) == 1


def test_duplicate_agent_id_exits_3(tmp_path):
    mgr = subprocess.Popen(CLI + ["serve", "--bind", "127.0.0.1:0", "--duration", "20"],
                           stdout=subprocess.PIPE, text=True)
    try:
        url = mgr.stdout.readline().split()[-1]
        start = time.time() * 1000 + 1500
        common = ["agent", "table2.scenario", "--id", "fh16", "--manager", url,
                  "--start-at", str(start), "--duration", "2"]
        first = subprocess.Popen(CLI + common + ["--out", str(tmp_path / "a")])
        time.sleep(1.0)
        second = subprocess.run(CLI + common + ["--out", str(tmp_path / "b")], timeout=30,
                                capture_output=True, text=True)
        assert second.returncode == 3
        assert first.wait(timeout=30) == 0
    finally:
        mgr.kill()
        mgr.wait()


def test_agent_unknown_manager_is_runtime_fault(tmp_path):
    r = subprocess.run(CLI + ["agent", "table2.scenario", "--id", "fh16",
                              "--manager", "ws://127.0.0.1:9", "--duration", "1"],
                       capture_output=True, text=True, timeout=60)
    assert r.returncode == 3
    assert "cannot reach manager" in r.stderr
