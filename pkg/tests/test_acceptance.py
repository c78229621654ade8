"""Acceptance suite. Each test prints one ``criterion N: PASS|FAIL`` line.

The lines are repeated in the ``acceptance criteria`` section of the pytest
terminal summary. Criterion 8 starts real processes on loopback and takes
about 40 s.
"""

import json
import math
import random
import subprocess
import sys
import time

import numpy as np
import pytest

from builders import random_formation, table2, with_network
from hermes_cic.control_core import sig
from hermes_cic.distributed import run_distributed
from hermes_cic.junction import CollisionClass
from hermes_cic.metrics import build_report, detect_settling, stats
from hermes_cic.protocol import accept_packet
from hermes_cic.sim_dynamics import run_closed_loop, run_uncontrolled

CLI = [sys.executable, "-m", "hermes_cic"]


def _fmt(x):
    return "none" if x is None else f"{x:.2f}"


def test_criterion_1_bundled_scenario_converges(tmp_path, verdict):
    t0 = time.perf_counter()
    r = subprocess.run(CLI + ["simulate", "table2.scenario", "--out", str(tmp_path)],
                       capture_output=True, text=True, timeout=120)
    wall = time.perf_counter() - t0
    rep = json.loads((tmp_path / "report.json").read_text())
    settle = rep["settling_time_s"]
    checks = {
        "converged": settle is not None,
        "settling in [15, 25] s": settle is not None and 15.0 <= settle <= 25.0,
        "no mutual-exclusion violations": rep["mutual_exclusion_violations"] == 0,
        "wall < 10 s": wall < 10.0,
    }
    failed = [k for k, ok in checks.items() if not ok]
    ok = verdict(1, not failed, f"settling={_fmt(settle)} s, violations={rep['mutual_exclusion_violations']}, "
                                f"wall={wall:.1f} s, exit={r.returncode}"
                                + (f"; failed: {', '.join(failed)}" if failed else ""))
    assert ok, failed


def test_criterion_2_collision_counterfactual(verdict):
    sc = table2()
    unc = build_report(run_uncontrolled(sc), sc)
    ctl = build_report(run_distributed(sc).log, sc)
    entering = [p for p, c in unc.collision_classifications.items() if c == CollisionClass.ENTERS.value]
    safe = all(c in ("touches", "avoids") for c in ctl.collision_classifications.values())
    ok = verdict(2, bool(entering) and safe,
                 f"uncontrolled enters={entering}, controlled={ctl.collision_classifications}")
    assert ok


def test_criterion_3_lyapunov_suite(verdict):
    problems = []
    worst_rise = worst_drift = 0.0
    for seed in range(20):
        sc = random_formation(seed)
        log = run_closed_loop(sc)
        v = np.asarray(log.lyapunov)
        rise = float(np.max(np.diff(v))) / v[0]
        total = log.v.sum(axis=1)
        drift = float(np.max(np.abs(total - total[0]))) / abs(total[0])
        worst_rise, worst_drift = max(worst_rise, rise), max(worst_drift, drift)
        rep = build_report(log, sc)
        settle = detect_settling(log.t, log.follower_errors(), 0.1, 2.0)
        if rise > 1e-6:
            problems.append(f"seed {seed}: V rose by {rise:.2e} V0")
        if drift > 1e-6:
            problems.append(f"seed {seed}: sum v drifted {drift:.2e}")
        if not (rep.c_hat and rep.c_hat > 0):
            problems.append(f"seed {seed}: c_hat={rep.c_hat}")
        elif settle is None or settle > rep.settling_bound_s:
            problems.append(f"seed {seed}: settling {settle} vs bound {rep.settling_bound_s}")
    ok = verdict(3, not problems, f"20 seeds, max V rise {worst_rise:.1e} V0, max sum-v drift {worst_drift:.1e}"
                                  + (f"; {problems}" if problems else ""))
    assert ok, problems


def test_criterion_4_sig_properties(verdict):
    rng = np.random.default_rng(0)
    odd = all(sig(-x, a) == -sig(x, a) for x in rng.uniform(-1e3, 1e3, 2000) for a in (0.1, 0.3, 0.5, 0.9, 1.7))

    def absp(x, a):
        return abs(x) ** a

    worst = 0.0
    h = 1e-6
    for a in (0.3, 0.5, 0.9):
        for x in (-2.0, -1.0, -0.5, 0.5, 1.0, 2.0):
            fd_sig = (sig(x + h, a) - sig(x - h, a)) / (2 * h)
            fd_abs = (absp(x + h, a) - absp(x - h, a)) / (2 * h)
            want_sig = a * abs(x) ** (a - 1)
            want_abs = a * math.copysign(abs(x) ** (a - 1), x)
            worst = max(worst, abs(fd_sig - want_sig) / abs(want_sig), abs(fd_abs - want_abs) / abs(want_abs))
    ok = verdict(4, odd and worst <= 1e-6, f"oddness exact={odd}, worst derivative rel. error {worst:.1e}")
    assert ok


def test_criterion_5_late_predecessor_discard(verdict):
    rnd = random.Random(5)
    bad = 0
    for _ in range(1000):
        seqs = list(range(50))
        rnd.shuffle(seqs)
        last, accepted = None, []
        for s in seqs:
            if accept_packet(last, s):
                accepted.append(s)
                last = s
        if not (all(a < b for a, b in zip(accepted, accepted[1:])) and accepted[-1] == 49):
            bad += 1
    ok = verdict(5, bad == 0, f"1000 permutations of 50 packets, {bad} bad")
    assert ok


def _state_rtt_mean(spec):
    run = run_distributed(with_network(table2(), spec, seed=0))
    return stats([d.value_ms for d in run.delays if d.kind.value == "state_rtt"]).mean


def test_criterion_6_delay_regimes(verdict):
    normal = _state_rtt_mean("normal:35:10")
    const = _state_rtt_mean("constant:100")
    ok_n, ok_c = 60.0 <= normal <= 80.0, 190.0 <= const <= 220.0
    ok = verdict(6, ok_n and ok_c,
                 f"normal(35,10) state RTT {normal:.1f} ms (want [60, 80]) {'ok' if ok_n else 'OUT'}; "
                 f"constant 100 ms {const:.1f} ms (want [190, 220]) {'ok' if ok_c else 'OUT'}")
    assert ok


def test_criterion_7_robust_under_delay(verdict):
    sc = with_network(table2(), "normal:35:10", seed=0)
    run = run_distributed(sc)
    rep = build_report(run.log, sc, run.delays)
    settle = rep.settling_time_s
    checks = {
        "converged": settle is not None,
        "settling in [15, 30] s": settle is not None and 15.0 <= settle <= 30.0,
        "no mutual-exclusion violations": rep.mutual_exclusion_ok,
        "no protocol violations": run.manager["protocol_violations"] == 0,
    }
    failed = [k for k, ok in checks.items() if not ok]
    ok = verdict(7, not failed, f"settling={_fmt(settle)} s, violations={rep.mutual_exclusion_violations}"
                                + (f"; failed: {', '.join(failed)}" if failed else ""))
    assert ok, failed


def test_criterion_8_live_loopback(tmp_path, verdict):
    duration = table2().sim.duration_s
    mgr = subprocess.Popen(CLI + ["serve", "--bind", "127.0.0.1:0", "--duration", str(duration + 6),
                                  "--out", str(tmp_path)], stdout=subprocess.PIPE, text=True)
    try:
        url = mgr.stdout.readline().split()[-1]
        start = int(time.time() * 1000) + 2000
        agents = [subprocess.Popen(CLI + ["agent", "table2.scenario", "--id", vid, "--manager", url,
                                          "--start-at", str(start), "--out", str(tmp_path)])
                  for vid in ("fh16", "xc90", "s90")]
        codes = [a.wait(timeout=duration + 60) for a in agents]
        mgr.wait(timeout=30)
    finally:
        mgr.kill()
    r = subprocess.run(CLI + ["report", str(tmp_path), "--no-figures"], capture_output=True, text=True,
                       timeout=120)
    rep = json.loads((tmp_path / "report.json").read_text())
    interval = rep["extra"]["broadcast_interval_ms"]["mean"]
    monotone = rep["extra"]["sequence_monotone"]
    checks = {
        "agents exited 0": codes == [0, 0, 0],
        "zero protocol violations": rep["extra"]["protocol_violations"] == 0,
        "broadcast interval within 10% of 50 ms": abs(interval - 50.0) <= 5.0,
        "monotone sequence log per agent": len(monotone) == 3 and all(monotone.values()),
        "no mutual-exclusion violations": rep["mutual_exclusion_violations"] == 0,
    }
    failed = [k for k, ok in checks.items() if not ok]
    ok = verdict(8, not failed,
                 f"protocol violations={rep['extra']['protocol_violations']}, interval={interval:.2f} ms, "
                 f"monotone={monotone}, settling={_fmt(rep['settling_time_s'])} s, report exit={r.returncode}"
                 + (f"; failed: {', '.join(failed)}" if failed else ""))
    assert ok, failed
