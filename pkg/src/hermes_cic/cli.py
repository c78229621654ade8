"""Command-line entry points: simulate, serve, agent, report.

Exit codes: 0 success, 1 validation error, 2 safety or convergence check
failed, 3 runtime fault. Set ``HERMES_LOG`` (e.g. ``INFO``) for logging.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import logging
import os
import shutil
import sys
from pathlib import Path

from .control_core import VehicleState
from .errors import DomainError, ScenarioError, SimulationFault, ValidationError
from .metrics import DEFAULT_HOLD_S, DEFAULT_THRESHOLD_M, build_report, sequence_progression, stats

EXIT_OK, EXIT_VALIDATION, EXIT_SAFETY, EXIT_FAULT = 0, 1, 2, 3


def _load(path: str):
    from .scenario import load_scenario

    return load_scenario(path)


def _report_errors(exc: Exception) -> int:
    if isinstance(exc, ScenarioError):
        for p in exc.problems:
            print(f"error: {p.field}: {p.message}", file=sys.stderr)
    else:
        print(f"error: {exc}", file=sys.stderr)
    return EXIT_VALIDATION


def _verdict(report) -> int:
    if not report.mutual_exclusion_ok:
        return EXIT_SAFETY
    if report.settling_time_s is None:
        return EXIT_SAFETY
    return EXIT_OK


def _summary_line(report) -> str:
    cls = ",".join(f"{k}={v}" for k, v in report.collision_classifications.items())
    settle = "none" if report.settling_time_s is None else f"{report.settling_time_s:.2f}"
    return (f"settling_s={settle};mutual_exclusion_violations={report.mutual_exclusion_violations};"
            f"collision={cls}")


def _copy_scenario(path: str, out: Path) -> None:
    from .scenario import bundled_path

    src = Path(path)
    if not src.exists():
        src = bundled_path(src.name)
    out.mkdir(parents=True, exist_ok=True)
    target = out / "scenario.scenario"
    if not target.exists() or target.read_bytes() != src.read_bytes():
        shutil.copyfile(src, target)


def cmd_simulate(args) -> int:
    from . import csvio
    from .distributed import run_distributed
    from .net_harness import LatencyModel
    from .sim_dynamics import lyapunov_series, run_closed_loop, run_uncontrolled

    try:
        scenario = _load(args.scenario)
        if args.seed is not None:
            scenario = scenario.with_seed(args.seed)
        network = None
        if args.network:
            network = LatencyModel.parse(args.network, seed=scenario.network.seed)
    except (ScenarioError, ValidationError, DomainError, ValueError) as exc:
        return _report_errors(exc)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    run = None
    try:
        if args.uncontrolled:
            log = run_uncontrolled(scenario)
        elif args.ideal:
            log = run_closed_loop(scenario)
        else:
            run = run_distributed(scenario, network, priority=args.priority)
            log = run.log
    except SimulationFault as exc:
        print(f"runtime fault: {exc}", file=sys.stderr)
        return EXIT_FAULT
    delays = run.delays if run else []
    csvio.write_trajectory(out / "trajectory.csv", log)
    csvio.write_delays(out / "delays.csv", delays)
    if run:
        csvio.write_sequences(out / "sequence.csv", run.sequences, run.discarded)
    lyap = None
    if scenario.spacing.mode.value == "constant_gap" and not args.uncontrolled:
        v = log.lyapunov
        if v is None:
            order = scenario.crossing_order()
            frame = sum(s.speed_mps for s in scenario.initial) / len(scenario.initial)
            v = lyapunov_series(log, scenario.graph(order), order, scenario.params, scenario.spacing, frame)
            log.lyapunov = v
        lyap = (log.t, v)
        csvio.write_lyapunov(out / "lyapunov.csv", *lyap)
    _copy_scenario(args.scenario, out)
    report = build_report(log, scenario, delays, args.threshold, args.hold)
    if run:
        report.extra["manager"] = run.manager
        report.extra["agents"] = run.agents
        report.extra["sequence_monotone"] = {
            vid: sequence_progression(seqs).monotone for vid, seqs in run.sequences.items()}
    report.extra["mode"] = log.meta.get("mode")
    (out / "report.json").write_text(report.to_json())
    if args.figures:
        from .plotting import render_run

        reference = None if args.uncontrolled else run_uncontrolled(scenario)
        render_run(out, log, scenario, delays, reference, lyap)
    print(_summary_line(report))
    return _verdict(report)


def cmd_report(args) -> int:
    from . import csvio

    out = Path(args.out_dir)
    try:
        scenario = _load(args.scenario or str(out / "scenario.scenario"))
    except (ScenarioError, ValidationError) as exc:
        return _report_errors(exc)
    try:
        if not (out / "trajectory.csv").exists():
            csvio.merge_agent_outputs(out)
        log = csvio.read_trajectory(out / "trajectory.csv", scenario)
        delays = csvio.read_delays(out / "delays.csv") if (out / "delays.csv").exists() else []
        seqs = csvio.read_sequences(out / "sequence.csv") if (out / "sequence.csv").exists() else ({}, {})
        lyap = csvio.read_lyapunov(out / "lyapunov.csv") if (out / "lyapunov.csv").exists() else None
    except (ValidationError, FileNotFoundError, KeyError) as exc:
        return _report_errors(exc)
    if lyap is not None:
        log.lyapunov = lyap[1]
    report = build_report(log, scenario, delays, args.threshold, args.hold)
    report.extra["sequence_monotone"] = {
        vid: sequence_progression(s, seqs[1].get(vid, ())).monotone for vid, s in seqs[0].items()}
    manager_file = out / "manager.json"
    if manager_file.exists():
        m = json.loads(manager_file.read_text())
        report.extra["protocol_violations"] = m["protocol_violations"]
        times = m["broadcast_times_ms"]
        if len(times) > 2:
            gaps = [b - a for a, b in zip(times, times[1:])]
            report.extra["broadcast_interval_ms"] = stats(gaps).__dict__
    (out / "report.json").write_text(report.to_json())
    if args.figures:
        from .plotting import render_run

        render_run(out, log, scenario, delays, None, (log.t, log.lyapunov) if lyap else None)
    print(_summary_line(report))
    return _verdict(report)


def cmd_serve(args) -> int:
    from .traffic_manager import serve

    info = {"priority_vehicle": args.priority} if args.priority else None
    try:
        asyncio.run(serve(args.bind, args.rate_hz, args.stale_ms, args.duration, args.out, info,
                          announce=lambda s: print(s, flush=True)))
    except OSError as exc:
        print(f"error: cannot listen on {args.bind}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_FAULT
    except KeyboardInterrupt:
        pass
    return EXIT_OK


def cmd_agent(args) -> int:
    from .distributed import agent_config
    from .vehicle_agent import run_live

    try:
        scenario = _load(args.scenario)
        if args.id not in scenario.ids:
            raise ValidationError("--id", f"{args.id!r} is not a vehicle of the scenario")
    except (ScenarioError, ValidationError) as exc:
        return _report_errors(exc)
    cfg = agent_config(scenario, args.id)
    if args.name:
        from dataclasses import replace

        cfg = replace(cfg, name=args.name)
    initial: VehicleState = scenario.initial[scenario.ids.index(args.id)]
    if args.out:
        _copy_scenario(args.scenario, Path(args.out))
    try:
        return asyncio.run(run_live(
            cfg, args.manager, initial, mode=args.mode, start_at_ms=args.start_at,
            duration_s=args.duration or scenario.sim.duration_s, dt_s=scenario.sim.dt_s,
            input_clamp_mps2=scenario.sim.input_clamp_mps2, out_dir=args.out))
    except OSError as exc:
        print(f"error: cannot reach manager at {args.manager}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_FAULT


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hermes-cic", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run a scenario in the simulated network")
    s.add_argument("scenario", help="scenario file, or a bundled name such as table2.scenario")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--uncontrolled", action="store_true", help="hold initial speeds, no control")
    s.add_argument("--ideal", action="store_true", help="synchronous zero-delay closed loop (no network)")
    s.add_argument("--network", help="override the delay model, e.g. normal:35:10 or constant:100")
    s.add_argument("--priority", help="vehicle id injected as priority by the manager")
    s.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD_M)
    s.add_argument("--hold", type=float, default=DEFAULT_HOLD_S)
    s.add_argument("--figures", action=argparse.BooleanOptionalAction, default=True)
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("report", help="recompute the report and figures from an output directory")
    r.add_argument("out_dir")
    r.add_argument("--scenario")
    r.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD_M)
    r.add_argument("--hold", type=float, default=DEFAULT_HOLD_S)
    r.add_argument("--figures", action=argparse.BooleanOptionalAction, default=True)
    r.set_defaults(func=cmd_report)

    m = sub.add_parser("serve", help="run the traffic manager on websockets")
    m.add_argument("--bind", default="127.0.0.1:8765")
    m.add_argument("--rate-hz", type=float, default=20.0)
    m.add_argument("--stale-ms", type=float, default=500.0)
    m.add_argument("--duration", type=float, default=None, help="seconds; default runs until interrupted")
    m.add_argument("--priority")
    m.add_argument("--out")
    m.set_defaults(func=cmd_serve)

    a = sub.add_parser("agent", help="run one vehicle agent against a manager")
    a.add_argument("scenario")
    a.add_argument("--id", required=True)
    a.add_argument("--name")
    a.add_argument("--manager", default="ws://127.0.0.1:8765")
    a.add_argument("--mode", choices=["sim", "live"], default="sim")
    a.add_argument("--start-at", type=float, default=None, help="common start instant, epoch ms")
    a.add_argument("--duration", type=float, default=None)
    a.add_argument("--out")
    a.set_defaults(func=cmd_agent)
    return ap


def main(argv=None) -> int:
    level = os.environ.get("HERMES_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(asctime)s %(levelname)s %(name)s %(message)s")
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
