"""Canonical CSV artifacts of a run and their readers.

``trajectory.csv`` holds one row per (sample, vehicle) with the columns in
:data:`TRAJECTORY_COLUMNS`. Side files carry delay samples, accepted
global sequences and the Lyapunov series.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import ValidationError
from .metrics import DelayKind, DelaySample, ttp_series
from .sim_dynamics import TrajectoryLog, derived_columns

TRAJECTORY_COLUMNS = ["t_s", "vehicle_id", "p_m", "v_mps", "u_mps2", "e_pred_m", "in_ca", "global_seq_used"]
DELAY_COLUMNS = ["kind", "value_ms", "timestamp_ms", "vehicle_id"]
SEQUENCE_COLUMNS = ["vehicle_id", "t_ms", "global_sequence", "accepted"]
LYAPUNOV_COLUMNS = ["t_s", "V"]


def _fmt(x: float) -> str:
    return "" if isinstance(x, float) and math.isnan(x) else repr(float(x))


def write_trajectory(path: Path, log: TrajectoryLog) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRAJECTORY_COLUMNS)
        for k, t in enumerate(log.t):
            for i, vid in enumerate(log.ids):
                w.writerow([repr(float(t)), vid, _fmt(log.p[k, i]), _fmt(log.v[k, i]), _fmt(log.u[k, i]),
                            _fmt(log.e_pred[k, i]), int(log.in_ca[k, i]), int(log.seq_used[k, i])])


def _check_header(path: Path, header: list[str] | None, expected: list[str]) -> None:
    if header != expected:
        raise ValidationError(path.name, f"expected columns {','.join(expected)}, got {header}")


def _num(path: Path, line: int, col: str, text: str, kind=float):
    if text == "" and kind is float:
        return math.nan
    try:
        return kind(text)
    except ValueError:
        raise ValidationError(f"{path.name}:{line}.{col}", f"not a number: {text!r}") from None


def read_trajectory(path: Path, scenario=None) -> TrajectoryLog:
    """Parse a trajectory CSV; missing ``e_pred_m`` values are recomputed when ``scenario`` is given."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        _check_header(path, next(reader, None), TRAJECTORY_COLUMNS)
        rows = list(reader)
    ids: list[str] = []
    times: list[float] = []
    cells: dict[tuple[float, str], list] = {}
    for n, row in enumerate(rows, start=2):
        if len(row) != len(TRAJECTORY_COLUMNS):
            raise ValidationError(f"{path.name}:{n}", f"expected {len(TRAJECTORY_COLUMNS)} fields")
        t = _num(path, n, "t_s", row[0])
        vid = row[1]
        if vid not in ids:
            ids.append(vid)
        if not times or t != times[-1]:
            if times and t < times[-1]:
                raise ValidationError(f"{path.name}:{n}.t_s", "time must be non-decreasing")
            times.append(t)
        cells[(t, vid)] = [_num(path, n, c, x) for c, x in zip(TRAJECTORY_COLUMNS[2:6], row[2:6])] + [
            _num(path, n, "in_ca", row[6], int), _num(path, n, "global_seq_used", row[7], int)]
    K, N = len(times), len(ids)
    arr = np.full((K, N, 6), np.nan)
    for k, t in enumerate(times):
        for i, vid in enumerate(ids):
            if (t, vid) not in cells:
                raise ValidationError(path.name, f"no row for vehicle {vid!r} at t={t}")
            arr[k, i] = cells[(t, vid)]
    log = TrajectoryLog(tuple(ids), np.array(times), arr[:, :, 0], arr[:, :, 1], arr[:, :, 2],
                        arr[:, :, 3], arr[:, :, 4].astype(bool), arr[:, :, 5].astype(np.int64))
    if scenario is not None:
        specs = [scenario.vehicles[scenario.ids.index(v)] for v in ids]
        e_pred, in_ca = derived_columns(log.ids, log.p, log.v, specs, scenario.junction,
                                        scenario.crossing_order(), scenario.spacing)
        log.e_pred = e_pred
        log.in_ca = in_ca
    return log


def write_delays(path: Path, samples: Iterable[DelaySample]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(DELAY_COLUMNS)
        for s in samples:
            w.writerow([s.kind.value, repr(float(s.value_ms)), repr(float(s.timestamp_ms)), s.vehicle_id])


def read_delays(path: Path) -> list[DelaySample]:
    path = Path(path)
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        _check_header(path, next(reader, None), DELAY_COLUMNS)
        for n, row in enumerate(reader, start=2):
            if len(row) != len(DELAY_COLUMNS):
                raise ValidationError(f"{path.name}:{n}", f"expected {len(DELAY_COLUMNS)} fields")
            try:
                kind = DelayKind(row[0])
            except ValueError:
                raise ValidationError(f"{path.name}:{n}.kind", f"unknown delay kind {row[0]!r}") from None
            out.append(DelaySample(kind, _num(path, n, "value_ms", row[1]),
                                   _num(path, n, "timestamp_ms", row[2]), row[3]))
    return out


def write_sequences(path: Path, accepted: dict, discarded: dict | None = None) -> None:
    discarded = discarded or {}
    rows = []
    for vid, pairs in accepted.items():
        rows += [(vid, t, s, 1) for t, s in pairs]
    for vid, pairs in discarded.items():
        rows += [(vid, t, s, 0) for t, s in pairs]
    rows.sort(key=lambda r: (r[0], r[1], r[2]))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SEQUENCE_COLUMNS)
        for vid, t, s, ok in rows:
            w.writerow([vid, repr(float(t)), int(s), ok])


def read_sequences(path: Path) -> tuple[dict, dict]:
    path = Path(path)
    accepted: dict[str, list] = {}
    discarded: dict[str, list] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        _check_header(path, next(reader, None), SEQUENCE_COLUMNS)
        for n, row in enumerate(reader, start=2):
            if len(row) != len(SEQUENCE_COLUMNS):
                raise ValidationError(f"{path.name}:{n}", f"expected {len(SEQUENCE_COLUMNS)} fields")
            target = accepted if _num(path, n, "accepted", row[3], int) else discarded
            target.setdefault(row[0], []).append(
                (_num(path, n, "t_ms", row[1]), _num(path, n, "global_sequence", row[2], int)))
    return accepted, discarded


def write_lyapunov(path: Path, t, v) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LYAPUNOV_COLUMNS)
        for a, b in zip(t, v):
            w.writerow([repr(float(a)), repr(float(b))])


def read_lyapunov(path: Path) -> tuple[np.ndarray, np.ndarray]:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        _check_header(path, next(reader, None), LYAPUNOV_COLUMNS)
        rows = [(_num(path, n, "t_s", r[0]), _num(path, n, "V", r[1])) for n, r in enumerate(reader, start=2)]
    arr = np.array(rows, dtype=float).reshape(-1, 2)
    return arr[:, 0], arr[:, 1]


def merge_agent_outputs(out_dir: Path) -> list[str]:
    """Fold per-agent files from a live run into the canonical artifacts; returns vehicle ids."""
    out_dir = Path(out_dir)
    traj_files = sorted(out_dir.glob("trajectory_*.csv"))
    if not traj_files:
        raise FileNotFoundError(f"no per-agent trajectories in {out_dir}")
    per_vehicle = {}
    for f in traj_files:
        with open(f, newline="") as fh:
            reader = csv.reader(fh)
            _check_header(f, next(reader, None), TRAJECTORY_COLUMNS)
            per_vehicle[f.stem.removeprefix("trajectory_")] = list(reader)
    ids = sorted(per_vehicle)
    steps = min(len(r) for r in per_vehicle.values())
    with open(out_dir / "trajectory.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRAJECTORY_COLUMNS)
        for k in range(steps):
            t = per_vehicle[ids[0]][k][0]
            for vid in ids:
                row = list(per_vehicle[vid][k])
                row[0] = t  # agents share a start instant and step size
                w.writerow(row)
    delays, accepted, discarded = [], {}, {}
    for vid in ids:
        summary_path = out_dir / f"agent_{vid}.json"
        if not summary_path.exists():
            continue
        s = json.loads(summary_path.read_text())
        delays += [DelaySample(DelayKind.STATE_RTT, v, t, vid) for t, v in s["state_rtt"]]
        recv = s["received_ms"]
        delays += [DelaySample(DelayKind.TTP, v, t, vid) for t, v in zip(recv[1:], ttp_series(recv))]
        delays += [DelaySample(DelayKind.WS_ACK, v, t, vid) for t, v in s.get("ws_ack", [])]
        delays += [DelaySample(DelayKind.TRANSPORT_RTT, v, t, vid) for t, v in s.get("transport_rtt", [])]
        accepted[vid] = [tuple(x) for x in s["accepted"]]
        discarded[vid] = [tuple(x) for x in s["discarded"]]
    write_delays(out_dir / "delays.csv", delays)
    write_sequences(out_dir / "sequence.csv", accepted, discarded)
    return ids
