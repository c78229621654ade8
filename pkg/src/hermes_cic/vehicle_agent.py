"""Mobile-node client: status sender, update receiver and local control loop.

:class:`VehicleAgent` is transport-agnostic; it turns local state into
status messages, ingests traffic updates and computes the commanded
acceleration. :func:`run_live` wires it to a websocket connection.
"""

from __future__ import annotations

import asyncio
import csv
import json
import logging
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .control_core import (
    ControllerParams,
    Neighbor,
    SpacingPolicy,
    VehicleState,
    control_input,
    desired_gap,
)
from .errors import DecodeError, ValidationError
from .junction import (
    JunctionGeometry,
    PlatoonOrder,
    VehicleSpec,
    assign_crossing_order,
    gnss_fields,
    in_cooperation_zone,
    progress_from_gnss,
)
from .protocol import (
    PRIORITY_KEY,
    ConnectionStatus,
    SequenceCounter,
    StatusMessage,
    SubscriptionAck,
    SubscriptionRequest,
    TrafficUpdate,
    VehicleType,
    accept_packet,
    decode,
    encode,
)

log = logging.getLogger(__name__)

EXIT_REJECTED = 3


@dataclass(frozen=True)
class AgentConfig:
    id: str
    name: str
    params: ControllerParams
    spacing: SpacingPolicy
    spec: VehicleSpec
    junction: JunctionGeometry = JunctionGeometry()
    vehicle_type: VehicleType = VehicleType.AUTONOMOUS
    send_rate_hz: float = 20.0
    control_rate_hz: float = 100.0
    # "chain", "complete", or explicit undirected pairs of vehicle names.
    topology: str | tuple[tuple[str, str], ...] = "chain"
    expected_vehicles: int | None = None
    stale_ms: float = 500.0
    safe_decel_mps2: float = -2.0
    # Extrapolate neighbours to "now" with their reported speed; off = pure hold.
    neighbor_prediction: bool = True

    def __post_init__(self):
        if not (self.send_rate_hz > 0 and self.control_rate_hz > 0):
            raise ValidationError("rates", "send and control rates must be > 0")
        if not self.safe_decel_mps2 <= 0:
            raise ValidationError("safe_decel_mps2", "must be <= 0")
        if isinstance(self.topology, str) and self.topology not in ("chain", "complete"):
            raise ValidationError("topology", f"unknown topology {self.topology!r}")


@dataclass(frozen=True)
class TrafficSnapshot:
    update: TrafficUpdate
    received_ms: float


@dataclass
class AgentLog:
    state_rtt: list[tuple[float, float]] = field(default_factory=list)
    received_ms: list[float] = field(default_factory=list)
    accepted: list[tuple[float, int]] = field(default_factory=list)
    discarded: list[tuple[float, int]] = field(default_factory=list)
    warnings: list[tuple[float, str]] = field(default_factory=list)
    ws_ack: list[tuple[float, float]] = field(default_factory=list)
    transport_rtt: list[tuple[float, float]] = field(default_factory=list)
    fallback_ticks: int = 0
    decode_errors: int = 0


class VehicleAgent:
    def __init__(self, config: AgentConfig):
        self.config = config
        self.local_seq = SequenceCounter()
        self.snapshot: TrafficSnapshot | None = None
        self.order: PlatoonOrder | None = None
        self._order_priority = None
        self.last_command = 0.0
        self.subscribed: bool | None = None
        self.reject_reason = ""
        self.log = AgentLog()
        self._last_echo_seq: int | None = None
        self._mode = "waiting"
        self._seen_self = False

    @property
    def mode(self) -> str:
        """``waiting``, ``control``, ``fallback`` or ``hold``; set by the last control tick."""
        return self._mode

    def subscription(self) -> SubscriptionRequest:
        return SubscriptionRequest(self.config.id, self.config.name)

    def reconnect(self) -> None:
        """New session: local sequence restarts at zero and old echoes are forgotten."""
        self.local_seq.reset()
        self.subscribed = None
        self._last_echo_seq = None
        self._seen_self = False

    def sender_tick(self, state: VehicleState, now_ms: float) -> StatusMessage:
        cfg = self.config
        g = gnss_fields(state.progress_m, state.speed_mps, cfg.spec, cfg.junction)
        return StatusMessage(
            vehicle_type=cfg.vehicle_type,
            vehicle_name=cfg.name,
            connection_status=ConnectionStatus.ACTIVE,
            latency_ms=self._latest_rtt(),
            local_timestamp_ms=now_ms,
            local_sequence=self.local_seq.next(),
            **g,
        )

    def _latest_rtt(self) -> float:
        return self.log.state_rtt[-1][1] if self.log.state_rtt else 0.0

    def handle_frame(self, data: bytes, now_ms: float) -> None:
        try:
            msg = decode(data)
        except (DecodeError, ValidationError) as exc:
            self.log.decode_errors += 1
            log.warning("%s: dropped undecodable frame: %s", self.config.name, exc)
            return
        if isinstance(msg, TrafficUpdate):
            self.on_traffic_update(msg, now_ms)
        elif isinstance(msg, SubscriptionAck):
            self.subscribed = msg.accepted
            self.reject_reason = msg.reason
        else:
            log.warning("%s: ignoring %s from manager", self.config.name, type(msg).__name__)

    def on_traffic_update(self, update: TrafficUpdate, now_ms: float) -> bool:
        self.log.received_ms.append(now_ms)
        last = None if self.snapshot is None else self.snapshot.update.global_sequence
        if not accept_packet(last, update.global_sequence):
            self.log.discarded.append((now_ms, update.global_sequence))
            return False
        self.snapshot = TrafficSnapshot(update, now_ms)
        self.log.accepted.append((now_ms, update.global_sequence))
        rtt = self.measure_state_rtt(update, now_ms)
        if rtt is not None:
            echo = update.find(self.config.name)
            if self._last_echo_seq is None or echo.local_sequence > self._last_echo_seq:
                self._last_echo_seq = echo.local_sequence
                self.log.state_rtt.append((now_ms, rtt))
        return True

    def measure_state_rtt(self, update: TrafficUpdate, now_ms: float) -> float | None:
        echo = update.find(self.config.name)
        if echo is None:
            return None
        return max(now_ms - echo.local_timestamp_ms, 0.0)

    def _fleet_progress(self, update: TrafficUpdate, now_ms: float) -> dict[str, tuple[float, float, StatusMessage]]:
        cfg = self.config
        out = {}
        for msg in update.vehicles:
            if msg.vehicle_type is VehicleType.MONITOR:
                continue
            p = progress_from_gnss(msg.proximity_m, msg.gnss_lat, msg.gnss_lon,
                                   msg.gnss_heading, cfg.junction)
            v = msg.speed_mps
            if cfg.neighbor_prediction:
                p += v * max(now_ms - msg.local_timestamp_ms, 0.0) / 1000.0
            out[msg.vehicle_name] = (p, v, msg)
        return out

    def _neighbor_names(self, order: PlatoonOrder) -> list[str]:
        me = self.config.name
        topo = self.config.topology
        if topo == "complete":
            return [n for n in order.ranks if n != me]
        if topo == "chain":
            r = order.rank(me)
            return [n for n, k in order.ranks.items() if abs(k - r) == 1]
        return sorted({b if a == me else a for a, b in topo if me in (a, b)} & set(order.ranks))

    def control_tick(self, state: VehicleState, now_ms: float) -> float:
        cfg = self.config
        snap = self.snapshot
        if snap is None:
            self._mode = "waiting"
            return 0.0
        update = snap.update
        if update.find(cfg.name) is None:
            if not self._seen_self:
                # Our first status has not made it into a broadcast yet.
                self._mode = "waiting"
                return 0.0
            self._mode = "hold"
            self.log.warnings.append((now_ms, "own status missing from snapshot"))
            log.warning("%s: own status missing from snapshot %d", cfg.name, update.global_sequence)
            return self.last_command
        self._seen_self = True
        fleet = self._fleet_progress(update, now_ms)
        own = VehicleState(state.progress_m, state.speed_mps)
        priority = update.control_side_info.get(PRIORITY_KEY)
        if self.order is None or priority != self._order_priority:
            in_zone = {n: VehicleState(p, v) for n, (p, v, _) in fleet.items()
                       if n != cfg.name and in_cooperation_zone(VehicleState(p, v), cfg.junction)}
            if in_cooperation_zone(own, cfg.junction):
                in_zone[cfg.name] = own
            if cfg.name not in in_zone or (cfg.expected_vehicles is not None
                                           and len(in_zone) < cfg.expected_vehicles):
                self._mode = "waiting"
                return 0.0
            self.order = assign_crossing_order(in_zone, priority)
            self._order_priority = priority
        order = self.order
        names = self._neighbor_names(order)
        if not names:
            self._mode = "waiting"
            return 0.0
        stale = now_ms - snap.received_ms > cfg.stale_ms
        view = []
        for n in names:
            entry = fleet.get(n)
            if entry is None or entry[2].connection_status is ConnectionStatus.INACTIVE:
                stale = True
                break
            p, v, _ = entry
            gap = desired_gap(cfg.spacing, own.speed_mps, order.rank(n) - order.rank(cfg.name))
            view.append(Neighbor(n, p, v, gap))
        if stale:
            self._mode = "fallback"
            self.log.fallback_ticks += 1
            u = cfg.safe_decel_mps2 if own.speed_mps > 0 else 0.0
        else:
            self._mode = "control"
            u = control_input(own, view, cfg.params)
        self.last_command = u
        return u


# Live runner over websockets.

TRAJ_FIELDS = ["t_s", "vehicle_id", "p_m", "v_mps", "u_mps2", "e_pred_m", "in_ca", "global_seq_used"]


def _wall_ms() -> float:
    return time.time() * 1000.0


async def _sleep_until_wall(target_ms: float) -> None:
    delay = (target_ms - _wall_ms()) / 1000.0
    if delay > 0:
        await asyncio.sleep(delay)


async def _connect_and_subscribe(url: str, agent: VehicleAgent, timeout_s: float = 5.0):
    from websockets.asyncio.client import connect

    from .net_harness import SocketEndpoint

    ws = await connect(url)
    ep = SocketEndpoint(ws, agent.config.name)
    ep.on_message = lambda data: agent.handle_frame(data, _wall_ms())
    reader = asyncio.ensure_future(ep.run())
    ep.send(encode(agent.subscription()))
    deadline = time.monotonic() + timeout_s
    while agent.subscribed is None and ep.connected and time.monotonic() < deadline:
        await asyncio.sleep(0.002)
    return ep, reader


async def run_live(config: AgentConfig, url: str, initial: VehicleState, *, mode: str = "sim",
                   start_at_ms: float | None = None, duration_s: float = 30.0, dt_s: float = 0.01,
                   input_clamp_mps2: float | None = 4.0, out_dir: str | Path | None = None) -> int:
    """Run one agent against a live manager; returns a process exit code.

    ``mode="sim"`` integrates the local double integrator at ``dt_s``.
    ``mode="live"`` reads own-state rows (trajectory CSV schema) from stdin
    and writes the commanded acceleration for each to stdout.
    Physics and control start at ``start_at_ms`` (epoch ms) so several
    processes can share one time origin; until then the initial state is
    reported without moving.
    """
    agent = VehicleAgent(config)
    ep, reader = await _connect_and_subscribe(url, agent)
    if not agent.subscribed:
        print(f"{config.name}: subscription rejected: {agent.reject_reason or 'no ack'}",
              file=sys.stderr)
        reader.cancel()
        return EXIT_REJECTED
    if mode == "live":
        code = await _run_stdin_feed(agent, ep)
        reader.cancel()
        return code

    send_every = max(1, round(1.0 / (config.send_rate_hz * dt_s)))
    control_every = max(1, round(1.0 / (config.control_rate_hz * dt_s)))
    start = start_at_ms if start_at_ms is not None else _wall_ms()
    state = initial
    # Announce the initial state while waiting for the common start.
    while _wall_ms() < start:
        ep.send(encode(agent.sender_tick(state, _wall_ms())))
        await asyncio.sleep(min(1.0 / config.send_rate_hz, max(0.0, (start - _wall_ms()) / 1000.0)))
    rows = []
    probe = asyncio.ensure_future(_probe_transport(lambda: ep, agent))
    n_steps = int(round(duration_s / dt_s))
    u = 0.0
    for k in range(n_steps):
        await _sleep_until_wall(start + k * dt_s * 1000.0)
        now = _wall_ms()
        if not ep.connected:
            agent.log.warnings.append((now, "manager connection lost"))
            ep, reader = await _reconnect(url, agent)
            if ep is None:
                break
        if k % send_every == 0:
            ep.send(encode(agent.sender_tick(state, now)))
        if k % control_every == 0:
            u = agent.control_tick(state, now)
        if input_clamp_mps2 is not None:
            u = min(max(u, -input_clamp_mps2), input_clamp_mps2)
        seq = -1 if agent.snapshot is None else agent.snapshot.update.global_sequence
        lo, hi = -config.junction.ca_half_length_m - config.spec.length_m, config.junction.ca_half_length_m
        rows.append([round(k * dt_s, 6), config.id, state.progress_m, state.speed_mps, u, "",
                     int(lo < state.progress_m < hi), seq])
        v = state.speed_mps + u * dt_s
        state = VehicleState(state.progress_m + v * dt_s, v, u)
    probe.cancel()
    await ep.flush()
    ep.close()
    reader.cancel()
    if out_dir is not None:
        write_agent_outputs(Path(out_dir), agent, rows)
    return 0


async def _probe_transport(current, agent: VehicleAgent, period_s: float = 0.5) -> None:
    """Sample websocket ping/pong time and the kernel TCP RTT while the run lasts."""
    while True:
        await asyncio.sleep(period_s)
        ep = current()
        if not ep.connected:
            continue
        t0 = time.monotonic()
        try:
            pong = await ep.ws.ping()
            await asyncio.wait_for(pong, timeout=period_s)
        except Exception:
            continue
        now = _wall_ms()
        agent.log.ws_ack.append((now, (time.monotonic() - t0) * 1000.0))
        rtt = ep.tcp_rtt_ms()
        if rtt is not None:
            agent.log.transport_rtt.append((now, rtt))


async def _reconnect(url: str, agent: VehicleAgent, attempts: int = 5):
    for k in range(attempts):
        agent.reconnect()
        try:
            ep, reader = await _connect_and_subscribe(url, agent)
        except OSError:
            await asyncio.sleep(0.1 * 2**k)
            continue
        if agent.subscribed:
            return ep, reader
        reader.cancel()
        await asyncio.sleep(0.1 * 2**k)
    return None, None


async def _run_stdin_feed(agent: VehicleAgent, ep) -> int:
    loop = asyncio.get_running_loop()
    reader = csv.DictReader(iter(sys.stdin.readline, ""))
    while True:
        row = await loop.run_in_executor(None, next, reader, None)
        if row is None:
            break
        state = VehicleState(float(row["p_m"]), float(row["v_mps"]))
        now = _wall_ms()
        ep.send(encode(agent.sender_tick(state, now)))
        u = agent.control_tick(state, now)
        print(f"{row['t_s']},{agent.config.id},{u!r}", flush=True)
    await ep.flush()
    ep.close()
    return 0


def write_agent_outputs(out: Path, agent: VehicleAgent, rows: Sequence[list]) -> None:
    out.mkdir(parents=True, exist_ok=True)
    name = agent.config.id
    with open(out / f"trajectory_{name}.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRAJ_FIELDS)
        w.writerows(rows)
    lg = agent.log
    summary = {
        "id": name,
        "state_rtt": lg.state_rtt,
        "received_ms": lg.received_ms,
        "accepted": lg.accepted,
        "discarded": lg.discarded,
        "warnings": lg.warnings,
        "ws_ack": lg.ws_ack,
        "transport_rtt": lg.transport_rtt,
        "fallback_ticks": lg.fallback_ticks,
        "decode_errors": lg.decode_errors,
        "order": None if agent.order is None else agent.order.ids_in_order(),
    }
    (out / f"agent_{name}.json").write_text(json.dumps(summary, default=_json_default))


def _json_default(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return str(obj)
