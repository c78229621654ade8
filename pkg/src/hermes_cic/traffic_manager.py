"""Traffic manager: subscription registry, status ingestion and periodic fan-out.

:class:`Registry` holds the state and is transport-agnostic. :class:`TrafficManager`
binds it to sessions (anything with ``send``/``close`` and the endpoint
callbacks from :mod:`hermes_cic.net_harness`). :func:`serve` runs it on
real websockets.
"""

from __future__ import annotations

import asyncio
import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from .errors import DecodeError, ProtocolViolation, ValidationError
from .protocol import (
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
    with_status,
)

log = logging.getLogger(__name__)

DEFAULT_RATE_HZ = 20.0
DEFAULT_STALE_MS = 500.0


@dataclass
class MobileNodeRecord:
    id: str
    name: str
    latest: StatusMessage | None = None
    last_seen_ms: float | None = None
    last_accepted_local_sequence: int | None = None
    stale: bool = False

    @property
    def is_monitor(self) -> bool:
        return self.latest is not None and self.latest.vehicle_type is VehicleType.MONITOR


class Registry:
    """All mutations go through one owner; callers serialise access."""

    def __init__(self, broadcast_rate_hz: float = DEFAULT_RATE_HZ):
        if not broadcast_rate_hz > 0:
            raise ValueError("broadcast_rate_hz must be > 0")
        self.broadcast_rate_hz = float(broadcast_rate_hz)
        self.records: dict[str, MobileNodeRecord] = {}
        self.counter = SequenceCounter()
        self.control_side_info: dict = {}

    @property
    def broadcast_interval_ms(self) -> float:
        return 1000.0 / self.broadcast_rate_hz

    def handle_subscribe(self, request: SubscriptionRequest) -> SubscriptionAck:
        if request.id in self.records:
            return SubscriptionAck(False, f"id {request.id!r} already subscribed")
        self.records[request.id] = MobileNodeRecord(request.id, request.name)
        return SubscriptionAck(True)

    def handle_status(self, node_id: str, msg: StatusMessage, now_ms: float) -> bool:
        """Apply ``msg`` if its local sequence is newer; returns whether it was applied."""
        rec = self.records.get(node_id)
        if rec is None:
            raise ProtocolViolation(f"status from unsubscribed id {node_id!r}")
        if msg.vehicle_name != rec.name:
            raise ProtocolViolation(
                f"status names {msg.vehicle_name!r} but session subscribed as {rec.name!r}"
            )
        if not accept_packet(rec.last_accepted_local_sequence, msg.local_sequence):
            return False
        rec.latest = msg
        rec.last_accepted_local_sequence = msg.local_sequence
        if rec.last_seen_ms is None or now_ms > rec.last_seen_ms:
            rec.last_seen_ms = now_ms
        rec.stale = False
        return True

    def remove(self, node_id: str) -> None:
        self.records.pop(node_id, None)

    def stale_check(self, now_ms: float, timeout_ms: float = DEFAULT_STALE_MS) -> list[str]:
        if not timeout_ms > self.broadcast_interval_ms:
            raise ValueError("timeout_ms must exceed the broadcast interval")
        out = []
        for rec in self.records.values():
            if rec.last_seen_ms is not None and now_ms - rec.last_seen_ms > timeout_ms:
                rec.stale = True
                out.append(rec.id)
        return sorted(out)

    def set_control_side_info(self, key: str, value) -> None:
        if value is None:
            self.control_side_info.pop(key, None)
        else:
            self.control_side_info[key] = value

    def broadcast_tick(self, wall_ms: float) -> TrafficUpdate | None:
        """Snapshot every record into a fresh update; ``None`` with no subscribers."""
        if not self.records:
            return None
        vehicles = []
        for node_id in sorted(self.records):
            rec = self.records[node_id]
            if rec.latest is None or rec.is_monitor:
                continue
            status = ConnectionStatus.INACTIVE if rec.stale else ConnectionStatus.ACTIVE
            vehicles.append(with_status(rec.latest, status))
        return TrafficUpdate(
            connected_nodes=len(self.records),
            global_sequence=self.counter.next(),
            global_timestamp_ms=max(float(wall_ms), 0.0),
            control_side_info=dict(self.control_side_info),
            vehicles=tuple(vehicles),
        )


def _monotonic_ms() -> float:
    return time.monotonic() * 1000.0


def _wall_ms() -> float:
    return time.time() * 1000.0


class TrafficManager:
    """Registry plus session bookkeeping.

    ``monotonic_ms`` drives staleness and interval logging; ``wall_ms``
    stamps outgoing updates.
    """

    def __init__(self, rate_hz: float = DEFAULT_RATE_HZ, stale_ms: float = DEFAULT_STALE_MS,
                 monotonic_ms: Callable[[], float] = _monotonic_ms,
                 wall_ms: Callable[[], float] = _wall_ms):
        self.registry = Registry(rate_hz)
        self.stale_ms = float(stale_ms)
        if not self.stale_ms > self.registry.broadcast_interval_ms:
            raise ValueError("stale_ms must exceed the broadcast interval")
        self.monotonic_ms = monotonic_ms
        self.wall_ms = wall_ms
        self.sessions: dict[object, str | None] = {}
        self.events: list[dict] = []
        self.broadcast_times_ms: list[float] = []
        self.violations = 0
        self.discards = 0

    def _event(self, kind: str, **fields) -> None:
        entry = {"t_ms": self.monotonic_ms(), "event": kind, **fields}
        self.events.append(entry)
        log.info(json.dumps(entry, default=str))

    def connect(self, session) -> None:
        self.sessions[session] = None
        session.on_message = lambda data, s=session: self.receive(s, data)
        session.on_disconnect = lambda s=session: self.disconnect(s)

    def disconnect(self, session) -> None:
        if session not in self.sessions:
            return
        node_id = self.sessions.pop(session)
        if node_id is not None:
            self.registry.remove(node_id)
            self._event("disconnect", id=node_id)

    def _violation(self, session, reason: str) -> None:
        self.violations += 1
        self._event("protocol_violation", id=self.sessions.get(session), reason=reason)
        self.disconnect(session)
        session.close()

    def receive(self, session, data: bytes) -> None:
        if session not in self.sessions:
            return
        try:
            msg = decode(data)
        except (DecodeError, ValidationError) as exc:
            self._violation(session, f"undecodable frame: {exc}")
            return
        node_id = self.sessions[session]
        if isinstance(msg, SubscriptionRequest):
            if node_id is not None:
                self._violation(session, "second subscription on one session")
                return
            ack = self.registry.handle_subscribe(msg)
            session.send(encode(ack))
            if ack.accepted:
                self.sessions[session] = msg.id
                self._event("subscribe", id=msg.id, name=msg.name)
            else:
                self._event("subscribe_rejected", id=msg.id, reason=ack.reason)
                del self.sessions[session]
                session.close()
        elif isinstance(msg, StatusMessage):
            if node_id is None:
                self._violation(session, "status before subscription")
                return
            try:
                applied = self.registry.handle_status(node_id, msg, self.monotonic_ms())
            except ProtocolViolation as exc:
                self._violation(session, str(exc))
                return
            if not applied:
                self.discards += 1
                self._event("discard", id=node_id, local_sequence=msg.local_sequence)
        else:
            self._violation(session, f"unexpected {type(msg).__name__} from a client")

    def tick(self) -> TrafficUpdate | None:
        """Staleness sweep, then one snapshot serialised once and sent to every session."""
        now = self.monotonic_ms()
        was_stale = {r.id for r in self.registry.records.values() if r.stale}
        for node_id in self.registry.stale_check(now, self.stale_ms):
            if node_id not in was_stale:
                self._event("stale", id=node_id)
        update = self.registry.broadcast_tick(self.wall_ms())
        if update is None:
            return None
        self.broadcast_times_ms.append(now)
        payload = encode(update)
        failed = []
        for session, node_id in list(self.sessions.items()):
            if node_id is None:
                continue
            try:
                session.send(payload)
            except Exception as exc:  # one bad session must not stall the rest
                failed.append((session, exc))
        for session, exc in failed:
            self._event("send_failed", id=self.sessions.get(session), error=str(exc))
            self.disconnect(session)
            session.close()
        return update

    def set_control_side_info(self, key: str, value) -> None:
        self.registry.set_control_side_info(key, value)
        self._event("control_side_info", key=key, value=value)

    def summary(self) -> dict:
        return {
            "broadcasts": len(self.broadcast_times_ms),
            "protocol_violations": self.violations,
            "discards": self.discards,
            "broadcast_times_ms": list(self.broadcast_times_ms),
            "events": list(self.events),
        }


def parse_bind(bind: str) -> tuple[str, int]:
    host, _, port = bind.rpartition(":")
    return host or "127.0.0.1", int(port)


async def serve(bind: str = "127.0.0.1:8765", rate_hz: float = DEFAULT_RATE_HZ,
                stale_ms: float = DEFAULT_STALE_MS, duration_s: float | None = None,
                out_dir: str | Path | None = None, control_side_info: dict | None = None,
                announce: Callable[[str], None] = print) -> dict:
    """Run the manager on websockets until ``duration_s`` elapses (or forever)."""
    from websockets.asyncio.server import serve as ws_serve

    from .net_harness import SocketEndpoint

    manager = TrafficManager(rate_hz, stale_ms)
    for key, value in (control_side_info or {}).items():
        manager.set_control_side_info(key, value)

    async def handler(ws):
        ep = SocketEndpoint(ws, "session")
        manager.connect(ep)
        await ep.run()
        manager.disconnect(ep)

    host, port = parse_bind(bind)
    loop = asyncio.get_running_loop()
    async with ws_serve(handler, host, port) as server:
        bound = server.sockets[0].getsockname()[1]
        announce(f"listening ws://{host}:{bound}")
        period = 1.0 / rate_hz
        start = loop.time()
        k = 0
        while duration_s is None or loop.time() - start < duration_s:
            k += 1
            # Absolute schedule so ticks do not drift with processing time.
            await asyncio.sleep(max(0.0, start + k * period - loop.time()))
            manager.tick()
    summary = manager.summary()
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "manager.json").write_text(json.dumps(summary, indent=1, default=str))
    return summary
