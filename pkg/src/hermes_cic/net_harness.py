"""Transports: a simulated link under a virtual clock, and real websockets.

Both expose the same endpoint surface: ``send(data)`` plus the
``on_message(data)`` and ``on_disconnect()`` callbacks. Neither loses or
duplicates messages; the simulated link delays (and optionally swaps
adjacent) deliveries according to a :class:`LatencyModel`.
"""

from __future__ import annotations

import asyncio
import enum
import heapq
import itertools
import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DomainError

log = logging.getLogger(__name__)


class DelayDistribution(str, enum.Enum):
    CONSTANT = "constant"
    NORMAL = "normal"
    LOGNORMAL = "lognormal"


@dataclass(frozen=True)
class LatencyModel:
    """One-way delay distribution in milliseconds.

    ``lognormal`` takes ``mu``/``sigma`` of the underlying normal (of log-ms).
    Samples are clamped at zero.
    """

    distribution: DelayDistribution = DelayDistribution.CONSTANT
    mean_ms: float = 0.0
    std_ms: float = 0.0
    mu: float = 0.0
    sigma: float = 0.0
    reorder_probability: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "distribution", DelayDistribution(self.distribution))
        for name in ("mean_ms", "std_ms", "mu", "sigma"):
            if not math.isfinite(getattr(self, name)):
                raise DomainError(f"{name} must be finite")
        if self.std_ms < 0 or self.sigma < 0:
            raise DomainError("spread parameters must be >= 0")
        if not 0.0 <= self.reorder_probability < 1.0:
            raise DomainError("reorder_probability must lie in [0, 1)")

    @classmethod
    def parse(cls, text: str, seed: int = 0) -> "LatencyModel":
        """``constant:100``, ``normal:35:10`` or ``lognormal:3.5:0.3``."""
        parts = text.split(":")
        kind = DelayDistribution(parts[0])
        nums = [float(x) for x in parts[1:]]
        if kind is DelayDistribution.CONSTANT:
            return cls(kind, mean_ms=nums[0] if nums else 0.0, seed=seed)
        if kind is DelayDistribution.NORMAL:
            return cls(kind, mean_ms=nums[0], std_ms=nums[1] if len(nums) > 1 else 0.0, seed=seed)
        return cls(kind, mu=nums[0], sigma=nums[1] if len(nums) > 1 else 0.0, seed=seed)

    @property
    def expected_ms(self) -> float:
        if self.distribution is DelayDistribution.LOGNORMAL:
            return math.exp(self.mu + 0.5 * self.sigma**2)
        return self.mean_ms

    def sampler(self, stream: int = 0) -> "DelaySampler":
        return DelaySampler(self, np.random.default_rng([self.seed, stream]))


class DelaySampler:
    def __init__(self, model: LatencyModel, rng: np.random.Generator):
        self.model = model
        self.rng = rng

    def sample_ms(self) -> float:
        m = self.model
        if m.distribution is DelayDistribution.CONSTANT:
            value = m.mean_ms
        elif m.distribution is DelayDistribution.NORMAL:
            value = self.rng.normal(m.mean_ms, m.std_ms)
        else:
            value = self.rng.lognormal(m.mu, m.sigma)
        return max(float(value), 0.0)

    def reorder(self) -> bool:
        p = self.model.reorder_probability
        return p > 0 and self.rng.random() < p


class _Event:
    __slots__ = ("key", "callback", "args", "cancelled")

    def __init__(self, key, callback, args):
        self.key = key
        self.callback = callback
        self.args = args
        self.cancelled = False

    def __lt__(self, other):
        return self.key < other.key

    def cancel(self):
        self.cancelled = True


DELIVERY = 0
TIMER = 1


class VirtualClock:
    """Discrete-event clock with integer-microsecond resolution.

    Events at equal timestamps fire deliveries before timers, then by
    ``(sender, seq)``, then by insertion order.
    """

    def __init__(self, start_us: int = 0):
        self._now = int(start_us)
        self._heap: list[_Event] = []
        self._counter = itertools.count()

    @property
    def now_us(self) -> int:
        return self._now

    @property
    def now_ms(self) -> float:
        return self._now / 1000.0

    def schedule(self, at_us: int, callback: Callable, *args, sender: str = "",
                 seq: int = 0, kind: int = TIMER) -> _Event:
        ev = _Event((int(at_us), kind, sender, seq, next(self._counter)), callback, args)
        heapq.heappush(self._heap, ev)
        return ev

    def every(self, period_us: int, callback: Callable, start_us: int | None = None,
              sender: str = "") -> None:
        first = self._now if start_us is None else int(start_us)

        def fire(k):
            self.schedule(first + (k + 1) * period_us, fire, k + 1, sender=sender, seq=k + 1)
            callback()

        self.schedule(first, fire, 0, sender=sender, seq=0)

    def advance(self, dt_us: int) -> int:
        return self.advance_to(self._now + int(dt_us))

    def advance_to(self, target_us: int) -> int:
        """Fire every event due at or before ``target_us``; returns how many fired."""
        target_us = int(target_us)
        if target_us < self._now:
            raise ValueError("the virtual clock cannot run backwards")
        fired = 0
        while self._heap and self._heap[0].key[0] <= target_us:
            ev = heapq.heappop(self._heap)
            if ev.cancelled:
                continue
            self._now = max(self._now, ev.key[0])
            ev.callback(*ev.args)
            fired += 1
        self._now = target_us
        return fired

    def pending(self) -> int:
        return sum(1 for ev in self._heap if not ev.cancelled)


def virtual_clock(start_us: int = 0) -> VirtualClock:
    return VirtualClock(start_us)


def _noop(*_args):
    pass


class SimulatedEndpoint:
    def __init__(self, name: str, clock: VirtualClock, sampler: DelaySampler):
        self.name = name
        self.clock = clock
        self.sampler = sampler
        self.peer: SimulatedEndpoint | None = None
        self.on_message: Callable[[bytes], None] = _noop
        self.on_disconnect: Callable[[], None] = _noop
        self.connected = True
        self._sent = 0
        self._last_due = 0
        self._last_event: _Event | None = None
        self.delays_ms: list[float] = []

    def send(self, data: bytes) -> None:
        if not self.connected:
            raise ConnectionError(f"endpoint {self.name} is closed")
        peer = self.peer
        delay_ms = self.sampler.sample_ms()
        self.delays_ms.append(delay_ms)
        due = max(self.clock.now_us + int(round(delay_ms * 1000)), self._last_due)
        ev = self.clock.schedule(due, peer._deliver, bytes(data), sender=self.name,
                                 seq=self._sent, kind=DELIVERY)
        self._sent += 1
        prev = self._last_event
        if prev is not None and not prev.cancelled and prev.key[0] >= self.clock.now_us \
                and prev in self.clock._heap and self.sampler.reorder():
            prev.args, ev.args = ev.args, prev.args
        self._last_due = due
        self._last_event = ev

    def _deliver(self, data: bytes) -> None:
        if self.connected:
            self.on_message(data)

    def close(self) -> None:
        if not self.connected:
            return
        self.connected = False
        peer = self.peer
        due = max(self.clock.now_us + int(round(self.sampler.sample_ms() * 1000)), self._last_due)
        self.clock.schedule(due, peer._peer_closed, sender=self.name, seq=self._sent, kind=DELIVERY)

    def _peer_closed(self) -> None:
        if self.connected:
            self.connected = False
            self.on_disconnect()


def simulated_link(model: LatencyModel, clock: VirtualClock,
                   names: tuple[str, str] = ("a", "b"), stream: int = 0):
    """Two connected endpoints; each direction samples delays independently."""
    a = SimulatedEndpoint(names[0], clock, model.sampler(2 * stream))
    b = SimulatedEndpoint(names[1], clock, model.sampler(2 * stream + 1))
    a.peer, b.peer = b, a
    return a, b


class SocketEndpoint:
    """Endpoint over a websockets connection.

    ``send`` never blocks: frames go to a per-endpoint queue drained by a
    writer task, so a slow peer cannot stall the caller. Call ``run()`` to
    pump incoming frames into ``on_message`` one at a time.
    """

    def __init__(self, ws, name: str = ""):
        self.ws = ws
        self.name = name
        self.on_message: Callable[[bytes], None] = _noop
        self.on_disconnect: Callable[[], None] = _noop
        self.connected = True
        self._queue: asyncio.Queue = asyncio.Queue()
        self._writer = asyncio.ensure_future(self._drain())
        self._closed_event = asyncio.Event()

    def send(self, data: bytes) -> None:
        if not self.connected:
            raise ConnectionError(f"endpoint {self.name} is closed")
        self._queue.put_nowait(data)

    async def _drain(self):
        try:
            while True:
                data = await self._queue.get()
                if data is None:
                    break
                await self.ws.send(data.decode("utf-8"))
        except Exception as exc:  # connection dropped mid-send
            log.debug("writer for %s stopped: %s", self.name, exc)
            self._mark_closed()

    async def run(self) -> None:
        try:
            async for frame in self.ws:
                data = frame.encode("utf-8") if isinstance(frame, str) else frame
                self.on_message(data)
        except Exception as exc:
            log.debug("reader for %s stopped: %s", self.name, exc)
        finally:
            self._mark_closed()

    def _mark_closed(self):
        if self.connected:
            self.connected = False
            self._queue.put_nowait(None)
            self.on_disconnect()
        self._closed_event.set()

    async def flush(self) -> None:
        while not self._queue.empty() and self.connected:
            await asyncio.sleep(0.001)

    def close(self) -> None:
        """Graceful close after queued frames are written."""
        if not self.connected:
            return
        self.connected = False
        self._queue.put_nowait(None)

        async def _finish():
            await self._writer
            await self.ws.close()
            self._closed_event.set()

        asyncio.ensure_future(_finish())

    def abort(self) -> None:
        """Drop the TCP connection without a closing handshake."""
        self.connected = False
        self._queue.put_nowait(None)
        transport = getattr(self.ws, "transport", None)
        if transport is not None:
            transport.abort()
        self._closed_event.set()

    async def wait_closed(self) -> None:
        await self._closed_event.wait()

    def tcp_rtt_ms(self) -> float | None:
        """Kernel smoothed RTT of the underlying socket (Linux only)."""
        return tcp_rtt_ms(getattr(self.ws, "transport", None))


def tcp_rtt_ms(transport) -> float | None:
    import socket
    import struct

    if transport is None or not hasattr(socket, "TCP_INFO"):
        return None
    sock = transport.get_extra_info("socket")
    if sock is None:
        return None
    try:
        raw = sock.getsockopt(socket.IPPROTO_TCP, socket.TCP_INFO, 104)
    except OSError:
        return None
    # struct tcp_info: 8 bytes of u8 fields, then u32 fields; tcpi_rtt is the 16th (usec).
    (rtt_us,) = struct.unpack_from("I", raw, 8 + 15 * 4)
    return rtt_us / 1000.0


async def loopback_socket_link(host: str = "127.0.0.1", port: int = 0):
    """Real websocket pair over loopback.

    Returns ``(server_endpoint, client_endpoint, shutdown)``; ``shutdown``
    is a coroutine function that closes both sides and the listener.
    """
    from websockets.asyncio.client import connect
    from websockets.asyncio.server import serve

    accepted: asyncio.Future = asyncio.get_running_loop().create_future()
    done = asyncio.Event()

    async def handler(ws):
        ep = SocketEndpoint(ws, "server")
        accepted.set_result(ep)
        await ep.run()
        await done.wait()

    server = await serve(handler, host, port)
    bound = server.sockets[0].getsockname()[1]
    client_ws = await connect(f"ws://{host}:{bound}")
    client = SocketEndpoint(client_ws, "client")
    server_ep = await accepted
    client_task = asyncio.ensure_future(client.run())

    async def shutdown():
        done.set()
        client.close()
        server_ep.close()
        server.close()
        await server.wait_closed()
        client_task.cancel()

    return server_ep, client, shutdown
