import pytest

from builders import status
from hermes_cic.errors import ProtocolViolation
from hermes_cic.net_harness import LatencyModel, VirtualClock, simulated_link
from hermes_cic.protocol import (
    ConnectionStatus,
    SubscriptionAck,
    SubscriptionRequest,
    TrafficUpdate,
    decode,
    encode,
)
from hermes_cic.traffic_manager import Registry, TrafficManager


class FakeSession:
    def __init__(self):
        self.sent = []
        self.closed = False
        self.on_message = self.on_disconnect = None

    def send(self, data):
        if self.closed:
            raise ConnectionError("closed")
        self.sent.append(decode(data))

    def close(self):
        self.closed = True


class Clock:
    def __init__(self):
        self.t = 0.0

    def __call__(self):
        return self.t


def subscribed(mgr, vid="1", name="fh16"):
    s = FakeSession()
    mgr.connect(s)
    mgr.receive(s, encode(SubscriptionRequest(vid, name)))
    return s


class TestRegistry:
    def test_subscribe_and_duplicate(self):
        reg = Registry()
        assert reg.handle_subscribe(SubscriptionRequest("1", "fh16")).accepted
        ack = reg.handle_subscribe(SubscriptionRequest("1", "other"))
        assert not ack.accepted and "1" in ack.reason
        reg.remove("1")
        assert reg.handle_subscribe(SubscriptionRequest("1", "fh16")).accepted

    def test_status_applied_then_discarded(self):
        reg = Registry()
        reg.handle_subscribe(SubscriptionRequest("1", "fh16"))
        assert reg.handle_status("1", status(vehicle_name="fh16", local_sequence=5), 0.0)
        assert not reg.handle_status("1", status(vehicle_name="fh16", local_sequence=5), 1.0)
        assert not reg.handle_status("1", status(vehicle_name="fh16", local_sequence=3), 2.0)
        assert reg.records["1"].latest.local_sequence == 5
        assert reg.records["1"].last_seen_ms == 0.0

    def test_status_contract(self):
        reg = Registry()
        with pytest.raises(ProtocolViolation):
            reg.handle_status("9", status(), 0.0)
        reg.handle_subscribe(SubscriptionRequest("1", "fh16"))
        with pytest.raises(ProtocolViolation):
            reg.handle_status("1", status(vehicle_name="s90"), 0.0)

    def test_broadcast_contents(self):
        reg = Registry()
        assert reg.broadcast_tick(0.0) is None
        for vid, name in [("2", "xc90"), ("1", "fh16"), ("m", "tower")]:
            reg.handle_subscribe(SubscriptionRequest(vid, name))
        reg.handle_status("2", status(vehicle_name="xc90"), 0.0)
        reg.handle_status("1", status(vehicle_name="fh16"), 0.0)
        reg.handle_status("m", status(vehicle_name="tower", vehicle_type="monitor"), 0.0)
        up = reg.broadcast_tick(123.0)
        assert up.connected_nodes == 3
        assert [v.vehicle_name for v in up.vehicles] == ["fh16", "xc90"]
        assert reg.broadcast_tick(124.0).global_sequence == up.global_sequence + 1

    def test_stale_then_resume(self):
        reg = Registry()
        reg.handle_subscribe(SubscriptionRequest("1", "fh16"))
        reg.handle_status("1", status(vehicle_name="fh16", local_sequence=0), 0.0)
        assert reg.stale_check(400.0) == []
        assert reg.stale_check(501.0) == ["1"]
        assert reg.broadcast_tick(0).vehicles[0].connection_status is ConnectionStatus.INACTIVE
        reg.handle_status("1", status(vehicle_name="fh16", local_sequence=1), 600.0)
        assert reg.broadcast_tick(0).vehicles[0].connection_status is ConnectionStatus.ACTIVE
        with pytest.raises(ValueError):
            reg.stale_check(0.0, timeout_ms=50.0)

    def test_control_side_info(self):
        reg = Registry()
        reg.handle_subscribe(SubscriptionRequest("1", "fh16"))
        reg.set_control_side_info("priority_vehicle", "s90")
        assert reg.broadcast_tick(0).control_side_info == {"priority_vehicle": "s90"}
        reg.set_control_side_info("priority_vehicle", None)
        assert reg.broadcast_tick(0).control_side_info == {}


class TestManager:
    def test_handshake_and_duplicate_rejected(self):
        mgr = TrafficManager()
        a = subscribed(mgr)
        assert a.sent == [SubscriptionAck(True)]
        b = subscribed(mgr, "1", "impostor")
        assert not b.sent[0].accepted and b.closed
        assert mgr.violations == 0 and not a.closed

    @pytest.mark.parametrize("frame", [
        b"not json", encode(status()), encode(TrafficUpdate(0, 0, 0.0)),
    ])
    def test_violations_close_session(self, frame):
        mgr = TrafficManager()
        s = FakeSession()
        mgr.connect(s)
        mgr.receive(s, frame)
        assert s.closed and mgr.violations == 1

    def test_second_subscribe_is_violation(self):
        mgr = TrafficManager()
        s = subscribed(mgr)
        mgr.receive(s, encode(SubscriptionRequest("2", "x")))
        assert s.closed and mgr.violations == 1 and "1" not in mgr.registry.records

    def test_identical_payload_to_all_and_failed_send_dropped(self):
        clock = Clock()
        mgr = TrafficManager(monotonic_ms=clock, wall_ms=clock)
        sessions = [subscribed(mgr, str(k), f"n{k}") for k in range(3)]
        for k, s in enumerate(sessions):
            mgr.receive(s, encode(status(vehicle_name=f"n{k}")))
        sessions[1].closed = True
        up = mgr.tick()
        assert sessions[0].sent[-1] == sessions[2].sent[-1] == up
        assert "1" not in mgr.registry.records
        assert mgr.tick().connected_nodes == 2

    def test_zero_subscribers_sends_nothing(self):
        mgr = TrafficManager()
        s = FakeSession()
        mgr.connect(s)
        assert mgr.tick() is None and s.sent == [] and mgr.broadcast_times_ms == []

    def test_discards_counted(self):
        mgr = TrafficManager()
        s = subscribed(mgr)
        for seq in (0, 2, 1, 2, 3):
            mgr.receive(s, encode(status(vehicle_name="fh16", local_sequence=seq)))
        assert mgr.discards == 2


def test_twenty_updates_per_second_over_simulated_links():
    clock = VirtualClock()
    mgr = TrafficManager(monotonic_ms=lambda: clock.now_ms, wall_ms=lambda: clock.now_ms)
    model = LatencyModel.parse("normal:35:10", seed=2)
    received = {}
    for k in range(3):
        server, client = simulated_link(model, clock, (f"m{k}", f"c{k}"), stream=k)
        mgr.connect(server)
        received[k] = []
        client.on_message = lambda d, k=k: received[k].append(decode(d))
        client.send(encode(SubscriptionRequest(str(k), f"n{k}")))
        client.send(encode(status(vehicle_name=f"n{k}")))
    clock.every(50_000, mgr.tick, start_us=50_000)
    clock.advance_to(10_000_000)
    for msgs in received.values():
        ups = [m for m in msgs if isinstance(m, TrafficUpdate)]
        assert 195 <= len(ups) <= 200
        seqs = [u.global_sequence for u in ups]
        assert seqs == sorted(seqs)
    assert len(mgr.broadcast_times_ms) == 200
