"""Wire messages exchanged between vehicles and the traffic manager.

Every frame is one UTF-8 JSON object carrying a ``type`` discriminator:

* ``subscribe`` / ``subscribe_ack``: the subscription handshake;
* ``status``: a vehicle's own state;
* ``traffic_update``: the manager's periodic snapshot of all vehicles.

Unknown keys are ignored on decode so newer peers can add fields.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import MISSING, asdict, dataclass, field, fields, replace
from typing import Any, Union

from .errors import DecodeError, ValidationError

U64_MAX = 2**64 - 1
PRIORITY_KEY = "priority_vehicle"


class VehicleType(str, enum.Enum):
    AUTONOMOUS = "autonomous"
    HUMAN_DRIVEN_CONNECTED = "human_driven_connected"
    MONITOR = "monitor"


class ConnectionStatus(str, enum.Enum):
    ACTIVE = "active"
    INACTIVE = "inactive"


def _finite(name, value, lo=None, hi=None, hi_open=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError(name, f"expected a number, got {type(value).__name__}")
    if not math.isfinite(value):
        raise ValidationError(name, "must be finite")
    if lo is not None and value < lo:
        raise ValidationError(name, f"must be >= {lo}, got {value}")
    if hi is not None and (value >= hi if hi_open else value > hi):
        raise ValidationError(name, f"must be {'<' if hi_open else '<='} {hi}, got {value}")
    return float(value)


def _u64(name, value):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ValidationError(name, "expected an unsigned integer")
    if not 0 <= value <= U64_MAX:
        raise ValidationError(name, "outside the unsigned 64-bit range")
    return value


def _string(name, value):
    if not isinstance(value, str) or not value:
        raise ValidationError(name, "expected a non-empty string")
    return value


def _enum(name, cls, value):
    try:
        return cls(value)
    except ValueError:
        allowed = ", ".join(m.value for m in cls)
        raise ValidationError(name, f"must be one of {allowed}, got {value!r}") from None


@dataclass(frozen=True)
class StatusMessage:
    vehicle_type: VehicleType
    vehicle_name: str
    gnss_lat: float
    gnss_lon: float
    gnss_heading: float
    speed_lat: float
    speed_lon: float
    proximity_m: float
    connection_status: ConnectionStatus
    latency_ms: float
    local_timestamp_ms: float
    local_sequence: int

    def __post_init__(self):
        object.__setattr__(self, "vehicle_type", _enum("vehicle_type", VehicleType, self.vehicle_type))
        _string("vehicle_name", self.vehicle_name)
        _finite("gnss_lat", self.gnss_lat, -90.0, 90.0)
        _finite("gnss_lon", self.gnss_lon, -180.0, 180.0)
        _finite("gnss_heading", self.gnss_heading, 0.0, 360.0, hi_open=True)
        _finite("speed_lat", self.speed_lat)
        _finite("speed_lon", self.speed_lon)
        _finite("proximity_m", self.proximity_m, 0.0)
        object.__setattr__(
            self, "connection_status", _enum("connection_status", ConnectionStatus, self.connection_status)
        )
        _finite("latency_ms", self.latency_ms, 0.0)
        _finite("local_timestamp_ms", self.local_timestamp_ms, 0.0)
        _u64("local_sequence", self.local_sequence)

    @property
    def speed_mps(self) -> float:
        return math.hypot(self.speed_lat, self.speed_lon)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["vehicle_type"] = self.vehicle_type.value
        d["connection_status"] = self.connection_status.value
        return d

    @classmethod
    def from_dict(cls, d: dict, prefix: str = "") -> "StatusMessage":
        return cls(**_pick(cls, d, prefix))


@dataclass(frozen=True)
class TrafficUpdate:
    connected_nodes: int
    global_sequence: int
    global_timestamp_ms: float
    control_side_info: dict = field(default_factory=dict)
    vehicles: tuple[StatusMessage, ...] = ()

    def __post_init__(self):
        _u64("connected_nodes", self.connected_nodes)
        _u64("global_sequence", self.global_sequence)
        _finite("global_timestamp_ms", self.global_timestamp_ms, 0.0)
        if not isinstance(self.control_side_info, dict):
            raise ValidationError("control_side_info", "expected an object")
        object.__setattr__(self, "vehicles", tuple(self.vehicles))
        for k, v in enumerate(self.vehicles):
            if not isinstance(v, StatusMessage):
                raise ValidationError(f"vehicles[{k}]", "expected a status message")

    def find(self, vehicle_name: str) -> StatusMessage | None:
        for v in self.vehicles:
            if v.vehicle_name == vehicle_name:
                return v
        return None

    def to_dict(self) -> dict:
        return {
            "connected_nodes": self.connected_nodes,
            "global_sequence": self.global_sequence,
            "global_timestamp_ms": self.global_timestamp_ms,
            "control_side_info": dict(self.control_side_info),
            "vehicles": [v.to_dict() for v in self.vehicles],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrafficUpdate":
        raw = _pick(cls, d, "")
        vehicles = raw.get("vehicles", [])
        if not isinstance(vehicles, list):
            raise ValidationError("vehicles", "expected a list")
        raw["vehicles"] = tuple(
            StatusMessage.from_dict(v, f"vehicles[{k}].") if isinstance(v, dict)
            else _raise(f"vehicles[{k}]", "expected an object")
            for k, v in enumerate(vehicles)
        )
        return cls(**raw)


@dataclass(frozen=True)
class SubscriptionRequest:
    id: str
    name: str

    def __post_init__(self):
        _string("id", self.id)
        _string("name", self.name)

    def to_dict(self):
        return {"id": self.id, "name": self.name}

    @classmethod
    def from_dict(cls, d, prefix=""):
        return cls(**_pick(cls, d, prefix))


@dataclass(frozen=True)
class SubscriptionAck:
    accepted: bool
    reason: str = ""

    def __post_init__(self):
        if not isinstance(self.accepted, bool):
            raise ValidationError("accepted", "expected a boolean")
        if not isinstance(self.reason, str):
            raise ValidationError("reason", "expected a string")

    def to_dict(self):
        return {"accepted": self.accepted, "reason": self.reason}

    @classmethod
    def from_dict(cls, d, prefix=""):
        return cls(**_pick(cls, d, prefix))


Message = Union[StatusMessage, TrafficUpdate, SubscriptionRequest, SubscriptionAck]

_TYPES: dict[str, type] = {
    "status": StatusMessage,
    "traffic_update": TrafficUpdate,
    "subscribe": SubscriptionRequest,
    "subscribe_ack": SubscriptionAck,
}
_NAMES = {cls: name for name, cls in _TYPES.items()}


def _raise(fieldname, message):
    raise ValidationError(fieldname, message)


def _pick(cls, d: dict, prefix: str) -> dict:
    """Keep known fields, report missing ones with their full path."""
    out: dict[str, Any] = {}
    for f in fields(cls):
        if f.name in d:
            out[f.name] = d[f.name]
        elif f.default is MISSING and f.default_factory is MISSING:
            raise ValidationError(prefix + f.name, "missing")
    return out



def encode(message: Message) -> bytes:
    try:
        kind = _NAMES[type(message)]
    except KeyError:
        raise TypeError(f"cannot encode {type(message).__name__}") from None
    body = {"type": kind, **message.to_dict()}
    return json.dumps(body, separators=(",", ":"), allow_nan=False).encode("utf-8")


def decode(data: bytes | str) -> Message:
    if isinstance(data, (bytes, bytearray, memoryview)):
        try:
            text = bytes(data).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DecodeError(exc.start, "invalid UTF-8") from None
    else:
        text = data
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DecodeError(exc.pos, exc.msg) from None
    if not isinstance(obj, dict):
        raise DecodeError(0, "frame is not a JSON object")
    kind = obj.get("type")
    cls = _TYPES.get(kind)
    if cls is None:
        raise ValidationError("type", f"unknown message type {kind!r}")
    return cls.from_dict(obj)


def accept_packet(last_accepted_seq: int | None, incoming_seq: int) -> bool:
    """Late-predecessor rule: accept only strictly newer sequence numbers."""
    return last_accepted_seq is None or incoming_seq > last_accepted_seq


class SequenceCounter:
    """Monotone u64 counter; ``next()`` yields 0, 1, 2, ..."""

    def __init__(self, start: int = 0):
        self._next = start

    def next(self) -> int:
        value = self._next
        if value > U64_MAX:
            raise OverflowError("sequence counter exhausted the u64 range")
        self._next = value + 1
        return value

    def reset(self) -> None:
        self._next = 0

    @property
    def issued(self) -> int:
        return self._next


def next_global_sequence(counter: SequenceCounter) -> int:
    return counter.next()


def with_status(msg: StatusMessage, status: ConnectionStatus) -> StatusMessage:
    if msg.connection_status is status:
        return msg
    return replace(msg, connection_status=status)
