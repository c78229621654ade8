"""Intersection geometry and the virtual-platoon reduction.

Every vehicle is described by a signed progress coordinate along its own
trajectory: negative while approaching the trajectory midpoint, positive
after it. The conflicting area (CA) is the interval
``(-ca_half_length_m, +ca_half_length_m)`` on every trajectory; a vehicle
occupies it while ``-ca_half - L < p < ca_half``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Hashable, Iterable, Mapping, Sequence

import numpy as np

from .control_core import VehicleState
from .errors import DomainError, ValidationError

EARTH_RADIUS_M = 6_371_000.0


@dataclass(frozen=True)
class JunctionGeometry:
    roads: int = 4
    cz_radius_m: float = 250.0
    ca_half_length_m: float = 7.5
    # Arbitrary local origin; only used to synthesise plausible GNSS fields.
    origin_lat: float = 57.7
    origin_lon: float = 12.0

    def __post_init__(self):
        if self.roads < 2:
            raise ValidationError("roads", "need at least two roads")
        if not self.ca_half_length_m > 0:
            raise ValidationError("ca_half_length_m", "must be > 0")
        if not self.cz_radius_m > self.ca_half_length_m:
            raise ValidationError("cz_radius_m", "must exceed ca_half_length_m")


@dataclass(frozen=True)
class VehicleSpec:
    id: Hashable
    length_m: float
    entry_road: int = 0
    exit_road: int = 2

    def __post_init__(self):
        if not (math.isfinite(self.length_m) and self.length_m > 0):
            raise ValidationError("length_m", "must be > 0")


@dataclass(frozen=True)
class PlatoonOrder:
    ranks: Mapping[Hashable, int]

    def __post_init__(self):
        if sorted(self.ranks.values()) != list(range(1, len(self.ranks) + 1)):
            raise ValidationError("ranks", "must be a permutation of 1..N")

    def rank(self, vehicle_id) -> int:
        return self.ranks[vehicle_id]

    def ids_in_order(self) -> list:
        return sorted(self.ranks, key=self.ranks.__getitem__)


class CollisionClass(str, enum.Enum):
    TOUCHES = "touches"
    ENTERS = "enters"
    AVOIDS = "avoids"


def progress_from_distance(distance_to_center: float, approaching: bool) -> float:
    if not distance_to_center >= 0:
        raise DomainError(f"distance must be >= 0, got {distance_to_center}")
    if distance_to_center == 0:
        return 0.0
    return -distance_to_center if approaching else distance_to_center


def assign_crossing_order(
    states: Mapping[Hashable, VehicleState], priority=None
) -> PlatoonOrder:
    """Rank 1 goes to the vehicle closest to its trajectory centre.

    Ties break by vehicle id. A ``priority`` vehicle present in ``states``
    is moved to rank 1 and everyone else keeps their relative order.
    """
    ids = sorted(states, key=lambda k: (abs(states[k].progress_m), k))
    if priority is not None and priority in states:
        ids.remove(priority)
        ids.insert(0, priority)
    return PlatoonOrder({vid: rank for rank, vid in enumerate(ids, start=1)})


def in_cooperation_zone(state: VehicleState, geom: JunctionGeometry) -> bool:
    return abs(state.progress_m) <= geom.cz_radius_m


def occupancy_window(spec: VehicleSpec, geom: JunctionGeometry) -> tuple[float, float]:
    """Open interval of progress values for which the vehicle overlaps the CA."""
    return (-geom.ca_half_length_m - spec.length_m, geom.ca_half_length_m)


def ca_occupancy(state: VehicleState | float, spec: VehicleSpec, geom: JunctionGeometry) -> bool:
    p = state.progress_m if isinstance(state, VehicleState) else float(state)
    lo, hi = occupancy_window(spec, geom)
    return lo < p < hi


def _occupancy_mask(p: np.ndarray, spec: VehicleSpec, geom: JunctionGeometry) -> np.ndarray:
    lo, hi = occupancy_window(spec, geom)
    return (p > lo) & (p < hi)


def mutual_exclusion_violations(
    trajectory_log: Mapping[Hashable, tuple[Sequence[float], Sequence[float]]],
    specs: Mapping[Hashable, VehicleSpec],
    geom: JunctionGeometry,
) -> list[tuple[float, tuple]]:
    """Every ``(t, (a, b))`` at which vehicles a and b share the CA.

    ``trajectory_log`` maps vehicle id to ``(times, progress)``; all time
    grids must be identical.
    """
    ids = sorted(trajectory_log)
    if not ids:
        return []
    grid = np.asarray(trajectory_log[ids[0]][0], dtype=float)
    masks = {}
    for vid in ids:
        t, p = trajectory_log[vid]
        t = np.asarray(t, dtype=float)
        p = np.asarray(p, dtype=float)
        if t.shape != grid.shape or not np.array_equal(t, grid) or p.shape != grid.shape:
            raise ValueError(f"time grid of vehicle {vid!r} does not match")
        masks[vid] = _occupancy_mask(p, specs[vid], geom)
    out = []
    for a_idx, a in enumerate(ids):
        for b in ids[a_idx + 1:]:
            for k in np.flatnonzero(masks[a] & masks[b]):
                out.append((float(grid[k]), (a, b)))
    out.sort(key=lambda item: (item[0], item[1]))
    return out


def collision_region_trace(
    p_lead: Sequence[float],
    p_follow: Sequence[float],
    geom: JunctionGeometry,
    spec_lead: VehicleSpec,
    spec_follow: VehicleSpec,
    tolerance_m: float = 0.5,
) -> CollisionClass:
    """Classify the ``(p_lead, p_follow)`` curve against the co-occupancy box."""
    x = np.asarray(p_lead, dtype=float)
    y = np.asarray(p_follow, dtype=float)
    if x.shape != y.shape:
        raise ValueError("series must be aligned")
    (xlo, xhi) = occupancy_window(spec_lead, geom)
    (ylo, yhi) = occupancy_window(spec_follow, geom)
    inside = (x > xlo) & (x < xhi) & (y > ylo) & (y < yhi)
    if inside.any():
        return CollisionClass.ENTERS
    dx = np.maximum.reduce([xlo - x, np.zeros_like(x), x - xhi])
    dy = np.maximum.reduce([ylo - y, np.zeros_like(y), y - yhi])
    if x.size and float(np.hypot(dx, dy).min()) <= tolerance_m:
        return CollisionClass.TOUCHES
    return CollisionClass.AVOIDS


# GNSS synthesis. Road k leaves the centre on bearing 360*k/roads degrees.

def _road_bearing(road: int, geom: JunctionGeometry) -> float:
    return (360.0 * (road % geom.roads) / geom.roads) % 360.0


def gnss_fields(progress_m: float, speed_mps: float, spec: VehicleSpec, geom: JunctionGeometry) -> dict:
    """Position, heading and speed components in the status-message layout."""
    if progress_m < 0:
        bearing = _road_bearing(spec.entry_road, geom)
        heading = (bearing + 180.0) % 360.0
    else:
        bearing = _road_bearing(spec.exit_road, geom)
        heading = bearing
    dist = abs(progress_m)
    b = math.radians(bearing)
    north, east = dist * math.cos(b), dist * math.sin(b)
    lat = geom.origin_lat + math.degrees(north / EARTH_RADIUS_M)
    lon = geom.origin_lon + math.degrees(
        east / (EARTH_RADIUS_M * math.cos(math.radians(geom.origin_lat)))
    )
    h = math.radians(heading)
    return {
        "gnss_lat": lat,
        "gnss_lon": lon,
        "gnss_heading": heading,
        "speed_lat": speed_mps * math.cos(h),
        "speed_lon": speed_mps * math.sin(h),
        "proximity_m": dist,
    }


def progress_from_gnss(
    proximity_m: float, lat: float, lon: float, heading_deg: float, geom: JunctionGeometry
) -> float:
    """Signed progress: distance from ``proximity_m``, sign from heading vs. position."""
    north = math.radians(lat - geom.origin_lat) * EARTH_RADIUS_M
    east = math.radians(lon - geom.origin_lon) * EARTH_RADIUS_M * math.cos(
        math.radians(geom.origin_lat)
    )
    h = math.radians(heading_deg)
    approaching = north * math.cos(h) + east * math.sin(h) < 0
    return progress_from_distance(proximity_m, approaching)


def crossing_pairs(order: PlatoonOrder) -> Iterable[tuple]:
    """All ``(lead, follow)`` id pairs with lead ranked before follow."""
    ids = order.ids_in_order()
    for i, lead in enumerate(ids):
        for follow in ids[i + 1:]:
            yield lead, follow
