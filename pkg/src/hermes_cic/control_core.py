"""Finite-time distributed formation controller for a virtual platoon.

Each vehicle applies

    u_i = -sum_j sig(p_i - p_j - p*_ij)^(2a/(1+a)) - sum_j sig(v_i - v_j)^a

over its communication neighbours j, with ``sig(x)^a = sign(x)|x|^a``.
Gaps follow a headway spacing policy scaled by the signed crossing-rank
offset between the two vehicles.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Hashable, Iterable, Sequence

import numpy as np

from .errors import (
    ConfigurationError,
    DiagnosticInvalidError,
    DomainError,
    InsufficientDataError,
)


class SpacingMode(str, enum.Enum):
    HEADWAY_LITERAL = "headway_literal"
    CONSTANT_GAP = "constant_gap"


@dataclass(frozen=True)
class ControllerParams:
    alpha: float

    def __post_init__(self):
        if not (math.isfinite(self.alpha) and 0.0 < self.alpha < 1.0):
            raise DomainError(f"alpha must lie strictly inside (0, 1), got {self.alpha}")

    @property
    def position_exponent(self) -> float:
        """Exponent 2a/(1+a) applied to gap errors."""
        return 2.0 * self.alpha / (1.0 + self.alpha)


@dataclass(frozen=True)
class SpacingPolicy:
    """Desired gap ``r + h*v`` per crossing-rank step.

    In ``CONSTANT_GAP`` mode the speed term uses ``reference_speed_mps``
    (frozen at cooperation-zone entry) so gaps are constant and
    antisymmetric between any two vehicles.
    """

    standstill_gap_m: float
    headway_s: float
    mode: SpacingMode = SpacingMode.HEADWAY_LITERAL
    reference_speed_mps: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "mode", SpacingMode(self.mode))
        if not (math.isfinite(self.standstill_gap_m) and self.standstill_gap_m > 0):
            raise DomainError("standstill_gap_m must be > 0")
        if not (math.isfinite(self.headway_s) and self.headway_s >= 0):
            raise DomainError("headway_s must be >= 0")
        if self.mode is SpacingMode.CONSTANT_GAP:
            if self.reference_speed_mps is None or not math.isfinite(self.reference_speed_mps):
                raise DomainError("constant_gap mode needs a finite reference_speed_mps")


@dataclass(frozen=True)
class VehicleState:
    progress_m: float
    speed_mps: float
    input_mps2: float = 0.0

    def __post_init__(self):
        for name in ("progress_m", "speed_mps", "input_mps2"):
            if not math.isfinite(getattr(self, name)):
                raise DomainError(f"{name} must be finite")


@dataclass(frozen=True)
class Neighbor:
    """What vehicle i knows about one neighbour j."""

    vehicle_id: Hashable
    progress_m: float
    speed_mps: float
    desired_gap_m: float


NeighborView = Sequence[Neighbor]


def sig(x: float, alpha: float) -> float:
    """Signed power ``sign(x) * |x|**alpha``."""
    if not math.isfinite(x):
        raise DomainError(f"sig argument must be finite, got {x}")
    if not (math.isfinite(alpha) and alpha > 0):
        raise DomainError(f"sig exponent must be > 0, got {alpha}")
    if x == 0.0:
        return 0.0
    return math.copysign(abs(x) ** alpha, x)


def desired_gap(policy: SpacingPolicy, follower_speed: float, rank_offset: int) -> float:
    """Signed desired gap ``(n_j - n_i) * (r + h*v)``.

    ``rank_offset`` is the crossing-rank of the neighbour minus that of the
    vehicle computing the gap.
    """
    if rank_offset == 0:
        raise DomainError("rank_offset must be non-zero (self-gap undefined)")
    if policy.mode is SpacingMode.CONSTANT_GAP:
        speed = policy.reference_speed_mps
    else:
        speed = follower_speed
    return rank_offset * (policy.standstill_gap_m + policy.headway_s * speed)


def gap_error(own_progress: float, neighbor: Neighbor) -> float:
    return own_progress - neighbor.progress_m - neighbor.desired_gap_m


def control_input(state: VehicleState, neighbors: NeighborView, params: ControllerParams) -> float:
    """Commanded acceleration for one vehicle.

    Neighbour contributions are accumulated in ascending vehicle-id order so
    that a run is bit-reproducible regardless of how the view was built.
    """
    if not neighbors:
        raise ConfigurationError("control_input needs at least one neighbour")
    beta = params.position_exponent
    alpha = params.alpha
    total = 0.0
    for nb in sorted(neighbors, key=lambda n: n.vehicle_id):
        total -= sig(gap_error(state.progress_m, nb), beta)
        total -= sig(state.speed_mps - nb.speed_mps, alpha)
    return total


def lyapunov_value(
    edge_errors: Iterable[tuple[float, int]],
    speeds: Iterable[float],
    params: ControllerParams,
    spacing: SpacingPolicy,
    frame_speed: float = 0.0,
) -> float:
    """Energy-like function of formation errors and speeds.

    ``edge_errors`` holds ``(e_ij, a_ij)`` pairs; list each undirected edge
    once; listing both orientations doubles the potential term and the
    result is no longer non-increasing along closed-loop trajectories.
    ``frame_speed`` shifts speeds into a co-moving frame (the fleet mean
    speed is invariant in constant-gap mode).
    """
    if spacing.mode is not SpacingMode.CONSTANT_GAP:
        raise DiagnosticInvalidError(
            "lyapunov_value requires constant_gap spacing; headway gaps are time-varying"
        )
    exponent = 1.0 + params.position_exponent
    potential = 0.0
    for err, adj in edge_errors:
        if adj:
            potential += adj * abs(err) ** exponent / exponent
    kinetic = 0.0
    for v in speeds:
        kinetic += 0.5 * (v - frame_speed) ** 2
    return potential + kinetic


def _alpha_of(alpha) -> float:
    if isinstance(alpha, ControllerParams):
        return alpha.alpha
    return ControllerParams(float(alpha)).alpha


def settling_time_bound(v0: float, c: float, alpha) -> float:
    """Upper bound ``2 / (c (1-a)) * V0**((1-a)/2)`` on the settling time."""
    a = _alpha_of(alpha)
    if not (c > 0 and math.isfinite(c)):
        raise DomainError(f"c must be positive, got {c}")
    if not (v0 >= 0 and math.isfinite(v0)):
        raise DomainError(f"V0 must be non-negative, got {v0}")
    return 2.0 / (c * (1.0 - a)) * v0 ** ((1.0 - a) / 2.0)


def estimate_c(times: Sequence[float], values: Sequence[float], alpha) -> float:
    """Largest c the sampled trajectory certifies for ``dV/dt <= -c V^((1+a)/2)``.

    Uses forward differences normalised by the value at the start of each
    interval, which is what the discrete comparison argument needs. Clamped
    below at zero.
    """
    a = _alpha_of(alpha)
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    if t.shape != v.shape:
        raise ValueError("times and values must have the same length")
    if v.size < 2:
        raise InsufficientDataError("estimate_c needs at least two samples")
    if np.any(v[:-1] <= 0):
        raise DomainError("V samples must be strictly positive on the window")
    dt = np.diff(t)
    if np.any(dt <= 0):
        raise ValueError("times must be strictly increasing")
    ratio = -np.diff(v) / dt / v[:-1] ** ((1.0 + a) / 2.0)
    return max(float(ratio.min()), 0.0)
