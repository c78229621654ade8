"""Fixed-step integration of the double-integrator fleet."""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Hashable, Sequence

import numpy as np

from .control_core import (
    ControllerParams,
    SpacingMode,
    SpacingPolicy,
    VehicleState,
    desired_gap,
    lyapunov_value,
    sig,
)
from .errors import ConfigurationError, DomainError, SimulationFault
from .junction import PlatoonOrder, occupancy_window
from .topology import CommGraph, is_connected

if TYPE_CHECKING:
    from .scenario import Scenario

log = logging.getLogger(__name__)

DIVERGENCE_SPEED_MPS = 100.0


class Integrator(str, enum.Enum):
    SEMI_IMPLICIT_EULER = "semi_implicit_euler"
    RK4 = "rk4"


@dataclass(frozen=True)
class SimConfig:
    dt_s: float = 0.01
    duration_s: float = 30.0
    integrator: Integrator = Integrator.SEMI_IMPLICIT_EULER
    input_clamp_mps2: float | None = 4.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "integrator", Integrator(self.integrator))
        if not (math.isfinite(self.dt_s) and self.dt_s > 0):
            raise DomainError("dt_s must be > 0")
        if not self.duration_s >= self.dt_s:
            raise DomainError("duration_s must be >= dt_s")
        if self.input_clamp_mps2 is not None and not self.input_clamp_mps2 > 0:
            raise DomainError("input_clamp_mps2 must be > 0 when set")

    @property
    def n_steps(self) -> int:
        return int(round(self.duration_s / self.dt_s))


@dataclass(frozen=True)
class FleetState:
    time_s: float
    ids: tuple
    vehicles: tuple[VehicleState, ...]

    def __post_init__(self):
        if len(self.ids) != len(self.vehicles):
            raise ValueError("one state per vehicle id is required")


def _clamp(u: float, bound: float | None) -> float:
    if bound is None:
        return u
    return min(max(u, -bound), bound)


def step(fleet: FleetState, inputs: Sequence[float], cfg: SimConfig) -> FleetState:
    """Advance every vehicle by one ``dt`` with its input held constant."""
    if len(inputs) != len(fleet.vehicles):
        raise ValueError("one input per vehicle is required")
    dt = cfg.dt_s
    out = []
    for vid, st, u in zip(fleet.ids, fleet.vehicles, inputs):
        if not math.isfinite(u):
            raise SimulationFault(f"non-finite input for vehicle {vid!r}", vid, fleet.time_s)
        u = _clamp(u, cfg.input_clamp_mps2)
        if cfg.integrator is Integrator.SEMI_IMPLICIT_EULER:
            v = st.speed_mps + u * dt
            p = st.progress_m + v * dt
        else:
            # RK4 of p'' = u with u held: reproduces the polynomial exactly.
            k1p, k1v = st.speed_mps, u
            k2p = st.speed_mps + 0.5 * dt * k1v
            k3p = st.speed_mps + 0.5 * dt * u
            k4p = st.speed_mps + dt * u
            p = st.progress_m + dt / 6.0 * (k1p + 2 * k2p + 2 * k3p + k4p)
            v = st.speed_mps + dt * u
        out.append(VehicleState(p, v, u))
    return FleetState(fleet.time_s + dt, fleet.ids, tuple(out))


@dataclass
class TrajectoryLog:
    """Per-step samples; row k is the state at ``t[k]`` and the input applied over the next step."""

    ids: tuple
    t: np.ndarray
    p: np.ndarray
    v: np.ndarray
    u: np.ndarray
    e_pred: np.ndarray
    in_ca: np.ndarray
    seq_used: np.ndarray
    lyapunov: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n_vehicles(self) -> int:
        return len(self.ids)

    def column(self, vehicle_id: Hashable) -> int:
        return self.ids.index(vehicle_id)

    def progress_map(self) -> dict:
        return {vid: (self.t, self.p[:, k]) for k, vid in enumerate(self.ids)}

    def follower_errors(self) -> np.ndarray:
        """Predecessor gap errors of every non-leader, shape (n_followers, K)."""
        cols = [k for k in range(self.n_vehicles) if not np.all(np.isnan(self.e_pred[:, k]))]
        return self.e_pred[:, cols].T


class _Recorder:
    def __init__(self, ids, n_steps):
        n = len(ids)
        self.ids = tuple(ids)
        self.t = np.empty(n_steps)
        self.p = np.empty((n_steps, n))
        self.v = np.empty((n_steps, n))
        self.u = np.empty((n_steps, n))
        self.seq = np.full((n_steps, n), -1, dtype=np.int64)
        self.k = 0

    def add(self, t, states: Sequence[VehicleState], u, seq=None):
        k = self.k
        self.t[k] = t
        for i, st in enumerate(states):
            self.p[k, i] = st.progress_m
            self.v[k, i] = st.speed_mps
            self.u[k, i] = u[i]
        if seq is not None:
            self.seq[k] = seq
        self.k += 1

    def finish(self, specs, geom, order: PlatoonOrder, spacing: SpacingPolicy, lyap=None, meta=None):
        k = self.k
        t, p, v, u, seq = self.t[:k], self.p[:k], self.v[:k], self.u[:k], self.seq[:k]
        e_pred, in_ca = derived_columns(self.ids, p, v, specs, geom, order, spacing)
        return TrajectoryLog(
            self.ids, t, p, v, u, e_pred, in_ca, seq,
            None if lyap is None else np.asarray(lyap[:k]), dict(meta or {}),
        )


def derived_columns(ids, p, v, specs, geom, order: PlatoonOrder, spacing: SpacingPolicy):
    """Predecessor gap error and CA occupancy for a block of samples."""
    e_pred = np.full(p.shape, np.nan)
    in_ca = np.zeros(p.shape, dtype=bool)
    col = {vid: k for k, vid in enumerate(ids)}
    ranked = order.ids_in_order()
    for pos, vid in enumerate(ranked):
        k = col[vid]
        lo, hi = occupancy_window(specs[k], geom)
        in_ca[:, k] = (p[:, k] > lo) & (p[:, k] < hi)
        if pos == 0:
            continue
        j = col[ranked[pos - 1]]
        if spacing.mode is SpacingMode.CONSTANT_GAP:
            speed = np.full(p.shape[0], spacing.reference_speed_mps)
        else:
            speed = v[:, k]
        gap = -(spacing.standstill_gap_m + spacing.headway_s * speed)
        e_pred[:, k] = p[:, k] - p[:, j] - gap
    return e_pred, in_ca


class _ClosedLoop:
    """Vector field of the fleet under the distributed controller."""

    def __init__(self, graph: CommGraph, order_ranks, params: ControllerParams,
                 spacing: SpacingPolicy, clamp: float | None):
        self.nbrs = [sorted(int(j) for j in np.flatnonzero(graph.adjacency[i]))
                     for i in range(graph.n)]
        self.ranks = order_ranks
        self.alpha = params.alpha
        self.beta = params.position_exponent
        self.spacing = spacing
        self.clamp = clamp

    def accel(self, p, v):
        out = []
        for i, nb in enumerate(self.nbrs):
            total = 0.0
            for j in nb:
                gap = desired_gap(self.spacing, v[i], self.ranks[j] - self.ranks[i])
                total -= sig(p[i] - p[j] - gap, self.beta)
                total -= sig(v[i] - v[j], self.alpha)
            out.append(_clamp(total, self.clamp))
        return out


def _edge_errors(graph: CommGraph, ranks, spacing, p, v):
    out = []
    for i, j in graph.edges():
        a, b = i - 1, j - 1
        gap = desired_gap(spacing, v[a], ranks[b] - ranks[a])
        out.append((p[a] - p[b] - gap, 1))
    return out


def lyapunov_series(log: TrajectoryLog, graph: CommGraph, order: PlatoonOrder,
                    params: ControllerParams, spacing: SpacingPolicy, frame_speed: float) -> np.ndarray:
    """Recompute V(t) from a finished log."""
    ranks = [order.rank(vid) for vid in log.ids]
    out = np.empty(len(log.t))
    for k in range(len(log.t)):
        errs = _edge_errors(graph, ranks, spacing, log.p[k], log.v[k])
        out[k] = lyapunov_value(errs, log.v[k], params, spacing, frame_speed)
    return out


def run_closed_loop(
    scenario: "Scenario",
    graph: CommGraph | None = None,
    params: ControllerParams | None = None,
    cfg: SimConfig | None = None,
    spacing: SpacingPolicy | None = None,
    allow_disconnected: bool = False,
) -> TrajectoryLog:
    """Synchronous, zero-delay closed loop: every vehicle sees exact neighbour states."""
    params = params or scenario.params
    cfg = cfg or scenario.sim
    spacing = spacing or scenario.spacing
    order = scenario.crossing_order()
    graph = graph or scenario.graph(order)
    if graph.n != len(scenario.vehicles):
        raise ConfigurationError("graph size does not match the scenario")
    if not is_connected(graph):
        if not allow_disconnected:
            raise ConfigurationError("communication graph is not connected")
        log.warning("running on a disconnected communication graph")
    ids = scenario.ids
    ranks = [order.rank(vid) for vid in ids]
    field_ = _ClosedLoop(graph, ranks, params, spacing, cfg.input_clamp_mps2)
    p = [st.progress_m for st in scenario.initial]
    v = [st.speed_mps for st in scenario.initial]
    n_steps = cfg.n_steps
    rec = _Recorder(ids, n_steps)
    track_v = spacing.mode is SpacingMode.CONSTANT_GAP
    frame = sum(v) / len(v)
    lyap = np.empty(n_steps) if track_v else None
    dt = cfg.dt_s
    for k in range(n_steps):
        t = k * dt
        u = field_.accel(p, v)
        rec.add(t, [VehicleState(a, b, c) for a, b, c in zip(p, v, u)], u)
        if track_v:
            lyap[k] = lyapunov_value(_edge_errors(graph, ranks, spacing, p, v), v, params, spacing, frame)
        if cfg.integrator is Integrator.SEMI_IMPLICIT_EULER:
            v = [vi + ui * dt for vi, ui in zip(v, u)]
            p = [pi + vi * dt for pi, vi in zip(p, v)]
        else:
            p, v = _rk4(field_, p, v, u, dt)
        for i, vi in enumerate(v):
            if not math.isfinite(vi) or abs(vi) > DIVERGENCE_SPEED_MPS:
                raise SimulationFault(
                    f"vehicle {ids[i]!r} speed {vi} exceeds {DIVERGENCE_SPEED_MPS} m/s at t={t + dt:.2f}s",
                    ids[i], t + dt,
                )
    meta = {"mode": "closed_loop", "integrator": cfg.integrator.value, "dt_s": dt,
            "frame_speed_mps": frame if track_v else None}
    return rec.finish(scenario.vehicles, scenario.junction, order, spacing, lyap, meta)


def _rk4(field_: _ClosedLoop, p, v, k1v, dt):
    n = len(p)
    k1p = v
    p2 = [p[i] + 0.5 * dt * k1p[i] for i in range(n)]
    v2 = [v[i] + 0.5 * dt * k1v[i] for i in range(n)]
    k2v = field_.accel(p2, v2)
    p3 = [p[i] + 0.5 * dt * v2[i] for i in range(n)]
    v3 = [v[i] + 0.5 * dt * k2v[i] for i in range(n)]
    k3v = field_.accel(p3, v3)
    p4 = [p[i] + dt * v3[i] for i in range(n)]
    v4 = [v[i] + dt * k3v[i] for i in range(n)]
    k4v = field_.accel(p4, v4)
    p_next = [p[i] + dt / 6.0 * (k1p[i] + 2 * v2[i] + 2 * v3[i] + v4[i]) for i in range(n)]
    v_next = [v[i] + dt / 6.0 * (k1v[i] + 2 * k2v[i] + 2 * k3v[i] + k4v[i]) for i in range(n)]
    return p_next, v_next


def run_uncontrolled(scenario: "Scenario", cfg: SimConfig | None = None) -> TrajectoryLog:
    """Constant-velocity rollout from the initial conditions."""
    cfg = cfg or scenario.sim
    n_steps = cfg.n_steps
    t = np.arange(n_steps) * cfg.dt_s
    p0 = np.array([st.progress_m for st in scenario.initial])
    v0 = np.array([st.speed_mps for st in scenario.initial])
    p = p0[None, :] + t[:, None] * v0[None, :]
    v = np.broadcast_to(v0, p.shape).copy()
    u = np.zeros_like(p)
    order = scenario.crossing_order()
    e_pred, in_ca = derived_columns(scenario.ids, p, v, scenario.vehicles, scenario.junction,
                                    order, scenario.spacing)
    seq = np.full(p.shape, -1, dtype=np.int64)
    return TrajectoryLog(scenario.ids, t, p, v, u, e_pred, in_ca, seq, None,
                         {"mode": "uncontrolled", "dt_s": cfg.dt_s})
