"""Full manager-plus-agents simulation over simulated links and a virtual clock.

Within one instant the order is fixed: due deliveries, the manager's
broadcast tick, each agent's sender then control step (in scenario
order), then the physics step. Given the seed the run is bit-reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .control_core import VehicleState
from .errors import SimulationFault
from .metrics import DelayKind, DelaySample, ttp_series
from .net_harness import LatencyModel, VirtualClock, simulated_link
from .protocol import encode
from .scenario import Scenario
from .sim_dynamics import DIVERGENCE_SPEED_MPS, FleetState, TrajectoryLog, _Recorder, step
from .traffic_manager import TrafficManager
from .vehicle_agent import AgentConfig, VehicleAgent


@dataclass
class DistributedRun:
    log: TrajectoryLog
    delays: list[DelaySample]
    sequences: dict[str, list[tuple[float, int]]]
    discarded: dict[str, list[tuple[float, int]]]
    broadcast_times_ms: list[float]
    manager: dict
    agents: dict[str, dict] = field(default_factory=dict)


def agent_config(scenario: Scenario, vid: str) -> AgentConfig:
    k = scenario.ids.index(vid)
    s = scenario.agents
    return AgentConfig(
        id=vid, name=vid, params=scenario.params, spacing=scenario.spacing,
        spec=scenario.vehicles[k], junction=scenario.junction,
        vehicle_type=scenario.vehicle_types[k],
        send_rate_hz=s.send_rate_hz, control_rate_hz=s.control_rate_hz,
        topology=scenario.topology, expected_vehicles=len(scenario.ids),
        stale_ms=s.stale_ms, safe_decel_mps2=s.safe_decel_mps2,
        neighbor_prediction=s.neighbor_prediction,
    )


def _every(rate_hz: float, dt_s: float) -> int:
    n = round(1.0 / (rate_hz * dt_s))
    return max(1, int(n))


def run_distributed(scenario: Scenario, network: LatencyModel | None = None,
                    priority: str | None = None) -> DistributedRun:
    network = network or scenario.network
    cfg = scenario.sim
    dt_us = int(round(cfg.dt_s * 1e6))
    clock = VirtualClock(0)
    manager = TrafficManager(scenario.agents.broadcast_rate_hz, scenario.agents.stale_ms,
                             monotonic_ms=lambda: clock.now_ms, wall_ms=lambda: clock.now_ms)
    if priority is not None:
        manager.set_control_side_info("priority_vehicle", priority)
    agents: list[VehicleAgent] = []
    endpoints = []
    for k, vid in enumerate(scenario.ids):
        agent = VehicleAgent(agent_config(scenario, vid))
        a_ep, m_ep = simulated_link(network, clock, (vid, "manager"), stream=k)
        manager.connect(m_ep)
        a_ep.on_message = lambda data, a=agent: a.handle_frame(data, clock.now_ms)
        a_ep.send(encode(agent.subscription()))
        agents.append(agent)
        endpoints.append(a_ep)
    period_us = int(round(1e6 / scenario.agents.broadcast_rate_hz))
    clock.every(period_us, manager.tick, start_us=0, sender="~manager")

    send_every = _every(scenario.agents.send_rate_hz, cfg.dt_s)
    control_every = _every(scenario.agents.control_rate_hz, cfg.dt_s)
    fleet = FleetState(0.0, scenario.ids, scenario.initial)
    n = len(agents)
    u = [0.0] * n
    rec = _Recorder(scenario.ids, cfg.n_steps)
    for k in range(cfg.n_steps):
        clock.advance_to(k * dt_us)
        now = clock.now_ms
        for i, (agent, ep) in enumerate(zip(agents, endpoints)):
            st = fleet.vehicles[i]
            if agent.subscribed and k % send_every == 0:
                ep.send(encode(agent.sender_tick(st, now)))
            if k % control_every == 0:
                u[i] = agent.control_tick(st, now)
        seq = [-1 if a.snapshot is None else a.snapshot.update.global_sequence for a in agents]
        bound = cfg.input_clamp_mps2
        applied = [u_i if bound is None else min(max(u_i, -bound), bound) for u_i in u]
        rec.add(k * cfg.dt_s, fleet.vehicles, applied, seq)
        fleet = step(fleet, applied, cfg)
        for i, st in enumerate(fleet.vehicles):
            if not math.isfinite(st.speed_mps) or abs(st.speed_mps) > DIVERGENCE_SPEED_MPS:
                raise SimulationFault(f"vehicle {scenario.ids[i]!r} diverged", scenario.ids[i], fleet.time_s)

    delays = []
    for agent in agents:
        vid = agent.config.id
        delays += [DelaySample(DelayKind.STATE_RTT, v, t, vid) for t, v in agent.log.state_rtt]
        recv = agent.log.received_ms
        delays += [DelaySample(DelayKind.TTP, v, t, vid) for t, v in zip(recv[1:], ttp_series(recv))]
    meta = {"mode": "distributed", "network": network.__dict__ | {"distribution": network.distribution.value},
            "dt_s": cfg.dt_s}
    log = rec.finish(scenario.vehicles, scenario.junction, scenario.crossing_order(),
                     scenario.spacing, None, meta)
    return DistributedRun(
        log=log,
        delays=delays,
        sequences={a.config.id: list(a.log.accepted) for a in agents},
        discarded={a.config.id: list(a.log.discarded) for a in agents},
        broadcast_times_ms=list(manager.broadcast_times_ms),
        manager={"protocol_violations": manager.violations, "discards": manager.discards,
                 "broadcasts": len(manager.broadcast_times_ms)},
        agents={a.config.id: {"fallback_ticks": a.log.fallback_ticks,
                              "warnings": len(a.log.warnings),
                              "order": None if a.order is None else a.order.ids_in_order()}
                for a in agents},
    )
