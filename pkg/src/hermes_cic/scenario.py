"""Scenario files: YAML documents describing vehicles, junction, controller and network.

Parsing collects every problem before failing, each tagged with the dotted
path of the offending field (``controller.alpha``, ``vehicles[1].length_m``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Any, Callable

import yaml

from .control_core import ControllerParams, SpacingMode, SpacingPolicy, VehicleState
from .errors import ScenarioError, ValidationError
from .junction import JunctionGeometry, PlatoonOrder, VehicleSpec, assign_crossing_order
from .net_harness import DelayDistribution, LatencyModel
from .protocol import VehicleType
from .sim_dynamics import Integrator, SimConfig
from .topology import CommGraph, build_graph, chain_graph, complete_graph

BUNDLED = ("table2.scenario",)


@dataclass(frozen=True)
class AgentSettings:
    send_rate_hz: float = 20.0
    control_rate_hz: float = 100.0
    broadcast_rate_hz: float = 20.0
    stale_ms: float = 500.0
    safe_decel_mps2: float = -2.0
    neighbor_prediction: bool = True


@dataclass(frozen=True)
class Scenario:
    name: str
    ids: tuple[str, ...]
    vehicles: tuple[VehicleSpec, ...]
    vehicle_types: tuple[VehicleType, ...]
    initial: tuple[VehicleState, ...]
    junction: JunctionGeometry
    topology: str | tuple[tuple[str, str], ...]
    params: ControllerParams
    spacing: SpacingPolicy
    sim: SimConfig
    network: LatencyModel
    agents: AgentSettings

    def crossing_order(self) -> PlatoonOrder:
        return assign_crossing_order(dict(zip(self.ids, self.initial)))

    def graph(self, order: PlatoonOrder | None = None) -> CommGraph:
        index = {vid: k + 1 for k, vid in enumerate(self.ids)}
        if self.topology == "complete":
            return complete_graph(len(self.ids))
        if self.topology == "chain":
            order = order or self.crossing_order()
            return chain_graph([index[v] for v in order.ids_in_order()])
        return build_graph(len(self.ids), [(index[a], index[b]) for a, b in self.topology])

    def with_network(self, model: LatencyModel) -> "Scenario":
        return replace(self, network=model)

    def with_seed(self, seed: int) -> "Scenario":
        return replace(self, network=replace(self.network, seed=seed),
                       sim=replace(self.sim, seed=seed))


class _Collector:
    def __init__(self):
        self.problems: list[ValidationError] = []

    def fail(self, path: str, message: str):
        self.problems.append(ValidationError(path, message))

    def get(self, d: dict, path: str, key: str, conv: Callable, default: Any = ..., check=None):
        full = f"{path}.{key}" if path else key
        if not isinstance(d, dict):
            self.fail(path or "<root>", "expected a mapping")
            return None
        if key not in d:
            if default is ...:
                self.fail(full, "missing")
                return None
            return default
        try:
            value = conv(d[key])
        except (TypeError, ValueError) as exc:
            self.fail(full, f"invalid value {d[key]!r}: {exc}")
            return None
        if check is not None:
            msg = check(value)
            if msg:
                self.fail(full, msg)
                return None
        return value

    def build(self, path: str, fn: Callable, *args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ValidationError as exc:
            self.fail(f"{path}.{exc.field}" if path else exc.field, exc.message)
        except (TypeError, ValueError) as exc:
            self.fail(path, str(exc))
        return None


def _finite(x) -> float:
    v = float(x)
    if not math.isfinite(v):
        raise ValueError("must be finite")
    return v


def _positive(v):
    return None if v > 0 else "must be > 0"


def _alpha_check(v):
    return None if 0 < v < 1 else f"must lie strictly inside (0, 1), got {v}"


def parse_scenario(text: str, name: str = "<string>") -> Scenario:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioError([ValidationError("<document>", f"not valid YAML: {exc}")]) from None
    if not isinstance(doc, dict):
        raise ScenarioError([ValidationError("<document>", "expected a mapping at top level")])
    c = _Collector()

    junc = doc.get("junction", {}) or {}
    junction = c.build("junction", JunctionGeometry,
                       roads=c.get(junc, "junction", "roads", int, 4),
                       cz_radius_m=c.get(junc, "junction", "cz_radius_m", _finite, 250.0),
                       ca_half_length_m=c.get(junc, "junction", "ca_half_length_m", _finite, 7.5, _positive))

    raw_vehicles = doc.get("vehicles")
    ids, specs, types, initial = [], [], [], []
    if not isinstance(raw_vehicles, list) or not raw_vehicles:
        c.fail("vehicles", "expected a non-empty list")
        raw_vehicles = []
    for k, rv in enumerate(raw_vehicles):
        path = f"vehicles[{k}]"
        vid = c.get(rv, path, "id", str)
        length = c.get(rv, path, "length_m", _finite, check=_positive)
        p0 = c.get(rv, path, "p0", _finite)
        v0 = c.get(rv, path, "v0", _finite)
        entry = c.get(rv, path, "entry_road", int, 0)
        exit_ = c.get(rv, path, "exit_road", int, 2)
        vtype = c.get(rv, path, "type", VehicleType, VehicleType.AUTONOMOUS)
        if vid in ids:
            c.fail(f"{path}.id", f"duplicate id {vid!r}")
        if None in (vid, length, p0, v0, entry, exit_, vtype):
            continue
        ids.append(vid)
        specs.append(VehicleSpec(vid, length, entry, exit_))
        types.append(vtype)
        initial.append(VehicleState(p0, v0))

    topo = doc.get("topology", "chain")
    if isinstance(topo, str):
        if topo not in ("chain", "complete"):
            c.fail("topology", f"unknown topology {topo!r}; use chain, complete or a list of pairs")
    elif isinstance(topo, list):
        pairs = []
        for k, pair in enumerate(topo):
            if not (isinstance(pair, list) and len(pair) == 2 and all(x in ids for x in pair)) \
                    or pair[0] == pair[1]:
                c.fail(f"topology[{k}]", f"expected a pair of distinct vehicle ids, got {pair!r}")
            else:
                pairs.append((str(pair[0]), str(pair[1])))
        topo = tuple(pairs)
    else:
        c.fail("topology", "expected chain, complete or a list of id pairs")

    ctrl = doc.get("controller", {}) or {}
    alpha = c.get(ctrl, "controller", "alpha", _finite, check=_alpha_check)
    r = c.get(ctrl, "controller", "r", _finite, check=_positive)
    h = c.get(ctrl, "controller", "h", _finite, check=lambda v: None if v >= 0 else "must be >= 0")
    mode = c.get(ctrl, "controller", "mode", SpacingMode, SpacingMode.HEADWAY_LITERAL)
    ref = c.get(ctrl, "controller", "reference_speed_mps", _finite, None)
    if ref is None and initial:
        ref = sum(s.speed_mps for s in initial) / len(initial)
    params = c.build("controller", ControllerParams, alpha) if alpha is not None else None
    spacing = None
    if None not in (r, h, mode):
        spacing = c.build("controller", SpacingPolicy, r, h, mode,
                          ref if mode is SpacingMode.CONSTANT_GAP else None)

    simd = doc.get("sim", {}) or {}
    clamp = c.get(simd, "sim", "input_clamp_mps2", lambda x: None if x is None else _finite(x), 4.0)
    sim = c.build("sim", SimConfig,
                  dt_s=c.get(simd, "sim", "dt_s", _finite, 0.01, _positive),
                  duration_s=c.get(simd, "sim", "duration_s", _finite, 30.0, _positive),
                  integrator=c.get(simd, "sim", "integrator", Integrator, Integrator.SEMI_IMPLICIT_EULER),
                  input_clamp_mps2=clamp,
                  seed=c.get(simd, "sim", "seed", int, 0))

    net = doc.get("network", {}) or {}
    network = c.build("network", LatencyModel,
                      distribution=c.get(net, "network", "model", DelayDistribution, DelayDistribution.CONSTANT),
                      mean_ms=c.get(net, "network", "mean_ms", _finite, 0.0),
                      std_ms=c.get(net, "network", "std_ms", _finite, 0.0),
                      mu=c.get(net, "network", "mu", _finite, 0.0),
                      sigma=c.get(net, "network", "sigma", _finite, 0.0),
                      reorder_probability=c.get(net, "network", "reorder_p", _finite, 0.0),
                      seed=c.get(net, "network", "seed", int, 0))

    ag = doc.get("agents", {}) or {}
    pred = c.get(ag, "agents", "neighbor_prediction", str, "constant_velocity",
                 check=lambda v: None if v in ("constant_velocity", "hold")
                 else "must be constant_velocity or hold")
    agents = AgentSettings(
        send_rate_hz=c.get(ag, "agents", "send_rate_hz", _finite, 20.0, _positive) or 20.0,
        control_rate_hz=c.get(ag, "agents", "control_rate_hz", _finite, 100.0, _positive) or 100.0,
        broadcast_rate_hz=c.get(ag, "agents", "broadcast_rate_hz", _finite, 20.0, _positive) or 20.0,
        stale_ms=c.get(ag, "agents", "stale_ms", _finite, 500.0, _positive) or 500.0,
        safe_decel_mps2=c.get(ag, "agents", "safe_decel_mps2", _finite, -2.0,
                              lambda v: None if v <= 0 else "must be <= 0") or -2.0,
        neighbor_prediction=pred != "hold",
    )
    if agents.stale_ms <= 1000.0 / agents.broadcast_rate_hz:
        c.fail("agents.stale_ms", "must exceed the broadcast interval")

    if c.problems:
        raise ScenarioError(c.problems)
    return Scenario(name, tuple(ids), tuple(specs), tuple(types), tuple(initial), junction,
                    topo, params, spacing, sim, network, agents)


def load_scenario(path: str | Path) -> Scenario:
    """Load a scenario file; a bare bundled name like ``table2.scenario`` also works."""
    p = Path(path)
    if not p.exists() and p.name in BUNDLED and str(p) == p.name:
        text = resources.files("hermes_cic.scenarios").joinpath(p.name).read_text()
        return parse_scenario(text, p.stem)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ScenarioError([ValidationError("<file>", f"cannot read {p}: {exc.strerror}")]) from None
    return parse_scenario(text, p.stem)


def bundled_path(name: str = "table2.scenario") -> Path:
    return Path(str(resources.files("hermes_cic.scenarios").joinpath(name)))
