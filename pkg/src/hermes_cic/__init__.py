"""Cooperative intersection crossing with a finite-time distributed controller.

Vehicles approaching a junction are reduced to a one-dimensional virtual
platoon ordered by distance to the centre; a cloud traffic manager relays
every vehicle's state at a fixed rate and each vehicle runs the controller
locally on the latest relayed neighbour states.
"""

from .control_core import (
    ControllerParams,
    Neighbor,
    SpacingMode,
    SpacingPolicy,
    VehicleState,
    control_input,
    desired_gap,
    estimate_c,
    gap_error,
    lyapunov_value,
    settling_time_bound,
    sig,
)
from .scenario import Scenario, load_scenario, parse_scenario

__all__ = [
    "ControllerParams",
    "Neighbor",
    "Scenario",
    "SpacingMode",
    "SpacingPolicy",
    "VehicleState",
    "control_input",
    "desired_gap",
    "estimate_c",
    "gap_error",
    "load_scenario",
    "lyapunov_value",
    "parse_scenario",
    "settling_time_bound",
    "sig",
]

__version__ = "0.1.0"
