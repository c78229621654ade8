import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hermes_cic.control_core import VehicleState
from hermes_cic.errors import DomainError, ValidationError
from hermes_cic.junction import (
    CollisionClass,
    JunctionGeometry,
    VehicleSpec,
    assign_crossing_order,
    ca_occupancy,
    collision_region_trace,
    gnss_fields,
    in_cooperation_zone,
    mutual_exclusion_violations,
    progress_from_distance,
    progress_from_gnss,
)

geom = JunctionGeometry()
car = VehicleSpec("a", 4.6)


def test_geometry_validation():
    with pytest.raises(ValidationError):
        JunctionGeometry(roads=1)
    with pytest.raises(ValidationError):
        JunctionGeometry(cz_radius_m=5.0, ca_half_length_m=7.5)
    with pytest.raises(ValidationError):
        VehicleSpec("x", 0.0)


def test_progress_from_distance():
    assert progress_from_distance(220, True) == -220
    assert progress_from_distance(0, True) == 0 == progress_from_distance(0, False)
    assert progress_from_distance(15, False) == 15
    with pytest.raises(DomainError):
        progress_from_distance(-1, True)


def test_crossing_order_examples():
    states = {k: VehicleState(p, 10) for k, p in zip(["fh16", "xc90", "s90"], [-220, -235, -250])}
    assert assign_crossing_order(states).ranks == {"fh16": 1, "xc90": 2, "s90": 3}
    tie = assign_crossing_order({"B": VehicleState(-50, 1), "A": VehicleState(-50, 1)})
    assert tie.ranks == {"A": 1, "B": 2}
    assert assign_crossing_order({"solo": VehicleState(-1, 1)}).ranks == {"solo": 1}


def test_priority_moves_to_front():
    states = {k: VehicleState(p, 10) for k, p in zip("abc", [-10, -20, -30])}
    assert assign_crossing_order(states, priority="c").ids_in_order() == ["c", "a", "b"]


@given(st.lists(st.floats(-250, 250), min_size=1, max_size=6), st.randoms())
def test_crossing_order_permutation_and_input_order_invariant(ps, rnd):
    states = {f"v{k}": VehicleState(p, 1.0) for k, p in enumerate(ps)}
    order = assign_crossing_order(states)
    assert sorted(order.ranks.values()) == list(range(1, len(ps) + 1))
    items = list(states.items())
    rnd.shuffle(items)
    assert assign_crossing_order(dict(items)).ranks == order.ranks


def test_cooperation_zone_boundary():
    assert in_cooperation_zone(VehicleState(-220, 0), geom)
    assert not in_cooperation_zone(VehicleState(-260, 0), geom)
    assert in_cooperation_zone(VehicleState(-250, 0), geom)


def test_ca_occupancy_examples():
    assert ca_occupancy(VehicleState(0, 0), car, geom)
    assert not ca_occupancy(VehicleState(-(7.5 + 4.6 + 0.1), 0), car, geom)
    assert not ca_occupancy(VehicleState(7.5, 0), car, geom)
    assert ca_occupancy(-(7.5 + 4.6) + 1e-9, car, geom)


@given(st.floats(-300, -20), st.floats(0.1, 30))
def test_occupancy_single_contiguous_window(p0, v):
    p = p0 + v * np.linspace(0, 30, 600)
    occ = np.array([ca_occupancy(x, car, geom) for x in p], dtype=int)
    assert np.count_nonzero(np.diff(occ) == 1) <= 1
    assert np.count_nonzero(np.diff(occ) == -1) <= 1


def test_mutual_exclusion_examples():
    t = np.linspace(0, 10, 101)
    a = -20 + 10 * t
    b = a - 40
    specs = {"a": VehicleSpec("a", 4.6), "b": VehicleSpec("b", 4.6)}
    assert mutual_exclusion_violations({"a": (t, a), "b": (t, b)}, specs, geom) == []
    same = mutual_exclusion_violations({"a": (t, a), "b": (t, a)}, specs, geom)
    in_ca = [ti for ti, x in zip(t, a) if ca_occupancy(x, car, geom)]
    assert [x[0] for x in same] == in_ca
    assert all(pair == ("a", "b") for _, pair in same)
    with pytest.raises(ValueError):
        mutual_exclusion_violations({"a": (t, a), "b": (t[:-1], b[:-1])}, specs, geom)


@given(st.floats(-60, 60), st.floats(2, 20))
def test_violations_empty_iff_windows_disjoint(offset, v):
    t = np.linspace(0, 30, 3001)
    a = -100 + v * t
    b = -100 + offset + v * t
    specs = {"a": car, "b": VehicleSpec("b", 4.6)}
    occ_a = np.array([ca_occupancy(x, car, geom) for x in a])
    occ_b = np.array([ca_occupancy(x, car, geom) for x in b])
    viol = mutual_exclusion_violations({"a": (t, a), "b": (t, b)}, specs, geom)
    assert (viol == []) == (not np.any(occ_a & occ_b))


class TestCollisionTrace:
    def test_enters(self):
        s = np.linspace(-30, 30, 61)
        assert collision_region_trace(s, s, geom, car, car) is CollisionClass.ENTERS

    def test_avoids(self):
        s = np.linspace(-100, 100, 201)
        assert collision_region_trace(s, s - 60, geom, car, car) is CollisionClass.AVOIDS

    def test_touches_the_corner(self):
        # Follower sits exactly at the box corner when the leader leaves; a 1 m
        # shift puts the diagonal curve 0.71 m from the corner, past the 0.5 m tolerance.
        lo_f = -7.5 - 4.6
        s = np.linspace(-100, 100, 20001)
        follow = s - (7.5 - lo_f)
        assert collision_region_trace(s, follow, geom, car, car) is CollisionClass.TOUCHES
        assert collision_region_trace(s, follow - 1.0, geom, car, car) is CollisionClass.AVOIDS


def test_gnss_round_trip():
    spec = VehicleSpec("v", 4.6, entry_road=1, exit_road=3)
    for p in [-220.0, -3.0, 0.0, 4.0, 120.0]:
        g = gnss_fields(p, 9.0, spec, geom)
        assert 0 <= g["gnss_heading"] < 360
        assert np.hypot(g["speed_lat"], g["speed_lon"]) == pytest.approx(9.0)
        back = progress_from_gnss(g["proximity_m"], g["gnss_lat"], g["gnss_lon"], g["gnss_heading"], geom)
        assert back == pytest.approx(p)
