import numpy as np
import pytest

from builders import table2
from hermes_cic import csvio
from hermes_cic.errors import ScenarioError, ValidationError
from hermes_cic.metrics import DelaySample
from hermes_cic.scenario import bundled_path, parse_scenario
from hermes_cic.sim_dynamics import run_closed_loop

BASE = bundled_path().read_text()


def test_bundled_values():
    sc = table2()
    assert sc.ids == ("fh16", "xc90", "s90")
    assert [s.progress_m for s in sc.initial] == [-220.0, -235.0, -250.0]
    assert [s.speed_mps for s in sc.initial] == [10.0, 9.7, 9.8]
    assert [v.length_m for v in sc.vehicles] == [7.8, 4.6, 4.6]
    assert (sc.params.alpha, sc.spacing.standstill_gap_m, sc.spacing.headway_s) == (0.1, 10.0, 0.8)


@pytest.mark.parametrize("old,new,field", [
    ("alpha: 0.1", "alpha: 1.5", "controller.alpha"),
    ("h: 0.8", "h: -1", "controller.h"),
    ("dt_s: 0.01", "dt_s: 0", "sim.dt_s"),
    ("stale_ms: 500", "stale_ms: 10", "agents.stale_ms"),
    ("length_m: 7.8", "length_m: -1", "vehicles[0].length_m"),
    ("id: s90", "id: xc90", "vehicles[2].id"),
    ("topology: chain", "topology: ring", "topology"),
    ("model: constant", "model: pareto", "network.model"),
])
def test_invalid_fields_named(old, new, field):
    with pytest.raises(ScenarioError) as exc:
        parse_scenario(BASE.replace(old, new))
    assert field in [p.field for p in exc.value.problems]


def test_all_problems_collected():
    text = BASE.replace("alpha: 0.1", "alpha: 0").replace("dt_s: 0.01", "dt_s: -1")
    with pytest.raises(ScenarioError) as exc:
        parse_scenario(text)
    assert {"controller.alpha", "sim.dt_s"} <= {p.field for p in exc.value.problems}


def test_not_yaml():
    with pytest.raises(ScenarioError):
        parse_scenario("vehicles: [")


def test_explicit_pairs_topology():
    sc = parse_scenario(BASE.replace("topology: chain", "topology: [[fh16, s90], [s90, xc90]]"))
    assert sc.graph().edges() == [(1, 3), (2, 3)]


def test_trajectory_round_trip(tmp_path):
    sc = table2()
    log = run_closed_loop(sc)
    csvio.write_trajectory(tmp_path / "t.csv", log)
    back = csvio.read_trajectory(tmp_path / "t.csv", sc)
    assert back.ids == log.ids
    assert np.allclose(back.p, log.p, rtol=0, atol=1e-9)
    assert np.allclose(back.v, log.v, rtol=0, atol=1e-9)
    assert np.array_equal(back.in_ca, log.in_ca)


def test_trajectory_schema_errors(tmp_path):
    f = tmp_path / "t.csv"
    f.write_text("t_s,vehicle_id\n0,a\n")
    with pytest.raises(ValidationError):
        csvio.read_trajectory(f)
    f.write_text(",".join(csvio.TRAJECTORY_COLUMNS) + "\n0,a,x,1,0,0,0,0\n")
    with pytest.raises(ValidationError) as exc:
        csvio.read_trajectory(f)
    assert "p_m" in exc.value.field


def test_delays_and_sequences_round_trip(tmp_path):
    d = [DelaySample("state_rtt", 70.0, 170.0, "xc90"), DelaySample("ttp", 50.0, 220.0, "fh16")]
    csvio.write_delays(tmp_path / "d.csv", d)
    assert csvio.read_delays(tmp_path / "d.csv") == d
    acc = {"a": [(0.0, 0), (50.0, 1)]}
    dis = {"a": [(60.0, 0)]}
    csvio.write_sequences(tmp_path / "s.csv", acc, dis)
    assert csvio.read_sequences(tmp_path / "s.csv") == (acc, dis)
