import json
import math
from importlib import resources

import numpy as np
import pytest

import oracles
from kstsim import client
from kstsim.demos import avoidance as av
from kstsim.demos.rectangle import ORIGIN, edge_errors, rectangle_vertices, run_rectangle_demo, segment_distance
from kstsim.demos.teach import load_session, replay, run_teach_demo
from kstsim.errors import LimitError, Unreachable
from kstsim.kinematics import joint_frames

RHO_MIN = 142.2  # mm, worst case of the closed-loop sweep over 100-800 mm/s approach speeds
DATA = resources.files("kstsim.data")


def scenario(name):
    return av.load_scenario(str(DATA.joinpath("scenarios", name)))


# -- potential field -----------------------------------------------------------


def test_step_is_fixed_at_home(geom):
    cfg = av.AvoidanceConfig()
    assert np.array_equal(av.potential_field_step(cfg.q_home, None, cfg, geom), cfg.q_home)


def test_attraction_contracts(geom):
    cfg = av.AvoidanceConfig()
    q = cfg.q_home + 0.2
    for _ in range(50):
        q_next = av.potential_field_step(q, None, cfg, geom)
        assert np.linalg.norm(q_next - cfg.q_home) < np.linalg.norm(q - cfg.q_home)
        q = q_next


def test_repulsion_pushes_away(geom):
    cfg = av.AvoidanceConfig()
    x = joint_frames(geom, cfg.q_home)[-1][:3, 3]
    obs = x + [0, 100, 0]
    q = av.potential_field_step(cfg.q_home, obs, cfg, geom)
    x1 = joint_frames(geom, q)[-1][:3, 3]
    assert np.linalg.norm(x1 - obs) > 100


def test_repulsive_force_zero_outside_range():
    cfg = av.AvoidanceConfig()
    F, rho = av.repulsive_force(np.zeros(3), np.array([0, 0, 400.0]), cfg)
    assert rho == 400 and not F.any()
    F, rho = av.repulsive_force(np.zeros(3), None, cfg)
    assert math.isinf(rho)


def test_step_respects_velocity_limits(geom, rng):
    cfg = av.AvoidanceConfig(k_att=100.0)
    dt = 1 / cfg.rate_hz
    q0 = cfg.q_home + rng.uniform(-1, 1, 7) * 0.5
    q0 = geom.clamp(q0)
    q1 = av.potential_field_step(q0, None, cfg, geom)
    assert np.all(np.abs(q1 - q0) <= geom.qd_max * dt + 1e-12)


def test_step_rejects_bad_configuration(geom):
    with pytest.raises(LimitError):
        av.potential_field_step([0, 0, 0, -3, 0, 0, 0], None, av.AvoidanceConfig(), geom)


def test_matches_sweep_oracle(geom):
    cfg = av.AvoidanceConfig()
    params = {"geom": oracles.load_dh(), "k_att": cfg.k_att, "k_rep": cfg.k_rep, "rho0": cfg.rho0,
              "q_home": cfg.q_home, "z_floor": cfg.z_floor}
    want = oracles.sweep_min_distance(params, [0, 1, 0], [300.0])[300.0]
    got = min(rho for _, _, rho, _ in av.simulate(scenario("approach.jsonl"), cfg, geom))
    assert got == pytest.approx(want, abs=0.05)
    assert want == pytest.approx(161.469, abs=0.01)


def test_empty_stream_holds_home(geom):
    cfg = av.AvoidanceConfig()
    qs = [q for _, q, _, _ in av.simulate([], cfg, geom, duration=0.5)]
    assert len(qs) == 150 and all(np.array_equal(q, cfg.q_home) for q in qs)


@pytest.mark.parametrize("name", ["approach.jsonl", "press_down.jsonl"])
def test_scenarios_stay_safe(geom, name):
    cfg = av.AvoidanceConfig()
    rhos, zs, last = [], [], None
    for _, q, rho, x in av.simulate(scenario(name), cfg, geom):
        rhos.append(rho)
        zs.append(x[2])
        last = q
    assert min(zs) >= cfg.z_floor - 1e-9
    if name == "approach.jsonl":
        assert min(rhos) >= RHO_MIN
    assert np.max(np.abs(last - cfg.q_home)) < 1e-3


def test_obstacle_interpolation():
    s = [av.ObstacleSample([0, 0, 0], 0.0), av.ObstacleSample([10, 0, 0], 1.0)]
    assert np.allclose(av.obstacle_at(s, 0.25), [2.5, 0, 0])
    assert av.obstacle_at(s, -0.1) is None and av.obstacle_at(s, 1.1) is None


def test_scenario_validation(tmp_path):
    p = tmp_path / "bad.jsonl"
    p.write_text('{"stamp": 1, "position": [0, 0, 0]}\n{"stamp": 0.5, "position": [0, 0, 0]}\n')
    with pytest.raises(ValueError):
        av.load_scenario(p)
    with pytest.raises(ValueError):
        av.ObstacleSample([0, 0], 0.0)
    with pytest.raises(ValueError):
        av.AvoidanceConfig(rho0=0)


def test_rate_stats():
    rate, p99 = av.rate_stats(np.arange(301) / 300.0)
    assert rate == pytest.approx(300.0) and p99 == pytest.approx(1000 / 300)


def test_avoidance_over_virtual_server(vconn, geom, tmp_path):
    t, _ = vconn
    cfg = av.AvoidanceConfig()
    samples = scenario("approach.jsonl")
    footer = av.run_avoidance_demo(t, samples, cfg, trace_path=tmp_path / "a.jsonl", duration=3.0)
    recs, saved = av.read_trace(tmp_path / "a.jsonl")
    assert footer["cycles"] == len(recs) == 900 and saved["resyncs"] == 0
    offline = [q for _, q, _, _ in av.simulate(samples, cfg, geom, duration=3.0)]
    assert np.allclose(recs[-1]["q"], offline[-1], atol=1e-12)
    assert np.allclose(client.getJointsPos(t), recs[-1]["q"], atol=1e-9)


# -- rectangle -----------------------------------------------------------------


def test_rectangle_vertices():
    v = rectangle_vertices(ORIGIN, 100, 50)
    assert len(v) == 5 and np.array_equal(v[0], v[-1])
    assert np.allclose(v[2][:3] - v[0][:3], [100, 50, 0])


def test_segment_distance():
    a, b = np.zeros(3), np.array([10.0, 0, 0])
    d = segment_distance(np.array([[5, 3, 0], [-4, 3, 0]]), a, b)
    assert np.allclose(d, [3, 5])


def test_rectangle_demo(vconn, tmp_path):
    t, s = vconn
    res = run_rectangle_demo(t, ORIGIN, 100, 50, 100, side=s, trace_path=tmp_path / "r.jsonl")
    for e in edge_errors(res["records"], res["vertices"]):
        assert e["samples"] > 0 and e["max_deviation"] < 0.1 and e["corner_error"] < 0.1
    assert np.linalg.norm(res["final_pose"][:3] - np.asarray(ORIGIN)[:3]) < 0.1
    assert len((tmp_path / "r.jsonl").read_text().splitlines()) == len(res["records"])


def test_degenerate_rectangle(vconn):
    t, s = vconn
    res = run_rectangle_demo(t, ORIGIN, 0, 0, 50, side=s)
    assert np.linalg.norm(res["final_pose"][:3] - np.asarray(ORIGIN)[:3]) < 0.1


def test_rectangle_out_of_reach(vconn):
    t, _ = vconn
    with pytest.raises(Unreachable):
        run_rectangle_demo(t, (2000, 0, 500, -np.pi, 0, -np.pi), 100, 50, 50)


# -- teach ---------------------------------------------------------------------


def test_session_file_loads():
    ops = load_session(str(DATA.joinpath("sessions", "five_points.jsonl")))
    assert sum(op["op"] == "guide" for op in ops) == 5


def test_session_rejects_unknown_op(tmp_path):
    p = tmp_path / "s.jsonl"
    p.write_text('{"op": "dance"}\n')
    with pytest.raises(ValueError):
        load_session(p)


def test_teach_demo(vconn, tmp_path):
    t, s = vconn
    path = tmp_path / "path.jsonl"
    res = run_teach_demo(t, s, str(DATA.joinpath("sessions", "five_points.jsonl")), path, timeout=20)
    assert len(res["points"]) == 5
    saved = [json.loads(line) for line in path.read_text().splitlines()]
    assert len(saved) == 5
    assert np.max(np.abs(res["final_q"] - saved[-1]["q"])) <= 1e-9
    client.movePTPHomeJointSpace(t, 1.0)
    assert np.max(np.abs(replay(t, path) - saved[-1]["q"])) <= 1e-9


def test_teach_timeout(vconn, tmp_path):
    t, s = vconn
    ops = [{"op": "wait_mode", "mode": "HAND_GUIDING"}, {"op": "button", "button": "GREEN", "edge": "PRESS"}]
    with pytest.raises(TimeoutError, match="green"):
        run_teach_demo(t, s, ops, tmp_path / "p.jsonl", timeout=0.5)


def test_teach_zero_points(vconn, tmp_path):
    t, s = vconn
    ops = [
        {"op": "wait_mode", "mode": "HAND_GUIDING"},
        {"op": "button", "button": "GREEN", "edge": "PRESS"},
        {"op": "advance", "s": 1.6},
        {"op": "button", "button": "GREEN", "edge": "RELEASE"},
    ]
    res = run_teach_demo(t, s, ops, tmp_path / "p.jsonl", timeout=5)
    assert res["points"] == [] and (tmp_path / "p.jsonl").read_text() == ""
