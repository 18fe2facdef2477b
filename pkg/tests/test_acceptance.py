"""End-to-end acceptance run: one PASS/FAIL line per criterion in the terminal summary."""

import math
import os
import socket
import subprocess
import sys
import threading
import time
from importlib import resources

import numpy as np
import pytest

import oracles
from conftest import random_q, report
from kstsim import client, sidechannel
from kstsim.demos import avoidance as av
from kstsim.demos.rectangle import edge_errors, run_rectangle_demo
from kstsim.demos.teach import replay, run_teach_demo
from kstsim.errors import LimitError, Unreachable
from kstsim.kinematics import fk_matrix, inverse_kinematics, jacobian
from kstsim.motion import ArcSpec, plan_arc
from kstsim.protocol import ParseError, WireFrame, decode_frame, decode_line, decode_response, encode_frame
from kstsim.rotations import orientation_error
from kstsim.server import SimServer
from kstsim.sim import Button, Edge, Led, Mode
from test_motion import check_arc_case, check_line_case, check_ptp_case

JPOS = [math.pi / 3, 0, 0, -math.pi / 2, 0, math.pi / 6, math.pi / 2]
LINE_GOAL = [400, 0, 580, -math.pi, 0, -math.pi]
RHO_MIN = 142.2  # mm, frozen from the closed-loop sweep oracle (worst case over 100-800 mm/s)
DATA = resources.files("kstsim.data")


def wrap(a):
    return (np.asarray(a) + np.pi) % (2 * np.pi) - np.pi


def free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def wait_mode(s, mode, timeout=5.0):
    deadline = time.monotonic() + timeout
    while sidechannel.get_mode(s) != mode:
        if time.monotonic() > deadline:
            return False
        time.sleep(0.005)
    return True


# -- 1 -------------------------------------------------------------------------


def random_frame(rng):
    tag = "".join(rng.choice(list("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_"),
                             int(rng.integers(1, 40))))
    if tag in ("OK", "ERR"):
        tag += "_"
    args = []
    for _ in range(int(rng.integers(0, 15))):
        k = rng.integers(0, 4)
        if k == 0:
            args.append(int(rng.integers(-(2**62), 2**62)))
        elif k == 1:
            args.append(float(rng.normal() * 10.0 ** int(rng.integers(-300, 300))))
        elif k == 2:
            args.append(float(np.frombuffer(rng.bytes(8), dtype=np.float64)[0]))
        else:
            args.append(float(rng.choice([0.0, -0.0, 1e16, 2.0**53, 5e-324, math.pi])))
    args = [a if not isinstance(a, float) or math.isfinite(a) else 0.5 for a in args]
    return WireFrame(int(rng.integers(0, 2**63)), tag, args)


def test_criterion_1_protocol():
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    bad = 0
    for _ in range(10_000):
        f = random_frame(rng)
        g = decode_frame(encode_frame(f))
        same = g == f and all(math.copysign(1, a) == math.copysign(1, b) for a, b in zip(f.args, g.args))
        bad += not same
    crashes = 0
    alphabet = np.frombuffer(b"0123456789 -+.eEOKRabcxyz_\t\r\x00\xff", dtype=np.uint8)
    for i in range(100_000):
        n = int(rng.integers(0, 60))
        raw = rng.bytes(n) if i % 2 else alphabet[rng.integers(0, len(alphabet), n)].tobytes()
        line = raw + b"\n"
        for dec in (decode_frame, decode_response, decode_line) if i % 10 == 0 else (decode_line,):
            try:
                dec(line)
            except ParseError:
                pass
            except Exception:
                crashes += 1
    elapsed = time.perf_counter() - t0
    ok = bad == 0 and crashes == 0 and elapsed < 10.0
    report(1, "protocol round trip and fuzz", ok,
           f"{10_000 - bad}/10000 exact round trips, {crashes} crashes in 100000 fuzz lines, {elapsed:.2f} s (< 10 s)")
    assert ok


# -- 2 -------------------------------------------------------------------------


def test_criterion_2_kinematics(geom):
    rng = np.random.default_rng(2)
    fk_err = float(np.abs(fk_matrix(geom, np.zeros(7)) - oracles.chain_fk(np.zeros(7))).max())
    worst_j = 0.0
    for _ in range(100):
        q = random_q(rng, geom, 1e-3)
        J, Jfd = jacobian(geom, q), oracles.fd_jacobian(q, 1e-6)
        for i in range(7):
            worst_j = max(worst_j, np.linalg.norm(J[:, i] - Jfd[:, i]) / max(np.linalg.norm(J[:, i]), 1.0))
    closed = 0
    for _ in range(100):
        qs = random_q(rng, geom, 0.1)
        target = fk_matrix(geom, qs)
        seed = geom.clamp(qs + rng.choice([-0.05, 0.05], 7))
        try:
            q = inverse_kinematics(geom, target, seed)
        except (Unreachable, LimitError):
            continue
        T = fk_matrix(geom, q)
        if (np.linalg.norm(T[:3, 3] - target[:3, 3]) <= 0.1
                and np.linalg.norm(orientation_error(target[:3, :3], T[:3, :3])) <= 1e-4):
            closed += 1
    ok = fk_err <= 1e-9 and worst_j <= 1e-6 and closed >= 99
    report(2, "kinematics", ok,
           f"FK(0) vs chain oracle {fk_err:.1e} mm (<= 1e-9), Jacobian vs FD worst {worst_j:.1e} rel (<= 1e-6), "
           f"IK closed {closed}/100 (>= 99)")
    assert ok


# -- 3 -------------------------------------------------------------------------


def test_criterion_3_motion(geom):
    rng = np.random.default_rng(3)
    counts = {}
    for name, check in (("ptp", lambda: check_ptp_case(geom, rng)), ("line", lambda: check_line_case(rng)),
                        ("arc", lambda: check_arc_case(rng))):
        passed = 0
        for _ in range(1000):
            try:
                check()
                passed += 1
            except AssertionError:
                pass
        counts[name] = passed
    closure = 0.0
    for _ in range(100):
        center = rng.uniform(-300, 300, 3)
        n = rng.normal(size=3)
        n /= np.linalg.norm(n)
        u = np.cross(n, rng.normal(size=3))
        u /= np.linalg.norm(u)
        start = np.eye(4)
        start[:3, 3] = center + float(rng.uniform(10, 300)) * u
        r = float(np.linalg.norm(start[:3, 3] - center))
        path = plan_arc(start, ArcSpec("center_normal", center=center, normal=n, radius=r, angle=2 * math.pi), 200)
        closure = max(closure, float(np.linalg.norm(path.positions[-1] - path.positions[0])))
    ok = all(v == 1000 for v in counts.values()) and closure < 1e-9
    report(3, "motion planners", ok,
           f"ptp {counts['ptp']}/1000, line {counts['line']}/1000, arc {counts['arc']}/1000, "
           f"full-circle closure {closure:.1e} mm (< 1e-9)")
    assert ok


# -- 4 -------------------------------------------------------------------------


def test_criterion_4_example_sequence():
    with SimServer(port=0, side_port=0, virtual=False) as srv:
        t0 = time.perf_counter()
        t = client.net_establishConnection(f"127.0.0.1:{srv.port}")
        s = sidechannel.open_side_channel(port=srv.side_port)
        try:
            client.movePTPJointSpace(t, JPOS, 0.25)
            q_err = float(np.abs(client.getJointsPos(t) - JPOS).max())
            client.movePTPLineEEF(t, LINE_GOAL, 50)
            pose = client.getEEFPos(t)
            p_err = float(np.linalg.norm(pose[:3] - LINE_GOAL[:3]))
            a_err = float(np.abs(wrap(pose[3:] - LINE_GOAL[3:])).max())
            client.setBlueOn(t)
            led_on = sidechannel.get_state(s)["led"] == Led.ON
            client.setBlueOff(t)
            led_off = sidechannel.get_state(s)["led"] == Led.OFF
            q_final = client.getJointsPos(t)
            still = float(np.abs(q_final - sidechannel.get_state(s)["q"]).max()) == 0.0
        finally:
            s.close()
            client.net_turnOffServer(t)
        elapsed = time.perf_counter() - t0
    ok = q_err <= 1e-9 and p_err <= 0.1 and a_err <= 1e-4 and led_on and led_off and still and elapsed < 30
    report(4, "example call sequence over loopback", ok,
           f"joint error {q_err:.1e} rad (<= 1e-9), line pose error {p_err:.1e} mm / {a_err:.1e} rad "
           f"(<= 0.1 / 1e-4), LED on/off {led_on}/{led_off}, {elapsed:.1f} s wall clock (< 30 s)")
    assert ok


# -- 5 -------------------------------------------------------------------------


def _hold_green(t, s, seconds):
    sidechannel.inject_button(s, Button.GREEN, Edge.PRESS)
    sidechannel.sim_tick(s, int(round(seconds / t.dt)))
    return sidechannel.get_state(s)["led"]


def test_criterion_5_hand_guiding(vconn, tmp_path):
    t, s = vconn
    # state machine, driven in virtual time through the side channel
    t.send_nowait("startHandGuiding")
    assert wait_mode(s, Mode.HAND_GUIDING)
    led_short = _hold_green(t, s, 1.0)
    sidechannel.inject_button(s, Button.GREEN, Edge.RELEASE)
    mode_short = sidechannel.get_mode(s)
    led_long = _hold_green(t, s, 1.6)
    sidechannel.inject_button(s, Button.GREEN, Edge.RELEASE)
    mode_after = sidechannel.get_mode(s)
    t.wait_event(("handGuidingEnd",), timeout=5)
    machine_ok = (led_short == Led.OFF and mode_short == Mode.HAND_GUIDING
                  and led_long == Led.FLICKER and mode_after == Mode.IDLE)
    # teach demo on the canned session, then replay from home
    path = tmp_path / "path.jsonl"
    res = run_teach_demo(t, s, str(DATA.joinpath("sessions", "five_points.jsonl")), path, timeout=30)
    last = res["points"][-1].q if res["points"] else np.full(7, np.nan)
    client.movePTPHomeJointSpace(t, 1.0)
    q_end = replay(t, path)
    replay_err = float(np.abs(q_end - last).max())
    n_saved = len(path.read_text().splitlines())
    ok = machine_ok and len(res["points"]) == 5 and n_saved == 5 and replay_err <= 1e-9
    report(5, "hand guiding and teach", ok,
           f"1.0 s hold -> {led_short.name}/{mode_short.name}, 1.6 s hold -> {led_long.name}, release -> "
           f"{mode_after.name}; {len(res['points'])} points captured, {n_saved} saved, replay error "
           f"{replay_err:.1e} rad (<= 1e-9)")
    assert ok


# -- 6 -------------------------------------------------------------------------


def test_criterion_6_rectangle(vconn):
    t, s = vconn
    res = run_rectangle_demo(t, a=100, b=50, v=50, side=s)
    errs = edge_errors(res["records"], res["vertices"])
    worst = max(e["max_deviation"] for e in errs)
    corners = max(e["corner_error"] for e in errs)
    closure = float(np.linalg.norm(res["final_pose"][:3] - res["vertices"][0][:3]))
    ok = len(errs) == 4 and all(e["samples"] > 0 for e in errs) and worst <= 0.1 and corners <= 0.1 and closure <= 0.1
    report(6, "rectangle demo", ok,
           f"4 edges, {sum(e['samples'] for e in errs)} traced samples, worst deviation {worst:.1e} mm, "
           f"worst corner {corners:.1e} mm, loop closure {closure:.1e} mm (all <= 0.1)")
    assert ok


# -- 7 -------------------------------------------------------------------------


@pytest.fixture
def server_process():
    port, side = free_port(), free_port()
    env = dict(os.environ, PYTHONUNBUFFERED="1")
    proc = subprocess.Popen([sys.executable, "-m", "kstsim", "serve", "--port", str(port), "--side-port", str(side)],
                            stdout=subprocess.PIPE, stderr=subprocess.STDOUT, text=True, env=env)
    banner = proc.stdout.readline()
    assert "serving" in banner, banner
    yield port
    proc.terminate()
    try:
        proc.wait(10)
    except subprocess.TimeoutExpired:
        proc.kill()


def test_criterion_7_streaming_rate(server_process, tmp_path):
    t = client.net_establishConnection(f"127.0.0.1:{server_process}")
    try:
        samples = av.load_scenario(str(DATA.joinpath("scenarios", "approach.jsonl")))
        footer = av.run_avoidance_demo(t, samples, av.AvoidanceConfig(), trace_path=tmp_path / "wall.jsonl",
                                       duration=10.0)
    finally:
        t.close()
    recs, _ = av.read_trace(tmp_path / "wall.jsonl")
    span = recs[-1]["stamp"] - recs[0]["stamp"]
    ok = (not footer["virtual"] and footer["mean_rate_hz"] >= 275 and footer["p99_gap_ms"] <= 10
          and span >= 10.0 - 2.0 / 300)
    report(7, "streaming rate", ok,
           f"{footer['cycles']} commands over {span:.2f} s, mean {footer['mean_rate_hz']:.1f} Hz (>= 275), "
           f"p99 gap {footer['p99_gap_ms']:.2f} ms (<= 10), {os.cpu_count()} cpu")
    assert ok


# -- 8 -------------------------------------------------------------------------


def _virtual_avoidance_run(path):
    with SimServer(port=0, side_port=0, virtual=True) as srv:
        t = client.net_establishConnection(f"127.0.0.1:{srv.port}")
        try:
            samples = av.load_scenario(str(DATA.joinpath("scenarios", "approach.jsonl")))
            footer = av.run_avoidance_demo(t, samples, av.AvoidanceConfig(), trace_path=path)
            q_robot = client.getJointsPos(t)
        finally:
            t.close()
    return footer, q_robot


def test_criterion_8_avoidance(tmp_path):
    cfg = av.AvoidanceConfig()
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    footer, q_robot = _virtual_avoidance_run(a)
    _virtual_avoidance_run(b)
    identical = a.read_bytes() == b.read_bytes()
    recs, _ = av.read_trace(a)
    rhos = [r["rho"] for r in recs if r["rho"] is not None]
    min_rho = min(rhos)
    min_z = min(r["x_eef"][2] for r in recs)
    # retreat: the last instant the obstacle is inside the influence distance
    t_out = max(r["stamp"] for r in recs if r["rho"] is not None and r["rho"] < cfg.rho0)
    home = cfg.q_home
    late = [r for r in recs if r["stamp"] >= t_out + 5.0]
    dev_late = max(float(np.abs(np.array(r["q"]) - home).max()) for r in late) if late else math.inf
    first_home = next((r["stamp"] - t_out for r in recs
                       if r["stamp"] > t_out and np.abs(np.array(r["q"]) - home).max() < 1e-3), math.inf)
    robot_dev = float(np.abs(q_robot - home).max())
    ok = (min_rho >= RHO_MIN and min_z >= cfg.z_floor and dev_late < 1e-3 and robot_dev < 1e-3 and identical)
    report(8, "avoidance behaviour", ok,
           f"min rho {min_rho:.2f} mm (>= {RHO_MIN}), min z {min_z:.1f} mm (>= {cfg.z_floor:.0f}), home within 1e-3 rad "
           f"{first_home:.2f} s after leaving rho0 (<= 5), traces byte-identical {identical}")
    assert ok
