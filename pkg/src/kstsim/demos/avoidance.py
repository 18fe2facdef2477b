"""Potential-field obstacle avoidance streamed over direct servo.

The arm holds a home configuration.  A tracked obstacle (a scripted stream of
positions here, a magnetic tracker in the lab) pushes the flange away with
the classical inverse-distance repulsive field, mapped to joint space through
the Jacobian transpose.  A horizontal table top below the flange is never
crossed.
"""

import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import client
from ..errors import Disconnected, LimitError
from ..kinematics import as_joint_vector, default_geometry, jacobian, joint_frames

log = logging.getLogger(__name__)

HOME = np.radians([0.0, 30.0, 0.0, -90.0, 0.0, 60.0, 0.0])


@dataclass(frozen=True)
class ObstacleSample:
    position: np.ndarray  # mm, base frame
    stamp: float  # s

    def __post_init__(self):
        p = np.asarray(self.position, dtype=float).reshape(-1)
        if p.shape != (3,) or not np.all(np.isfinite(p)) or not math.isfinite(self.stamp):
            raise ValueError(f"bad obstacle sample {self.position!r} @ {self.stamp!r}")
        object.__setattr__(self, "position", p)


@dataclass
class AvoidanceConfig:
    k_att: float = 2.0  # 1/s
    k_rep: float = 1.0e4  # mm^2/s
    rho0: float = 300.0  # mm
    q_home: np.ndarray = field(default_factory=lambda: HOME.copy())
    rate_hz: float = 300.0
    z_floor: float = 300.0  # mm
    settle_s: float = 6.0
    resync_hz: float = 10.0
    resync_tol: float = 0.02  # rad

    def __post_init__(self):
        self.q_home = as_joint_vector(self.q_home)
        if self.rho0 <= 0:
            raise ValueError("rho0 must be positive")
        if self.k_att < 0 or self.k_rep < 0:
            raise ValueError("gains must be non-negative")
        if self.rate_hz <= 0 or self.resync_hz <= 0:
            raise ValueError("rates must be positive")


def load_scenario(path):
    """Read a JSONL obstacle stream: one ``{"stamp": s, "position": [x, y, z]}`` per line."""
    samples = []
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        rec = json.loads(line)
        s = ObstacleSample(rec["position"], float(rec["stamp"]))
        if samples and s.stamp < samples[-1].stamp:
            raise ValueError(f"{path}:{n}: stamps must not decrease")
        samples.append(s)
    return samples


def obstacle_at(samples, t):
    """Obstacle position at time ``t``, linearly interpolated; ``None`` outside the stream."""
    if not samples or t < samples[0].stamp or t > samples[-1].stamp:
        return None
    stamps = [s.stamp for s in samples]
    i = int(np.searchsorted(stamps, t, side="right")) - 1
    a = samples[i]
    if i + 1 >= len(samples):
        return a.position
    b = samples[i + 1]
    span = b.stamp - a.stamp
    if span <= 0:
        return b.position
    u = (t - a.stamp) / span
    return a.position + u * (b.position - a.position)


def repulsive_force(x, x_obs, cfg):
    """Gradient of the classical repulsive potential at the flange (zero beyond ``rho0``)."""
    if x_obs is None:
        return np.zeros(3), math.inf
    d = x - x_obs
    rho = float(np.linalg.norm(d))
    if rho >= cfg.rho0:
        return np.zeros(3), rho
    rho_c = max(rho, 1e-6)
    mag = cfg.k_rep * (1.0 / rho_c - 1.0 / cfg.rho0) / rho_c**2
    return mag * d / rho_c, rho


def _z(g, q):
    return joint_frames(g, q)[-1][2, 3]


def potential_field_step(q, obstacle, cfg, g=None, dt=None):
    """One control step: ``q + dt * qdot`` limited by joint speed, joint range and the table top."""
    g = g or default_geometry()
    dt = 1.0 / cfg.rate_hz if dt is None else dt
    q = as_joint_vector(q)
    if not g.within_limits(q):
        raise LimitError("configuration outside joint limits")
    if isinstance(obstacle, ObstacleSample):
        obstacle = obstacle.position
    frames = joint_frames(g, q)
    x = frames[-1][:3, 3]
    F, _ = repulsive_force(x, obstacle, cfg)
    J = jacobian(g, q, check=False)
    qd = cfg.k_att * (cfg.q_home - q) + J[:3].T @ F
    peak = np.max(np.abs(qd) / g.qd_max)
    if peak > 1.0:
        qd = qd / peak
    q_next = g.clamp(q + dt * qd)

    if _z(g, q_next) < cfg.z_floor:
        dq = q_next - q
        jz = J[2]
        excess = _z(g, q_next) - cfg.z_floor
        q_proj = g.clamp(q + dq - jz * excess / (jz @ jz))
        if _z(g, q_proj) >= cfg.z_floor:
            q_next = q_proj
        else:
            q_next = _floor_bisect(g, q, q_next - q, cfg.z_floor)
    return q_next


def _floor_bisect(g, q, dq, z_floor, iters=30):
    if _z(g, q) < z_floor:
        # already under the table: only allow moves that do not go lower
        return q + dq if _z(g, q + dq) >= _z(g, q) else q.copy()
    lo, hi = 0.0, 1.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if _z(g, q + mid * dq) >= z_floor:
            lo = mid
        else:
            hi = mid
    return q + lo * dq


def simulate(samples, cfg, g=None, duration=None, q0=None):
    """Run the control law open-loop at ``cfg.rate_hz``; yields ``(stamp, q, rho, x_eef)``."""
    g = g or default_geometry()
    dt = 1.0 / cfg.rate_hz
    q = cfg.q_home.copy() if q0 is None else as_joint_vector(q0)
    n = _cycle_count(samples, cfg, duration)
    for k in range(n):
        stamp = k * dt
        obs = obstacle_at(samples, stamp)
        q = potential_field_step(q, obs, cfg, g, dt)
        x = joint_frames(g, q)[-1][:3, 3]
        rho = math.inf if obs is None else float(np.linalg.norm(x - obs))
        yield stamp, q, rho, x


def _cycle_count(samples, cfg, duration):
    if duration is None:
        duration = (samples[-1].stamp if samples else 0.0) + cfg.settle_s
    return int(round(duration * cfg.rate_hz))


def _record(stamp, q, rho, x):
    return {
        "stamp": stamp,
        "q": [float(v) for v in q],
        "rho": None if math.isinf(rho) else rho,
        "x_eef": [float(v) for v in x],
    }


def rate_stats(send_times):
    """Mean rate (Hz) and 99th-percentile gap (ms) of a series of send times."""
    t = np.asarray(send_times, dtype=float)
    if t.size < 2:
        return 0.0, math.inf
    gaps = np.diff(t)
    return float((t.size - 1) / (t[-1] - t[0])), float(np.percentile(gaps, 99) * 1e3)


def run_avoidance_demo(t, samples, cfg=None, trace_path=None, duration=None):
    """Stream potential-field targets to the robot; returns the trace footer.

    On a virtual-time server the loop drives the clock itself (``simTick``),
    so stamps and the whole trace are reproducible.  On a wall-clock server
    it paces itself at ``cfg.rate_hz``.
    """
    cfg = cfg or AvoidanceConfig()
    g = client._geometry(t)
    virtual = bool(t.virtual)
    dt = 1.0 / cfg.rate_hz
    n = _cycle_count(samples, cfg, duration)
    resync_every = max(1, int(round(cfg.rate_hz / cfg.resync_hz)))
    server_dt = t.dt or 0.005

    client.movePTPJointSpace(t, cfg.q_home, 0.5)
    q = client.getJointsPos(t)
    records, send_times = [], []
    min_rho, resyncs = math.inf, 0
    ticks = 0
    client.realTime_startDirectServoJoints(t)
    start = time.perf_counter()
    try:
        for k in range(n):
            if virtual:
                stamp = k * dt
            else:
                due = start + k * dt
                while True:
                    now = time.perf_counter()
                    if now >= due:
                        break
                    time.sleep(min(due - now, 0.002) if due - now > 0.0005 else 0)
                stamp = now - start
            obs = obstacle_at(samples, stamp)
            q = potential_field_step(q, obs, cfg, g, dt)
            client.sendJointsPositions(t, q)
            send_times.append(stamp)
            x = joint_frames(g, q)[-1][:3, 3]
            rho = math.inf if obs is None else float(np.linalg.norm(x - obs))
            min_rho = min(min_rho, rho)
            records.append(_record(stamp, q, rho, x))
            if virtual:
                target = int(math.floor((k + 1) * dt / server_dt + 1e-9))
                if target > ticks:
                    t.request("simTick", target - ticks)
                    ticks = target
            if (k + 1) % resync_every == 0:
                q_meas = client.getJointsPos(t)
                if np.max(np.abs(q_meas - q)) > cfg.resync_tol:
                    log.warning("shadow state drifted, resynchronising at t=%.3f", stamp)
                    q = q_meas
                    resyncs += 1
        client.realTime_stopDirectServoJoints(t)
    except Disconnected:
        log.error("connection lost; writing partial trace")
        raise
    finally:
        rate, p99 = rate_stats(send_times)
        footer = {
            "footer": True,
            "virtual": virtual,
            "cycles": len(send_times),
            "mean_rate_hz": rate,
            "p99_gap_ms": p99,
            "min_rho": None if math.isinf(min_rho) else min_rho,
            "z_floor": cfg.z_floor,
            "resyncs": resyncs,
        }
        if trace_path is not None:
            write_trace(trace_path, records, footer)
    footer["final_q"] = [float(v) for v in q]
    return footer


def write_trace(path, records, footer):
    with open(path, "w") as f:
        for rec in records:
            f.write(json.dumps(rec) + "\n")
        f.write(json.dumps(footer) + "\n")


def read_trace(path):
    """Trace records and footer."""
    recs = [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
    if recs and recs[-1].get("footer"):
        return recs[:-1], recs[-1]
    return recs, None
