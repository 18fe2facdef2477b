"""Draw an a x b rectangle with four straight flange moves."""

import json
import logging

import numpy as np

from .. import client, sidechannel
from ..errors import KSTError, LimitError, Unreachable
from ..kinematics import forward_kinematics, inverse_kinematics
from .avoidance import HOME

log = logging.getLogger(__name__)

ORIGIN = (400.0, 0.0, 580.0, -np.pi, 0.0, -np.pi)


def rectangle_vertices(origin, a, b):
    """The five poses visited: origin, +a along x, +a+b, +b along y, origin again."""
    origin = np.asarray(origin, dtype=float)
    out = []
    for dx, dy in ((0, 0), (a, 0), (a, b), (0, b), (0, 0)):
        p = origin.copy()
        p[0] += dx
        p[1] += dy
        out.append(p)
    return out


def _approach(t, origin):
    g = client._geometry(t)
    seeds = [client.getJointsPos(t), HOME, g.transport]
    for seed in seeds:
        try:
            return inverse_kinematics(g, origin, seed)
        except (Unreachable, LimitError):
            continue
    raise Unreachable(f"rectangle origin {list(np.round(origin, 3))} is out of reach")


def run_rectangle_demo(t, origin=ORIGIN, a=100.0, b=50.0, v=50.0, side=None, trace_path=None, override=0.25):
    """Move to ``origin`` then trace the rectangle; returns the traced samples.

    With a side-channel connection ``side`` every controller tick of the four
    edges is recorded as ``{"edge", "tick", "q", "pose"}``.
    """
    g = client._geometry(t)
    origin = np.asarray(origin, dtype=float)
    verts = rectangle_vertices(origin, a, b)
    client.movePTPJointSpace(t, _approach(t, origin), override)
    if side is not None:
        sidechannel.trace_enable(side, True)
        sidechannel.trace_drain(side)
    records = []
    try:
        for edge, vert in enumerate(verts[1:], 1):
            try:
                client.movePTPLineEEF(t, vert, v)
            except KSTError as exc:
                raise type(exc)(f"edge {edge}: {exc}") from exc
            if side is None:
                continue
            ticks, qs = sidechannel.trace_drain(side)
            for tick, q in zip(ticks, qs):
                pose, _ = forward_kinematics(g, q, check=False)
                records.append({
                    "edge": edge,
                    "tick": int(tick),
                    "q": [float(x) for x in q],
                    "pose": [float(x) for x in pose],
                })
    finally:
        if side is not None:
            sidechannel.trace_enable(side, False)
        if trace_path is not None:
            with open(trace_path, "w") as f:
                for rec in records:
                    f.write(json.dumps(rec) + "\n")
    final = client.getEEFPos(t)
    log.info("rectangle done, flange at %s", np.round(final, 3))
    return {"vertices": verts, "records": records, "final_pose": final}


def segment_distance(p, a, b):
    """Distance from points ``p`` (n x 3) to the segment ``a``-``b``."""
    p = np.atleast_2d(p)
    ab = b - a
    L2 = ab @ ab
    if L2 == 0:
        return np.linalg.norm(p - a, axis=1)
    u = np.clip((p - a) @ ab / L2, 0.0, 1.0)
    return np.linalg.norm(p - (a + u[:, None] * ab), axis=1)


def edge_errors(records, vertices):
    """Per edge: worst distance of traced positions from the ideal edge and the end-corner miss."""
    out = []
    for edge in range(1, 5):
        pts = np.array([r["pose"][:3] for r in records if r["edge"] == edge]).reshape(-1, 3)
        a, b = vertices[edge - 1][:3], vertices[edge][:3]
        dev = float(segment_distance(pts, a, b).max()) if len(pts) else 0.0
        corner = float(np.linalg.norm(pts[-1] - b)) if len(pts) else 0.0
        out.append({"edge": edge, "samples": len(pts), "max_deviation": dev, "corner_error": corner})
    return out
