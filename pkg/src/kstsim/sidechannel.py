"""Helpers for the side-channel (simulated world) port.

The side channel stands in for everything a person or the environment does
to the real robot: pressing flange buttons, driving input pins, pushing on
the flange, moving the arm by hand.  In virtual-time mode it also owns the
clock.
"""

import numpy as np

from .connection import open_connection
from .kinematics import N_JOINTS
from .protocol import DEFAULT_SIDE_PORT
from .sim import INPUT_PINS, OUTPUT_PINS, Button, Edge, Led, Mode


def open_side_channel(host="127.0.0.1", port=DEFAULT_SIDE_PORT, timeout=3.0):
    return open_connection(host, port, timeout=timeout)


def inject_button(s, button, edge):
    """``button`` is ``"WHITE"``/``"GREEN"``, ``edge`` is ``"PRESS"``/``"RELEASE"`` (or the enums)."""
    b = Button[button.upper()] if isinstance(button, str) else Button(button)
    e = Edge[edge.upper()] if isinstance(edge, str) else Edge(edge)
    s.request("injectButton", int(b), int(e))


def inject_pin(s, pin, level):
    s.request("injectPin", int(pin), 1 if level else 0)


def inject_wrench(s, wrench):
    """Base-frame ``[fx, fy, fz, mx, my, mz]`` acting at the flange origin."""
    s.request("injectWrench", *(float(v) for v in np.ravel(wrench)))


def inject_guide_pose(s, q):
    s.request("injectGuidePose", *(float(v) for v in np.ravel(q)))


def sim_tick(s, n=1):
    """Advance a virtual-time server by ``n`` ticks; returns the new tick count."""
    return int(s.request("simTick", int(n))[0])


def get_mode(s):
    return Mode(int(s.request("getMode")[0]))


def get_state(s):
    p = s.request("getState")
    i = 3
    q = np.array(p[i:i + N_JOINTS])
    i += N_JOINTS
    qd = np.array(p[i:i + N_JOINTS])
    i += N_JOINTS
    wrench = np.array(p[i:i + 6])
    i += 6
    pins_out = dict(zip(OUTPUT_PINS, p[i:i + len(OUTPUT_PINS)]))
    i += len(OUTPUT_PINS)
    pins_in = dict(zip(INPUT_PINS, p[i:i + len(INPUT_PINS)]))
    return {
        "mode": Mode(int(p[0])),
        "led": Led(int(p[1])),
        "tick": int(p[2]),
        "q": q,
        "qd": qd,
        "wrench": wrench,
        "pins_out": pins_out,
        "pins_in": pins_in,
    }


def trace_enable(s, on=True):
    s.request("traceEnable", 1 if on else 0)


def trace_drain(s):
    """Per-tick joint samples recorded since the last drain: ``(ticks, q)`` arrays."""
    flat = np.array(s.request("traceDrain"), dtype=float).reshape(-1, N_JOINTS + 1)
    return flat[:, 0].astype(int), flat[:, 1:]
