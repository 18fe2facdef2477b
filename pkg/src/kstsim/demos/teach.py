"""Teach a path by hand guiding, save it, and play it back.

A session file stands in for the operator.  Each JSONL line is one action on
the side channel::

    {"op": "wait_mode", "mode": "HAND_GUIDING"}   # wait for the client to start guiding
    {"op": "button", "button": "WHITE", "edge": "PRESS"}
    {"op": "guide", "q": [7 joint angles]}         # where the operator pushes the arm
    {"op": "advance", "s": 1.0}                   # let time pass

``advance`` steps the clock on a virtual-time server and sleeps otherwise.
"""

import json
import logging
import math
import threading
import time
from pathlib import Path

import numpy as np

from .. import client, sidechannel
from ..sim import Mode

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 30.0


def load_session(path):
    ops = []
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        op = json.loads(line)
        if op.get("op") not in ("wait_mode", "button", "guide", "advance"):
            raise ValueError(f"{path}:{n}: unknown op {op.get('op')!r}")
        ops.append(op)
    return ops


class SessionDriver(threading.Thread):
    """Plays a session on the side channel in the background."""

    def __init__(self, side, ops, virtual, dt, poll=0.01, timeout=DEFAULT_TIMEOUT):
        super().__init__(name="kst-session-driver", daemon=True)
        self.side = side
        self.ops = ops
        self.virtual = virtual
        self.dt = dt
        self.poll = poll
        self.timeout = timeout
        self.error = None
        self._cancel = threading.Event()

    def cancel(self):
        self._cancel.set()

    def run(self):
        try:
            for op in self.ops:
                if self._cancel.is_set():
                    return
                self._do(op)
        except Exception as exc:  # reported by the demo
            self.error = exc

    def _do(self, op):
        kind = op["op"]
        if kind == "wait_mode":
            want = Mode[op["mode"]]
            deadline = time.monotonic() + self.timeout
            while sidechannel.get_mode(self.side) != want:
                if self._cancel.is_set():
                    return
                if time.monotonic() > deadline:
                    raise TimeoutError(f"robot never entered {want.name}")
                time.sleep(self.poll)
        elif kind == "button":
            sidechannel.inject_button(self.side, op["button"], op["edge"])
        elif kind == "guide":
            sidechannel.inject_guide_pose(self.side, op["q"])
        elif kind == "advance":
            if self.virtual:
                sidechannel.sim_tick(self.side, int(math.ceil(float(op["s"]) / self.dt - 1e-9)))
            else:
                time.sleep(float(op["s"]))


def run_teach_demo(t, side, session, path_file, override=0.25, timeout=DEFAULT_TIMEOUT):
    """Capture points by hand guiding, save them to ``path_file`` and replay them.

    ``session`` is a session file path or a list of ops.  Raises
    ``TimeoutError`` when a guiding session never ends.
    """
    ops = load_session(session) if isinstance(session, (str, Path)) else list(session)
    driver = SessionDriver(side, ops, t.virtual, t.dt or 0.005, timeout=timeout)
    driver.start()
    try:
        points = client.teach_by_hand_guiding(t, timeout=timeout)
    except TimeoutError as exc:
        driver.cancel()
        raise TimeoutError(
            f"hand-guiding session did not end within {timeout} s; "
            "the session must finish with a green-button release after the LED flickers"
        ) from exc
    finally:
        driver.join(timeout=5.0)
    if driver.error is not None:
        raise driver.error
    client.save_teach_path(points, path_file)
    log.info("captured %d points into %s", len(points), path_file)
    for ev in points:
        client.movePTPJointSpace(t, ev.q, override)
    final = client.getJointsPos(t)
    return {"points": points, "path_file": str(path_file), "final_q": final}


def replay(t, path_file, override=0.25):
    """Move through a saved teach path; returns the final joint angles."""
    for ev in client.load_teach_path(path_file):
        client.movePTPJointSpace(t, ev.q, override)
    return np.asarray(client.getJointsPos(t))
