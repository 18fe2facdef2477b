"""The toolbox function surface, one function per controller command.

Names and argument order follow the original MATLAB toolbox so scripts port
line by line::

    t = net_establishConnection("127.0.0.1")
    movePTPJointSpace(t, [pi/3, 0, 0, -pi/2, 0, pi/6, pi/2], 0.25)
    jPos = getJointsPos(t)
    net_turnOffServer(t)

Lengths are millimetres, angles radians, forces newtons, moments newton
metres.  Motion calls block until the robot has stopped.
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .connection import CONNECT_TIMEOUT, open_connection
from .errors import BadArgs, BadMode
from .kinematics import N_JOINTS, as_joint_vector, default_geometry
from .sim import Mode

log = logging.getLogger(__name__)

HAND_GUIDING_EVENTS = ("teachPoint", "handGuidingEnd")


def _vec(values, n, what):
    v = np.asarray(values, dtype=float).reshape(-1)
    if v.shape != (n,):
        raise BadArgs(f"{what} needs {n} values, got {v.size}")
    if not np.all(np.isfinite(v)):
        raise BadArgs(f"{what} values must be finite")
    return [float(x) for x in v]


def _geometry(t):
    return t.geometry or default_geometry()


# -- networking ------------------------------------------------------------


def net_establishConnection(ip=None, port=None, timeout=CONNECT_TIMEOUT, geometry=None):
    """Connect to the controller at ``ip`` (``"host"`` or ``"host:port"``) and return the handle."""
    return open_connection(ip, port, timeout=timeout, geometry=geometry)


def net_turnOffServer(t):
    """Close the connection and tell the server to stop accepting clients."""
    try:
        t.request("net_turnOffServer", timeout=CONNECT_TIMEOUT)
    finally:
        t.close()


# -- real-time control -----------------------------------------------------


def realTime_startDirectServoJoints(t):
    t.request("realTime_startDirectServoJoints")
    t.servo_active = True


def realTime_stopDirectServoJoints(t):
    t.request("realTime_stopDirectServoJoints")
    t.servo_active = False


def sendJointsPositions(t, jPos):
    """Stream a joint target while direct servo is active (no reply)."""
    if not t.servo_active:
        raise BadMode("sendJointsPositions needs realTime_startDirectServoJoints first")
    q = as_joint_vector(jPos)
    _geometry(t).check_limits(q)
    t.send_nowait("sendJointsPositions", *(float(v) for v in q))


def sendJointsPositionsF(t, pos):
    """Stream a Cartesian flange target while direct servo is active (no reply)."""
    if not t.servo_active:
        raise BadMode("sendJointsPositionsF needs realTime_startDirectServoJoints first")
    t.send_nowait("sendJointsPositionsF", *_vec(pos, 6, "pose"))


def realTime_moveOnPathInJointSpace(t, path, vel):
    """Move through a list of joint configurations, stopping briefly at each."""
    flat = []
    for q in path:
        flat.extend(_vec(q, N_JOINTS, "joint configuration"))
    t.request("realTime_moveOnPathInJointSpace", *flat, float(vel))


# -- point-to-point motion ---------------------------------------------------


def movePTPJointSpace(t, jPos, vel):
    """Joint-space move; ``vel`` is the override in (0, 1]."""
    t.request("movePTPJointSpace", *_vec(jPos, N_JOINTS, "jPos"), float(vel))


def movePTPLineEEF(t, pos, vel):
    """Straight flange move to ``pos = [x, y, z, alpha, beta, gamma]`` at ``vel`` mm/s."""
    t.request("movePTPLineEEF", *_vec(pos, 6, "pos"), float(vel))


def movePTPHomeJointSpace(t, vel=0.25):
    t.request("movePTPHomeJointSpace", float(vel))


def movePTPTransportPositionJointSpace(t, vel=0.25):
    t.request("movePTPTransportPositionJointSpace", float(vel))


def movePTPLineEefRelBase(t, pos, vel):
    """Straight move by an offset expressed in base axes."""
    t.request("movePTPLineEefRelBase", *_vec(pos, 6, "pos"), float(vel))


def movePTPLineEefRelEef(t, pos, vel):
    """Straight move by an offset expressed in the current flange frame."""
    t.request("movePTPLineEefRelEef", *_vec(pos, 6, "pos"), float(vel))


def movePTPCirc1OrientationInterpolation(t, frame1, frame2, vel):
    """Arc through ``frame1`` ending at ``frame2``; orientation blends to ``frame2``'s."""
    t.request("movePTPCirc1OrientationInterpolation", *_vec(frame1, 6, "frame1"), *_vec(frame2, 6, "frame2"), float(vel))


def movePTPArc_AC(t, center, normal, radius, theta, vel):
    """Arc of ``theta`` rad about ``normal`` through the circle of ``radius`` around ``center``.

    The flange must already lie on that circle.
    """
    n = np.asarray(_vec(normal, 3, "normal"))
    norm = np.linalg.norm(n)
    if norm == 0:
        raise BadArgs("normal must be non-zero")
    t.request("movePTPArc_AC", *_vec(center, 3, "center"), *(n / norm), float(radius), float(theta), float(vel))


def _plane_arc(tag, t, center, radius, theta, vel):
    t.request(tag, *_vec(center, 2, "center"), float(radius), float(theta), float(vel))


def movePTPArcXY_AC(t, center, radius, theta, vel):
    """Arc in the horizontal plane at the current height, turning from +x toward +y."""
    _plane_arc("movePTPArcXY_AC", t, center, radius, theta, vel)


def movePTPArcXZ_AC(t, center, radius, theta, vel):
    """Arc in the XZ plane at the current y, turning from +x toward +z."""
    _plane_arc("movePTPArcXZ_AC", t, center, radius, theta, vel)


def movePTPArcYZ_AC(t, center, radius, theta, vel):
    """Arc in the YZ plane at the current x, turning from +y toward +z."""
    _plane_arc("movePTPArcYZ_AC", t, center, radius, theta, vel)


# -- setters ---------------------------------------------------------------


def sendEEFPositions(t, pos):
    """Store a Cartesian pose in controller memory (see :func:`getStoredEEFPositions`)."""
    t.request("sendEEFPositions", *_vec(pos, 6, "pos"))


def getStoredEEFPositions(t):
    return np.reshape(t.request("getStoredEEFPositions"), (-1, 6))


def setBlueOn(t):
    t.request("setBlueOn")


def setBlueOff(t):
    t.request("setBlueOff")


def setPin1On(t):
    t.request("setPin1On")


def setPin1Off(t):
    t.request("setPin1Off")


def setPin2On(t):
    t.request("setPin2On")


def setPin2Off(t):
    t.request("setPin2Off")


def setPin11On(t):
    t.request("setPin11On")


def setPin11Off(t):
    t.request("setPin11Off")


def setPin12On(t):
    t.request("setPin12On")


def setPin12Off(t):
    t.request("setPin12Off")


# -- getters ---------------------------------------------------------------


def getJointsPos(t):
    return np.array(t.request("getJointsPos"))


def getEEFPos(t):
    """``[x, y, z, alpha, beta, gamma]`` of the flange in the base frame."""
    return np.array(t.request("getEEFPos"))


def getEEFCartesianPosition(t):
    return np.array(t.request("getEEFCartesianPosition"))


def getEEFCartesianOrientation(t):
    return np.array(t.request("getEEFCartesianOrientation"))


def getEEFOrientationR(t):
    return np.reshape(t.request("getEEFOrientationR"), (3, 3))


def getEEFOrientationQuat(t):
    """Unit quaternion ``[w, x, y, z]`` with ``w >= 0``."""
    return np.array(t.request("getEEFOrientationQuat"))


def getEEF_Force(t):
    """Force on the flange, in flange coordinates (N)."""
    return np.array(t.request("getEEF_Force"))


def getEEF_Moment(t):
    """Moment on the flange, in flange coordinates (N m)."""
    return np.array(t.request("getEEF_Moment"))


def getJointsExternalTorques(t):
    return np.array(t.request("getJointsExternalTorques"))


def getJointsMeasuredTorques(t):
    return np.array(t.request("getJointsMeasuredTorques"))


def getMeasuredTorqueAtJoint(t, k):
    """Measured torque of joint ``k`` (1-based)."""
    return t.request("getMeasuredTorqueAtJoint", int(k))[0]


def getExternalTorqueAtJoint(t, k):
    """External torque of joint ``k`` (1-based)."""
    return t.request("getExternalTorqueAtJoint", int(k))[0]


def getPin3State(t):
    return int(t.request("getPin3State")[0])


def getPin4State(t):
    return int(t.request("getPin4State")[0])


def getPin10State(t):
    return int(t.request("getPin10State")[0])


def getPin13State(t):
    return int(t.request("getPin13State")[0])


def getPin16State(t):
    return int(t.request("getPin16State")[0])


# -- physical interaction --------------------------------------------------


@dataclass
class TeachEvent:
    q: np.ndarray
    pose: np.ndarray
    stamp: float

    @classmethod
    def from_frame(cls, frame):
        a = frame.args
        return cls(np.array(a[:7], dtype=float), np.array(a[7:13], dtype=float), float(a[13]))

    def to_record(self):
        return {"q": [float(v) for v in self.q], "pose": [float(v) for v in self.pose], "stamp": self.stamp}

    @classmethod
    def from_record(cls, rec):
        return cls(np.array(rec["q"], dtype=float), np.array(rec["pose"], dtype=float), float(rec["stamp"]))


def startHandGuiding(t, timeout=None):
    """Enter hand guiding and block until the operator ends it with the green button.

    Returns the points captured during this session (zero or one: holding
    the green button captures the current pose if the arm was guided, and
    releasing it afterwards ends the session).
    """
    t.request("startHandGuiding")
    events = []
    while True:
        ev = t.wait_event(HAND_GUIDING_EVENTS, timeout)
        if ev.tag == "handGuidingEnd":
            return events
        events.append(TeachEvent.from_frame(ev))


def teach_by_hand_guiding(t, timeout=None, max_points=None):
    """Repeat hand-guiding sessions until one ends without a captured point."""
    points = []
    while max_points is None or len(points) < max_points:
        got = startHandGuiding(t, timeout)
        if not got:
            break
        points.extend(got)
    return points


def save_teach_path(events, path):
    with open(path, "w") as f:
        for ev in events:
            f.write(json.dumps(ev.to_record()) + "\n")


def load_teach_path(path):
    lines = Path(path).read_text().splitlines()
    return [TeachEvent.from_record(json.loads(line)) for line in lines if line.strip()]


def eventFunctionAtDoubleHit(t, stamp):
    """Default reaction to a double touch: log it."""
    log.info("double hit detected at t=%.3f s", stamp)


def performEventFunctionAtDoubleHit(t, callback=eventFunctionAtDoubleHit, timeout=None):
    """Arm double-touch detection, wait for two taps on the flange, then call ``callback(t, stamp)``."""
    t.request("performEventFunctionAtDoubleHit")
    ev = t.wait_event(("eventFunctionAtDoubleHit",), timeout)
    stamp = float(ev.args[0]) if ev.args else 0.0
    if callback is not None:
        return callback(t, stamp)
    return stamp


# -- extras ----------------------------------------------------------------


def getMode(t):
    return Mode(int(t.request("getMode")[0]))
