"""Kinematic simulation of the robot controller.

:class:`RobotSim` owns the :class:`RobotState`, executes planned
trajectories tick by tick, tracks streamed servo targets, runs the
hand-guiding button protocol and answers every command of the wire
vocabulary.  It is single-threaded; :mod:`kstsim.server` serialises network
traffic onto it.
"""

import enum
import logging
import math
import re
from dataclasses import dataclass, field

import numpy as np

from . import motion
from .errors import BadArgs, BadMode, KSTError, UnknownCommand
from .kinematics import (
    N_JOINTS,
    as_joint_vector,
    default_geometry,
    external_torques,
    ik_step,
    joint_frames,
    matrix_from_pose,
    pose_from_matrix,
)
from .protocol import Response, WireFrame
from .rotations import matrix_to_quat

log = logging.getLogger(__name__)

OUTPUT_PINS = (1, 2, 11, 12)
INPUT_PINS = (3, 4, 10, 13, 16)


class Mode(enum.IntEnum):
    IDLE = 0
    EXECUTING = 1
    DIRECT_SERVO = 2
    HAND_GUIDING = 3


class Led(enum.IntEnum):
    OFF = 0
    ON = 1
    FLICKER = 2


class Button(enum.IntEnum):
    WHITE = 0
    GREEN = 1


class Edge(enum.IntEnum):
    RELEASE = 0
    PRESS = 1


@dataclass
class SimConfig:
    dt: float = motion.DT
    green_hold_s: float = 1.5
    double_hit_threshold: float = 20.0  # N
    double_hit_window_s: float = 0.5
    servo_report_every: int = 16
    default_override: float = 0.25


@dataclass
class HandGuide:
    white_pressed: bool = False
    green_pressed_since: int | None = None  # tick of the green press
    moved: bool = False  # white pressed at least once this session
    flickering: bool = False
    led_before: Led = Led.OFF
    guide_target: np.ndarray | None = None


@dataclass
class RobotState:
    q: np.ndarray
    mode: Mode = Mode.IDLE
    qd: np.ndarray = field(default_factory=lambda: np.zeros(N_JOINTS))
    external_wrench: np.ndarray = field(default_factory=lambda: np.zeros(6))
    pins_out: dict = field(default_factory=lambda: {p: 0 for p in OUTPUT_PINS})
    pins_in: dict = field(default_factory=lambda: {p: 0 for p in INPUT_PINS})
    led_blue: Led = Led.OFF
    handguide: HandGuide = field(default_factory=HandGuide)
    tick: int = 0

    def fingerprint(self):
        """Hashable summary of everything except the clock."""
        hg = self.handguide
        return (
            int(self.mode),
            self.q.tobytes(),
            self.qd.tobytes(),
            self.external_wrench.tobytes(),
            tuple(sorted(self.pins_out.items())),
            tuple(sorted(self.pins_in.items())),
            int(self.led_blue),
            hg.white_pressed,
            hg.green_pressed_since,
            hg.moved,
            hg.flickering,
            int(hg.led_before),
            None if hg.guide_target is None else hg.guide_target.tobytes(),
        )


MOTION_TAGS = frozenset(
    {
        "movePTPJointSpace",
        "movePTPLineEEF",
        "movePTPHomeJointSpace",
        "movePTPTransportPositionJointSpace",
        "movePTPLineEefRelBase",
        "movePTPLineEefRelEef",
        "movePTPCirc1OrientationInterpolation",
        "movePTPArc_AC",
        "movePTPArcXY_AC",
        "movePTPArcXZ_AC",
        "movePTPArcYZ_AC",
        "realTime_moveOnPathInJointSpace",
    }
)
STREAM_TAGS = frozenset({"sendJointsPositions", "sendJointsPositionsF"})
GETTER_TAGS = frozenset(
    {
        "getJointsPos",
        "getEEFPos",
        "getEEFCartesianPosition",
        "getEEFCartesianOrientation",
        "getEEF_Force",
        "getEEF_Moment",
        "getJointsExternalTorques",
        "getJointsMeasuredTorques",
        "getMeasuredTorqueAtJoint",
        "getExternalTorqueAtJoint",
        "getEEFOrientationR",
        "getEEFOrientationQuat",
        "getStoredEEFPositions",
        "getMode",
        "getState",
    }
    | {f"getPin{p}State" for p in INPUT_PINS}
)

_SET_PIN_RE = re.compile(r"setPin(\d+)(On|Off)\Z")
_GET_PIN_RE = re.compile(r"getPin(\d+)State\Z")


def _nargs(args, *counts):
    if len(args) not in counts:
        raise BadArgs(f"expected {' or '.join(map(str, counts))} arguments, got {len(args)}")


def _flat(*parts):
    out = []
    for p in parts:
        out.extend(float(v) for v in np.ravel(p))
    return out


class RobotSim:
    """The simulated controller.

    ``handle_command`` answers a frame immediately, or returns ``None`` for
    motions (answered from ``tick`` on completion) and for accepted stream
    targets.  Unsolicited frames for the control client accumulate in
    ``outbox``.
    """

    def __init__(self, geometry=None, config=None, q0=None):
        self.g = geometry or default_geometry()
        self.cfg = config or SimConfig()
        q0 = self.g.home if q0 is None else q0
        self.state = RobotState(q=self.g.check_limits(q0).copy())
        self.outbox = []
        self.stored_poses = []
        self.trace = None  # list of (tick, q) while enabled
        self._traj = None
        self._traj_index = 0
        self._pending_seq = None
        self._servo_target = None
        self._servo_count = 0
        self._double_hit_armed = False
        self._spikes = []
        self._above = False
        self._hold_ticks = int(round(self.cfg.green_hold_s / self.cfg.dt))
        self._hit_window_ticks = int(round(self.cfg.double_hit_window_s / self.cfg.dt))

    # -- clock ---------------------------------------------------------------

    @property
    def time(self):
        return self.state.tick * self.cfg.dt

    def _step_toward(self, target):
        st = self.state
        max_step = self.g.qd_max * self.cfg.dt
        diff = target - st.q
        # snap when within one step, with slack for accumulated rounding
        q_new = np.where(np.abs(diff) <= max_step * (1 + 1e-9), target, st.q + np.sign(diff) * max_step)
        q_new = self.g.clamp(q_new)
        st.qd = (q_new - st.q) / self.cfg.dt
        st.q = q_new

    def tick(self):
        st = self.state
        st.tick += 1
        self._detect_double_hit()
        if st.mode == Mode.EXECUTING:
            self._traj_index += 1
            q_new = self._traj.samples[self._traj_index]
            st.qd = (q_new - st.q) / self.cfg.dt
            st.q = q_new.copy()
            if self._traj_index == len(self._traj) - 1:
                self._finish_motion()
        elif st.mode == Mode.DIRECT_SERVO:
            if self._servo_target is not None:
                self._step_toward(self._servo_target)
            else:
                st.qd = np.zeros(N_JOINTS)
        elif st.mode == Mode.HAND_GUIDING:
            hg = st.handguide
            if hg.white_pressed and hg.guide_target is not None:
                self._step_toward(hg.guide_target)
            else:
                st.qd = np.zeros(N_JOINTS)
            if (
                hg.green_pressed_since is not None
                and not hg.flickering
                and st.tick - hg.green_pressed_since >= self._hold_ticks
            ):
                hg.flickering = True
                hg.led_before = st.led_blue
                st.led_blue = Led.FLICKER
                if hg.moved:
                    self.outbox.append(WireFrame(0, "teachPoint", _flat(st.q, self._pose(), self.time)))
        else:
            st.qd = np.zeros(N_JOINTS)
        if self.trace is not None:
            self.trace.append((st.tick, st.q.copy()))

    def _finish_motion(self):
        st = self.state
        st.mode = Mode.IDLE
        st.qd = np.zeros(N_JOINTS)
        self._traj = None
        if self._pending_seq is not None:
            self.outbox.append(Response(self._pending_seq))
            self._pending_seq = None

    def _detect_double_hit(self):
        force = np.linalg.norm(self.state.external_wrench[:3])
        above = force > self.cfg.double_hit_threshold
        rising = above and not self._above
        self._above = above
        if not (rising and self._double_hit_armed):
            return
        now = self.state.tick
        self._spikes = [t for t in self._spikes if now - t <= self._hit_window_ticks]
        self._spikes.append(now)
        if len(self._spikes) >= 2:
            self._double_hit_armed = False
            self._spikes = []
            self.outbox.append(WireFrame(0, "eventFunctionAtDoubleHit", [self.time]))

    # -- derived quantities --------------------------------------------------

    def _flange(self):
        return joint_frames(self.g, self.state.q)[-1]

    def _pose(self):
        return pose_from_matrix(self._flange())

    def _external_torques(self):
        return external_torques(self.g, self.state.q, self.state.external_wrench, check=False)

    # -- side-channel injections ---------------------------------------------

    def inject_guide_pose(self, q):
        q = as_joint_vector(q)
        if not self.g.within_limits(q):
            raise BadArgs("guide pose outside joint limits")
        self.state.handguide.guide_target = q.copy()

    def inject_button(self, button, edge):
        button, edge = Button(int(button)), Edge(int(edge))
        st = self.state
        hg = st.handguide
        if button == Button.WHITE:
            hg.white_pressed = edge == Edge.PRESS
            if hg.white_pressed:
                # start from where the arm is, not from a stale guide pose
                hg.guide_target = st.q.copy()
                if st.mode == Mode.HAND_GUIDING:
                    hg.moved = True
            return
        if edge == Edge.PRESS:
            if hg.green_pressed_since is None:
                hg.green_pressed_since = st.tick
            return
        hg.green_pressed_since = None
        if st.mode == Mode.HAND_GUIDING and hg.flickering:
            st.led_blue = hg.led_before
            st.mode = Mode.IDLE
            st.qd = np.zeros(N_JOINTS)
            self.outbox.append(WireFrame(0, "handGuidingEnd", [self.time]))
            self._reset_handguide()

    def _reset_handguide(self):
        old = self.state.handguide
        self.state.handguide = HandGuide(white_pressed=old.white_pressed, green_pressed_since=old.green_pressed_since)

    def inject_wrench(self, wrench):
        w = np.asarray(wrench, dtype=float).reshape(-1)
        if w.shape != (6,) or not np.all(np.isfinite(w)):
            raise BadArgs("wrench needs 6 finite components")
        self.state.external_wrench = w.copy()

    def inject_pin(self, pin, level):
        pin = int(pin)
        if pin not in INPUT_PINS:
            raise BadArgs(f"pin {pin} is not an input; inputs are {INPUT_PINS}")
        self.state.pins_in[pin] = 1 if level else 0

    def on_control_disconnect(self):
        """Drop client-owned modes when the control client goes away."""
        st = self.state
        self._pending_seq = None
        self._double_hit_armed = False
        if st.mode == Mode.DIRECT_SERVO:
            st.mode = Mode.IDLE
            st.qd = np.zeros(N_JOINTS)
            self._servo_target = None
        elif st.mode == Mode.HAND_GUIDING:
            if st.handguide.flickering:
                st.led_blue = st.handguide.led_before
            st.mode = Mode.IDLE
            st.qd = np.zeros(N_JOINTS)
            self._reset_handguide()

    # -- command dispatch ----------------------------------------------------

    def handle_command(self, frame):
        try:
            payload = self._dispatch(frame)
        except KSTError as exc:
            log.debug("command %s failed: %s", frame.tag, exc)
            return Response.error(frame.seq, exc.code)
        except (ValueError, TypeError, IndexError) as exc:
            log.debug("command %s rejected: %s", frame.tag, exc)
            return Response.error(frame.seq, BadArgs.code)
        if payload is None:
            return None
        return Response(frame.seq, payload=payload)

    def _dispatch(self, frame):
        tag, args = frame.tag, frame.args
        if tag in MOTION_TAGS:
            return self._start_motion(frame)
        if tag in STREAM_TAGS:
            return self._stream_target(tag, args)
        if tag in GETTER_TAGS:
            return self._get(tag, args)
        m = _SET_PIN_RE.match(tag)
        if m:
            pin = int(m.group(1))
            if pin not in OUTPUT_PINS:
                raise UnknownCommand(tag)
            _nargs(args, 0)
            self.state.pins_out[pin] = 1 if m.group(2) == "On" else 0
            return []
        handler = getattr(self, "_cmd_" + tag, None)
        if handler is None:
            raise UnknownCommand(tag)
        return handler(args)

    def _cmd_setBlueOn(self, args):
        _nargs(args, 0)
        self._set_led(Led.ON)
        return []

    def _cmd_setBlueOff(self, args):
        _nargs(args, 0)
        self._set_led(Led.OFF)
        return []

    def _set_led(self, value):
        hg = self.state.handguide
        if self.state.mode == Mode.HAND_GUIDING and hg.flickering:
            hg.led_before = value
        else:
            self.state.led_blue = value

    def _cmd_sendEEFPositions(self, args):
        _nargs(args, 6)
        matrix_from_pose(args)
        self.stored_poses.append([float(a) for a in args])
        return []

    def _cmd_realTime_startDirectServoJoints(self, args):
        _nargs(args, 0)
        self._require(Mode.IDLE)
        self.state.mode = Mode.DIRECT_SERVO
        self._servo_target = None
        self._servo_count = 0
        return []

    def _cmd_realTime_stopDirectServoJoints(self, args):
        _nargs(args, 0)
        self._require(Mode.DIRECT_SERVO)
        self.state.mode = Mode.IDLE
        self.state.qd = np.zeros(N_JOINTS)
        self._servo_target = None
        return []

    def _cmd_startHandGuiding(self, args):
        _nargs(args, 0)
        self._require(Mode.IDLE)
        self.state.mode = Mode.HAND_GUIDING
        white = self.state.handguide.white_pressed
        self.state.handguide = HandGuide(white_pressed=white, moved=white, guide_target=self.state.q.copy())
        return []

    def _cmd_performEventFunctionAtDoubleHit(self, args):
        _nargs(args, 0)
        self._double_hit_armed = True
        self._spikes = []
        return []

    # side-channel test interface

    def _cmd_injectButton(self, args):
        _nargs(args, 2)
        self.inject_button(args[0], args[1])
        return []

    def _cmd_injectPin(self, args):
        _nargs(args, 2)
        self.inject_pin(args[0], args[1])
        return []

    def _cmd_injectWrench(self, args):
        _nargs(args, 6)
        self.inject_wrench(args)
        return []

    def _cmd_injectGuidePose(self, args):
        _nargs(args, N_JOINTS)
        self.inject_guide_pose(args)
        return []

    def _cmd_traceEnable(self, args):
        _nargs(args, 1)
        self.trace = [] if args[0] else None
        return []

    def _cmd_traceDrain(self, args):
        _nargs(args, 0)
        out = []
        for t, q in self.trace or ():
            out.append(t)
            out.extend(float(v) for v in q)
        if self.trace is not None:
            self.trace = []
        return out

    def _require(self, mode):
        if self.state.mode != mode:
            raise BadMode(f"requires mode {mode.name}, robot is {self.state.mode.name}")

    def _stream_target(self, tag, args):
        self._require(Mode.DIRECT_SERVO)
        if tag == "sendJointsPositions":
            _nargs(args, N_JOINTS)
            target = self.g.clamp(as_joint_vector(args))
        else:
            _nargs(args, 6)
            seed = self._servo_target if self._servo_target is not None else self.state.q
            target = ik_step(self.g, matrix_from_pose(args), seed)
        self._servo_target = target
        self._servo_count += 1
        if self._servo_count % self.cfg.servo_report_every == 0:
            self.outbox.append(WireFrame(0, "servoReport", _flat(self.state.q)))
        return None

    def _get(self, tag, args):
        st = self.state
        m = _GET_PIN_RE.match(tag)
        if m:
            _nargs(args, 0)
            return [st.pins_in[int(m.group(1))]]
        if tag in ("getMeasuredTorqueAtJoint", "getExternalTorqueAtJoint"):
            _nargs(args, 1)
            idx = args[0]
            if not (isinstance(idx, int) and 1 <= idx <= N_JOINTS):
                raise BadArgs(f"joint index must be 1..{N_JOINTS}")
            tau = self._external_torques()
            if tag == "getMeasuredTorqueAtJoint":
                tau = tau + self.g.torque_offset
            return [float(tau[idx - 1])]
        _nargs(args, 0)
        if tag == "getJointsPos":
            return _flat(st.q)
        if tag == "getMode":
            return [int(st.mode)]
        if tag == "getState":
            return self.state_payload()
        if tag == "getStoredEEFPositions":
            return _flat(self.stored_poses)
        if tag in ("getJointsExternalTorques", "getJointsMeasuredTorques"):
            tau = self._external_torques()
            if tag == "getJointsMeasuredTorques":
                tau = tau + self.g.torque_offset
            return _flat(tau)
        T = self._flange()
        R = T[:3, :3]
        if tag == "getEEFPos":
            return _flat(pose_from_matrix(T))
        if tag == "getEEFCartesianPosition":
            return _flat(T[:3, 3])
        if tag == "getEEFCartesianOrientation":
            return _flat(pose_from_matrix(T)[3:])
        if tag == "getEEFOrientationR":
            return _flat(R)
        if tag == "getEEFOrientationQuat":
            return _flat(matrix_to_quat(R))
        if tag == "getEEF_Force":
            return _flat(R.T @ st.external_wrench[:3])
        if tag == "getEEF_Moment":
            return _flat(R.T @ st.external_wrench[3:])
        raise UnknownCommand(tag)

    def state_payload(self):
        """``[mode, led, tick, q(7), qd(7), wrench(6), pins_out(4), pins_in(5)]``."""
        st = self.state
        return (
            [int(st.mode), int(st.led_blue), st.tick]
            + _flat(st.q, st.qd, st.external_wrench)
            + [st.pins_out[p] for p in OUTPUT_PINS]
            + [st.pins_in[p] for p in INPUT_PINS]
        )

    # -- motion --------------------------------------------------------------

    def _override_arg(self, args):
        _nargs(args, 0, 1)
        return args[0] if args else self.cfg.default_override

    def _plan(self, tag, args):
        g, st = self.g, self.state
        q = st.q
        if tag == "movePTPJointSpace":
            _nargs(args, N_JOINTS + 1)
            return motion.plan_joint_ptp(q, args[:N_JOINTS], args[N_JOINTS], g, self.cfg.dt)
        if tag == "movePTPHomeJointSpace":
            return motion.plan_joint_ptp(q, g.home, self._override_arg(args), g, self.cfg.dt)
        if tag == "movePTPTransportPositionJointSpace":
            return motion.plan_joint_ptp(q, g.transport, self._override_arg(args), g, self.cfg.dt)
        if tag == "realTime_moveOnPathInJointSpace":
            if len(args) < 1 or (len(args) - 1) % N_JOINTS:
                raise BadArgs("expects 7*k joint values followed by the override")
            points = np.reshape(args[:-1], (-1, N_JOINTS))
            return motion.plan_joint_path(points, args[-1], g, q, self.cfg.dt)

        T0 = self._flange()
        if tag == "movePTPLineEEF":
            _nargs(args, 7)
            path = motion.plan_line(T0, matrix_from_pose(args[:6]), args[6], self.cfg.dt)
        elif tag == "movePTPLineEefRelBase":
            _nargs(args, 7)
            path = motion.plan_line(T0, motion.relative_goal_base(T0, args[:6]), args[6], self.cfg.dt)
        elif tag == "movePTPLineEefRelEef":
            _nargs(args, 7)
            path = motion.plan_line(T0, motion.relative_goal_eef(T0, args[:6]), args[6], self.cfg.dt)
        elif tag == "movePTPCirc1OrientationInterpolation":
            _nargs(args, 13)
            spec = motion.ArcSpec("two_frames", via=np.array(args[0:6], float), end=np.array(args[6:12], float))
            path = motion.plan_arc(T0, spec, args[12], self.cfg.dt)
        elif tag == "movePTPArc_AC":
            _nargs(args, 9)
            spec = motion.ArcSpec(
                "center_normal", center=np.array(args[0:3], float), normal=np.array(args[3:6], float),
                radius=args[6], angle=args[7],
            )
            path = motion.plan_arc(T0, spec, args[8], self.cfg.dt)
        else:
            _nargs(args, 5)
            plane = tag[len("movePTPArc"):len("movePTPArc") + 2].lower()
            spec = motion.ArcSpec(plane, center=np.array(args[0:2], float), radius=args[2], angle=args[3])
            path = motion.plan_arc(T0, spec, args[4], self.cfg.dt)
        return motion.plan_cartesian(g, q, path)

    def _start_motion(self, frame):
        self._require(Mode.IDLE)
        traj = self._plan(frame.tag, frame.args)
        if len(traj) <= 1:
            return []
        self.execute(traj, frame.seq)
        return None

    def execute(self, traj, seq=None):
        """Run ``traj`` (first sample must be the current q) from the next tick on."""
        st = self.state
        if not np.array_equal(traj.samples[0], st.q):
            raise BadArgs("trajectory does not start at the current configuration")
        if not math.isclose(traj.dt, self.cfg.dt):
            traj = motion.resample(traj, self.cfg.dt)
        self._traj = traj
        self._traj_index = 0
        self._pending_seq = seq
        st.mode = Mode.EXECUTING

    def run_until_idle(self, max_ticks=10_000_000):
        n = 0
        while self.state.mode == Mode.EXECUTING and n < max_ticks:
            self.tick()
            n += 1
        return n

    def take_outbox(self):
        out, self.outbox = self.outbox, []
        return out
