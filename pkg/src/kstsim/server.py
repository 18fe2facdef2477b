"""TCP front end for :class:`~kstsim.sim.RobotSim`.

Two listeners share one simulator: the control port (one client at a time)
and the side-channel port used by tests and tooling to press buttons, set
input pins, apply wrenches and, in virtual-time mode, advance the clock.

Only the executor thread touches the simulator.  Reader threads decode lines
and queue them; streamed servo targets go through a one-slot mailbox so only
the newest one is ever applied.
"""

import json
import logging
import queue
import socket
import threading
import time

from .errors import BadMode
from .protocol import (
    DEFAULT_PORT,
    DEFAULT_SIDE_PORT,
    PROTOCOL_VERSION,
    ParseError,
    Response,
    decode_frame,
    encode_frame,
    encode_response,
)
from .sim import STREAM_TAGS, Mode, RobotSim

log = logging.getLogger(__name__)

CONTROL = "control"
SIDE = "side"


class Mailbox:
    """One-slot buffer that keeps only the newest item."""

    def __init__(self):
        self._lock = threading.Lock()
        self._item = None

    def put(self, item):
        with self._lock:
            self._item = item

    def take(self):
        with self._lock:
            item, self._item = self._item, None
        return item


class _Peer:
    def __init__(self, sock, role):
        self.sock = sock
        self.role = role
        self.alive = True
        self._lock = threading.Lock()

    def send(self, msg):
        data = encode_response(msg) if isinstance(msg, Response) else encode_frame(msg)
        with self._lock:
            if not self.alive:
                return
            try:
                self.sock.sendall(data)
            except OSError:
                self.alive = False

    def close(self):
        with self._lock:
            self.alive = False
            try:
                self.sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            self.sock.close()


class SimServer:
    """Serve a simulator on a control port and a side-channel port.

    ``virtual=True`` freezes the clock: time only advances through
    ``simTick`` commands, and blocking motions are fast-forwarded so they
    complete without waiting.  Ports may be 0 to pick free ones.
    """

    def __init__(self, sim=None, host="127.0.0.1", port=DEFAULT_PORT, side_port=DEFAULT_SIDE_PORT,
                 virtual=False, trace_path=None):
        self.sim = sim or RobotSim()
        self.host = host
        self.virtual = virtual
        self.trace_path = trace_path
        self._requested = (port, side_port)
        self.port = None
        self.side_port = None
        self._queue = queue.Queue()
        self._mailbox = Mailbox()
        self._control = None
        self._control_lock = threading.Lock()
        self._listeners = []
        self._threads = []
        self._stopped = threading.Event()
        self._trace_file = None

    # -- lifecycle -----------------------------------------------------------

    def start(self):
        control = self._listen(self._requested[0])
        side = self._listen(self._requested[1])
        self.port = control.getsockname()[1]
        self.side_port = side.getsockname()[1]
        if self.trace_path:
            self._trace_file = open(self.trace_path, "w")
        self._spawn(self._executor, "kst-executor")
        self._spawn(self._accept_loop, "kst-accept-control", control, CONTROL)
        self._spawn(self._accept_loop, "kst-accept-side", side, SIDE)
        log.info("serving control on %s:%d, side channel on %s:%d (%s time)",
                 self.host, self.port, self.host, self.side_port, "virtual" if self.virtual else "wall-clock")
        return self

    def _listen(self, port):
        s = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        s.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        s.bind((self.host, port))
        s.listen(4)
        self._listeners.append(s)
        return s

    def _spawn(self, target, name, *args):
        t = threading.Thread(target=target, args=args, name=name, daemon=True)
        t.start()
        self._threads.append(t)
        return t

    def serve_forever(self):
        if self.port is None:
            self.start()
        try:
            while not self._stopped.wait(0.2):
                pass
        finally:
            self.stop()

    def stop(self):
        self._stopped.set()
        self._close_listeners()
        self._queue.put(("stop", None, None))
        with self._control_lock:
            if self._control is not None:
                self._control.close()
                self._control = None
        for t in self._threads:
            if t is not threading.current_thread() and t.name == "kst-executor":
                t.join(timeout=2.0)
        if self._trace_file is not None:
            self._trace_file.close()
            self._trace_file = None

    @property
    def stopped(self):
        return self._stopped.is_set()

    def _close_listeners(self):
        for s in self._listeners:
            try:
                # shutdown wakes a thread blocked in accept(); close alone does not
                s.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            try:
                s.close()
            except OSError:
                pass
        self._listeners = []

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()

    # -- networking threads --------------------------------------------------

    def _accept_loop(self, listener, role):
        while not self._stopped.is_set():
            try:
                sock, addr = listener.accept()
            except OSError:
                return
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            peer = _Peer(sock, role)
            if role == CONTROL:
                with self._control_lock:
                    busy = self._control is not None
                    if not busy:
                        self._control = peer
                if busy:
                    log.info("refusing second control connection from %s", addr)
                    peer.send(Response.error(0, BadMode.code))
                    peer.close()
                    continue
            log.info("%s connection from %s", role, addr)
            self._spawn(self._reader, f"kst-reader-{role}", peer)

    def _reader(self, peer):
        f = peer.sock.makefile("rb")
        try:
            for line in f:
                try:
                    frame = decode_frame(line)
                except ParseError as exc:
                    log.warning("bad line from %s client: %s", peer.role, exc)
                    peer.send(Response.error(0, "BAD_ARGS"))
                    continue
                if peer.role == CONTROL and frame.tag in STREAM_TAGS:
                    self._mailbox.put((peer, frame))
                else:
                    self._queue.put(("cmd", peer, frame))
        except OSError:
            pass
        finally:
            f.close()
            self._queue.put(("gone", peer, None))

    # -- executor ------------------------------------------------------------

    def _executor(self):
        dt = self.sim.cfg.dt
        next_tick = time.monotonic() + dt
        while True:
            timeout = None if self.virtual else max(0.0, next_tick - time.monotonic())
            try:
                kind, peer, frame = self._queue.get(timeout=timeout)
            except queue.Empty:
                kind = None
            if kind == "stop":
                return
            if kind is not None:
                self._drain_mailbox()
                if kind == "gone":
                    self._on_disconnect(peer)
                else:
                    self._handle(peer, frame)
            if not self.virtual:
                now = time.monotonic()
                if now >= next_tick:
                    self._drain_mailbox()
                    self._tick()
                    next_tick += dt
                    if now - next_tick > 10 * dt:
                        # fell far behind (suspended?): resynchronise instead of bursting
                        next_tick = now + dt
            self._flush_outbox()

    def _drain_mailbox(self):
        item = self._mailbox.take()
        if item is None:
            return
        peer, frame = item
        resp = self.sim.handle_command(frame)
        if resp is not None:
            peer.send(resp)

    def _tick(self):
        self.sim.tick()
        if self._trace_file is not None:
            st = self.sim.state
            rec = {
                "t": round(self.sim.time, 9),
                "mode": st.mode.name,
                "q": [float(v) for v in st.q],
                "led": st.led_blue.name,
                "pins_out": {str(k): v for k, v in st.pins_out.items()},
                "pins_in": {str(k): v for k, v in st.pins_in.items()},
            }
            self._trace_file.write(json.dumps(rec) + "\n")

    def _flush_outbox(self):
        out = self.sim.take_outbox()
        if not out:
            return
        with self._control_lock:
            control = self._control
        if control is None:
            return
        for msg in out:
            control.send(msg)

    def _on_disconnect(self, peer):
        peer.close()
        if peer.role != CONTROL:
            return
        with self._control_lock:
            if self._control is peer:
                self._control = None
            else:
                return
        log.info("control client disconnected")
        self.sim.on_control_disconnect()
        self.sim.take_outbox()

    def _handle(self, peer, frame):
        tag = frame.tag
        if tag == "hello":
            peer.send(Response(frame.seq, payload=[PROTOCOL_VERSION, int(self.virtual), self.sim.cfg.dt]))
            return
        if tag == "bye":
            peer.send(Response(frame.seq))
            peer.close()
            return
        if tag == "net_turnOffServer":
            peer.send(Response(frame.seq))
            log.info("turn-off requested by %s client", peer.role)
            self._stopped.set()
            self._close_listeners()
            peer.close()
            return
        if tag == "simTick":
            self._sim_tick(peer, frame)
            return
        resp = self.sim.handle_command(frame)
        if self.virtual and self.sim.state.mode == Mode.EXECUTING:
            while self.sim.state.mode == Mode.EXECUTING:
                self._tick()
        if resp is not None:
            peer.send(resp)

    def _sim_tick(self, peer, frame):
        if not self.virtual:
            peer.send(Response.error(frame.seq, BadMode.code))
            return
        if len(frame.args) != 1 or not isinstance(frame.args[0], int) or frame.args[0] < 0:
            peer.send(Response.error(frame.seq, "BAD_ARGS"))
            return
        for _ in range(frame.args[0]):
            self._tick()
        peer.send(Response(frame.seq, payload=[self.sim.state.tick]))

