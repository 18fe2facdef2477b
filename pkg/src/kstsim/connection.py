"""Client side of the control link.

:class:`Connection` is the ``t`` handle every toolbox function takes.  A
background reader thread sorts incoming lines into responses (matched by
sequence number) and unsolicited reports (teach points, double hits, servo
reports), so blocking calls never lose an event.
"""

import logging
import os
import queue
import socket
import threading
import time

from .errors import BadMode, ConnectFailed, Disconnected, VersionMismatch, error_for_code
from .protocol import (
    DEFAULT_PORT,
    PROTOCOL_VERSION,
    ProtocolError,
    Response,
    WireFrame,
    decode_line,
    encode_frame,
)

log = logging.getLogger(__name__)

ADDRESS_ENV = "KST_ADDRESS"
DEFAULT_HOST = "127.0.0.1"
CONNECT_TIMEOUT = 3.0


def parse_address(address=None, port=None):
    """``"host"``, ``"host:port"`` or ``None`` (``$KST_ADDRESS`` / localhost)."""
    if address is None:
        address = os.environ.get(ADDRESS_ENV, DEFAULT_HOST)
    host, sep, p = str(address).rpartition(":")
    if not sep:
        host, p = address, None
    if port is None:
        port = int(p) if p else int(os.environ.get("KST_PORT", DEFAULT_PORT))
    return host or DEFAULT_HOST, int(port)


class Connection:
    """An open control connection (not thread-safe for concurrent calls)."""

    def __init__(self, sock, geometry=None):
        self.sock = sock
        self.geometry = geometry
        self.version = None
        self.virtual = False
        self.dt = None
        self.servo_active = False
        self.last_servo_report = None
        self.async_errors = []
        self._seq = 0
        self._call_lock = threading.Lock()
        self._send_lock = threading.Lock()
        self._cond = threading.Condition()
        self._responses = {}
        self._events = queue.Queue()
        self._closed = False
        self._waiting = set()
        self._stash = []
        self._reader = threading.Thread(target=self._read_loop, name="kst-client-reader", daemon=True)
        self._reader.start()

    # -- plumbing ------------------------------------------------------------

    def _read_loop(self):
        f = self.sock.makefile("rb")
        try:
            for line in f:
                try:
                    msg = decode_line(line)
                except ProtocolError as exc:
                    log.warning("undecodable line from server: %s", exc)
                    continue
                if isinstance(msg, Response):
                    with self._cond:
                        if msg.seq in self._waiting:
                            self._responses[msg.seq] = msg
                            self._cond.notify_all()
                        else:
                            self.async_errors.append(msg)
                            log.warning("unsolicited response %s", msg)
                elif msg.tag == "servoReport":
                    self.last_servo_report = msg.args
                else:
                    self._events.put(msg)
        except (OSError, ValueError):
            pass
        finally:
            with self._cond:
                self._closed = True
                self._cond.notify_all()
            self._events.put(None)

    def _send(self, tag, args, expect_reply=False):
        with self._send_lock:
            self._seq += 1
            seq = self._seq
            data = encode_frame(WireFrame(seq, tag, list(args)))
            if expect_reply:
                with self._cond:
                    self._waiting.add(seq)
            if self._closed:
                raise Disconnected("connection is closed")
            try:
                self.sock.sendall(data)
            except OSError as exc:
                raise Disconnected(str(exc)) from exc
        return seq

    def request(self, tag, *args, timeout=None):
        """Send a command and block for its response; returns the payload list."""
        with self._call_lock:
            seq = None
            try:
                seq = self._send(tag, args, expect_reply=True)
                with self._cond:
                    ok = self._cond.wait_for(lambda: seq in self._responses or self._closed, timeout)
                    resp = self._responses.pop(seq, None)
            finally:
                with self._cond:
                    self._waiting.discard(seq if seq is not None else self._seq)
        if resp is None:
            if not ok:
                raise TimeoutError(f"no response to {tag} within {timeout} s")
            raise Disconnected(f"connection lost while waiting for {tag}")
        if not resp.ok:
            raise error_for_code(resp.err_code, f"{tag}: {resp.err_code}")
        return resp.payload

    def send_nowait(self, tag, *args):
        """Fire-and-forget frame (streaming targets)."""
        self._send(tag, args)

    def next_event(self, timeout=None):
        """Next unsolicited report frame; raises Disconnected or TimeoutError."""
        try:
            ev = self._events.get(timeout=timeout)
        except queue.Empty:
            raise TimeoutError(f"no event within {timeout} s") from None
        if ev is None:
            self._events.put(None)
            raise Disconnected("connection closed")
        return ev

    def wait_event(self, tags, timeout=None):
        """Next report whose tag is in ``tags``; other reports are kept for later."""
        deadline = None if timeout is None else time.monotonic() + timeout
        for i, ev in enumerate(self._stash):
            if ev.tag in tags:
                return self._stash.pop(i)
        while True:
            remaining = None if deadline is None else max(0.0, deadline - time.monotonic())
            ev = self.next_event(remaining)
            if ev.tag in tags:
                return ev
            self._stash.append(ev)

    def drain_events(self):
        out, self._stash = self._stash, []
        while True:
            try:
                ev = self._events.get_nowait()
            except queue.Empty:
                return out
            if ev is None:
                self._events.put(None)
                return out
            out.append(ev)

    @property
    def closed(self):
        return self._closed

    def close(self):
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()
        self._reader.join(timeout=1.0)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def open_connection(address=None, port=None, timeout=CONNECT_TIMEOUT, geometry=None):
    """Connect and run the ``hello`` handshake."""
    host, port = parse_address(address, port)
    try:
        sock = socket.create_connection((host, port), timeout=timeout)
    except OSError as exc:
        raise ConnectFailed(f"cannot reach {host}:{port}: {exc}") from exc
    sock.settimeout(None)
    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    conn = Connection(sock, geometry=geometry)
    try:
        payload = conn.request("hello", PROTOCOL_VERSION, timeout=timeout)
    except BadMode as exc:
        conn.close()
        raise ConnectFailed(f"{host}:{port} already has a control client") from exc
    except (Disconnected, TimeoutError) as exc:
        conn.close()
        if any(r.err_code == BadMode.code for r in conn.async_errors):
            raise ConnectFailed(f"{host}:{port} already has a control client") from exc
        raise ConnectFailed(f"handshake with {host}:{port} failed: {exc}") from exc
    version = payload[0] if payload else None
    if version != PROTOCOL_VERSION:
        conn.close()
        raise VersionMismatch(f"server speaks protocol {version}, client {PROTOCOL_VERSION}")
    conn.version = version
    conn.virtual = bool(payload[1]) if len(payload) > 1 else False
    conn.dt = payload[2] if len(payload) > 2 else None
    return conn
