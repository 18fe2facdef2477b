"""Line-oriented ASCII codec for the controller link.

A request frame is ``<seq> <tag> [<arg> ...]\\n``; a response is
``<seq> OK [<value> ...]\\n`` or ``<seq> ERR <code>\\n``.  Unsolicited
server reports (``teachPoint``, ``servoReport`` ...) use the request grammar.

Scalars are rendered canonically so that every accepted line re-encodes to
the same bytes: integers (and integral floats below 1e16) as plain decimal,
everything else with ``repr``, which is the shortest string that parses back
to the same double.  The decoder rejects any non-canonical spelling.
"""

import math
import re
from dataclasses import dataclass, field

PROTOCOL_VERSION = 1
DEFAULT_PORT = 30001
DEFAULT_SIDE_PORT = 30002

MAX_TAG_LEN = 64
STATUS_OK = "OK"
STATUS_ERR = "ERR"
RESERVED_TAGS = frozenset({STATUS_OK, STATUS_ERR})
ERROR_CODES = ("BAD_ARGS", "BAD_MODE", "LIMIT", "UNREACHABLE", "UNKNOWN_CMD")

_TAG_RE = re.compile(r"[A-Za-z0-9_]{1,%d}\Z" % MAX_TAG_LEN)
_UINT_RE = re.compile(r"(0|[1-9][0-9]*)\Z")
_INT_RE = re.compile(r"-?(0|[1-9][0-9]*)\Z")


class ProtocolError(ValueError):
    pass


class InvalidTag(ProtocolError):
    pass


class NonFinite(ProtocolError):
    pass


class ParseError(ProtocolError):
    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


@dataclass
class WireFrame:
    seq: int
    tag: str
    args: list = field(default_factory=list)


@dataclass
class Response:
    seq: int
    status: str = STATUS_OK
    payload: list = field(default_factory=list)
    err_code: str | None = None

    @property
    def ok(self):
        return self.status == STATUS_OK

    @classmethod
    def error(cls, seq, code):
        return cls(seq, STATUS_ERR, [], code)


def render_scalar(x):
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, int):
        return str(x)
    x = float(x)
    if not math.isfinite(x):
        raise NonFinite(f"non-finite value {x!r}")
    if x == 0.0:
        return "-0" if math.copysign(1.0, x) < 0 else "0"
    if x.is_integer() and abs(x) < 1e16:
        return str(int(x))
    return repr(x)


def parse_scalar(token):
    """Parse one canonical scalar token; raise ValueError otherwise."""
    if token == "-0":
        return -0.0
    if _INT_RE.match(token):
        return int(token)
    value = float(token)
    if render_scalar(value) != token:
        raise ValueError(f"non-canonical number {token!r}")
    return value


def _check_tag(tag):
    if not isinstance(tag, str) or not _TAG_RE.match(tag):
        raise InvalidTag(f"invalid tag {tag!r}")
    if tag in RESERVED_TAGS:
        raise InvalidTag(f"tag {tag!r} is reserved for responses")


def _check_seq(seq):
    if isinstance(seq, bool) or not isinstance(seq, int) or seq < 0:
        raise ProtocolError(f"seq must be a non-negative integer, got {seq!r}")


def encode_frame(frame):
    _check_seq(frame.seq)
    _check_tag(frame.tag)
    parts = [str(frame.seq), frame.tag]
    parts.extend(render_scalar(a) for a in frame.args)
    return (" ".join(parts) + "\n").encode("ascii")


def encode_response(resp):
    _check_seq(resp.seq)
    if resp.status == STATUS_OK:
        parts = [str(resp.seq), STATUS_OK]
        parts.extend(render_scalar(v) for v in resp.payload)
    elif resp.status == STATUS_ERR:
        if resp.err_code not in ERROR_CODES:
            raise ProtocolError(f"unknown error code {resp.err_code!r}")
        parts = [str(resp.seq), STATUS_ERR, resp.err_code]
    else:
        raise ProtocolError(f"bad status {resp.status!r}")
    return (" ".join(parts) + "\n").encode("ascii")


def _split(line):
    """Split an LF-terminated line into (token, offset) pairs."""
    if isinstance(line, str):
        line = line.encode("latin-1", errors="replace")
    if not line.endswith(b"\n"):
        raise ParseError("line is not LF-terminated", len(line))
    body = line[:-1]
    for i, b in enumerate(body):
        if b == 0x0A:
            raise ParseError("embedded LF", i)
        if b < 0x20 or b > 0x7E:
            raise ParseError("non-printable or non-ASCII byte", i)
    text = body.decode("ascii")
    tokens = []
    pos = 0
    for tok in text.split(" "):
        if not tok:
            raise ParseError("empty token (stray space)", pos)
        tokens.append((tok, pos))
        pos += len(tok) + 1
    return tokens


def _parse_seq(tok, off):
    try:
        if _UINT_RE.match(tok):
            return int(tok)
    except ValueError:
        pass
    raise ParseError(f"bad sequence number {tok!r}", off)


def _parse_values(tokens):
    values = []
    for tok, off in tokens:
        try:
            values.append(parse_scalar(tok))
        except ValueError:
            raise ParseError(f"bad scalar {tok!r}", off) from None
    return values


def decode_frame(line):
    tokens = _split(line)
    seq = _parse_seq(*tokens[0])
    if len(tokens) < 2:
        raise ParseError("missing tag", len(tokens[0][0]))
    tag, off = tokens[1]
    if not _TAG_RE.match(tag) or tag in RESERVED_TAGS:
        raise ParseError(f"bad tag {tag!r}", off)
    return WireFrame(seq, tag, _parse_values(tokens[2:]))


def decode_response(line):
    tokens = _split(line)
    seq = _parse_seq(*tokens[0])
    if len(tokens) < 2:
        raise ParseError("missing status", len(tokens[0][0]))
    status, off = tokens[1]
    if status == STATUS_OK:
        return Response(seq, STATUS_OK, _parse_values(tokens[2:]))
    if status == STATUS_ERR:
        if len(tokens) != 3 or tokens[2][0] not in ERROR_CODES:
            bad_off = tokens[2][1] if len(tokens) > 2 else len(line) - 1
            raise ParseError("ERR needs exactly one known error code", bad_off)
        return Response.error(seq, tokens[2][0])
    raise ParseError(f"bad status {status!r}", off)


def decode_line(line):
    """Decode either a response or a report frame, by the second token."""
    if isinstance(line, str):
        line = line.encode("latin-1", errors="replace")
    tokens = line.rstrip(b"\n").split(b" ", 2)
    if len(tokens) >= 2 and tokens[1] in (b"OK", b"ERR"):
        return decode_response(line)
    return decode_frame(line)
