"""Exception hierarchy shared by the simulator and the client SDK.

Every error that can travel over the wire carries an ``code`` token; the
server turns a raised :class:`KSTError` into ``ERR <code>`` and the client
turns ``ERR <code>`` back into the matching exception class.
"""


class KSTError(Exception):
    code = "BAD_ARGS"


class BadArgs(KSTError, ValueError):
    code = "BAD_ARGS"


class BadMode(KSTError):
    code = "BAD_MODE"


class LimitError(KSTError):
    code = "LIMIT"


class Unreachable(KSTError):
    code = "UNREACHABLE"

    def __init__(self, message="", index=None):
        super().__init__(message)
        self.index = index


class UnknownCommand(KSTError):
    code = "UNKNOWN_CMD"


ERROR_CLASSES = {cls.code: cls for cls in (BadArgs, BadMode, LimitError, Unreachable, UnknownCommand)}


def error_for_code(code, message=""):
    return ERROR_CLASSES[code](message or code)


class Disconnected(ConnectionError):
    """The control connection dropped while a call was in flight."""


class ConnectFailed(ConnectionError):
    pass


class VersionMismatch(ConnectionError):
    pass
