"""Error taxonomy and the numeric status codes shared with the wire protocol.

Every error that can cross a connection maps onto a :class:`Status` code so
that a client talking to a remote server observes the same failure as a
client holding the object in-process.  Errors that can only occur locally
(``HandleDead``, ``ConnectionLost``, registry file problems, ...) have no
status code and never travel.
"""

from __future__ import annotations

import enum


class Status(enum.IntEnum):
    """Numeric error channel of the wire protocol.  0 means success."""

    OK = 0
    NO_INTERFACE = 1
    CLASS_NOT_REGISTERED = 2
    SERVER_NOT_FOUND = 3
    NOT_INITIALIZED = 4
    ALREADY_INITIALIZED = 5
    UNKNOWN_OBJECT = 6
    NO_SUCH_METHOD = 7
    BAD_ARITY = 8
    COUNT_OVERFLOW = 9
    REMOTE_FAULT = 10
    PROTOCOL_ERROR = 11
    VERSION_TOO_OLD = 12
    FACTORY_FAILURE = 13
    COMPONENT_ERROR = 14
    ACTIVATION_TIMEOUT = 15
    # Component-defined failures ride the same channel, above the runtime's
    # own range, so behaviour is identical on local and proxied routes.
    ALARM_NOT_FOUND = 100
    TIMER_ALREADY_RUNNING = 101
    TIMER_NOT_RUNNING = 102


class MicrocomError(Exception):
    """Base class for every error raised by the runtime."""

    status: Status | None = None


# --- identifier errors -------------------------------------------------

class MalformedGuid(MicrocomError):
    pass


class RandomnessUnavailable(MicrocomError):
    pass


# --- registry errors ---------------------------------------------------

class RegistryCorrupt(MicrocomError):
    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class IoFailure(MicrocomError):
    pass


class InvalidRegistration(MicrocomError):
    pass


class ClassNotRegistered(MicrocomError):
    status = Status.CLASS_NOT_REGISTERED


# --- object model errors -----------------------------------------------

class NoInterface(MicrocomError):
    status = Status.NO_INTERFACE


class HandleDead(MicrocomError):
    pass


class CountOverflow(MicrocomError):
    status = Status.COUNT_OVERFLOW


class NotInitialized(MicrocomError):
    status = Status.NOT_INITIALIZED


class AlreadyInitialized(MicrocomError):
    status = Status.ALREADY_INITIALIZED


class NoSuchMethod(MicrocomError):
    status = Status.NO_SUCH_METHOD


class BadArity(MicrocomError):
    status = Status.BAD_ARITY


class ComponentError(MicrocomError):
    status = Status.COMPONENT_ERROR


class AlarmNotFound(ComponentError):
    status = Status.ALARM_NOT_FOUND


class TimerAlreadyRunning(ComponentError):
    status = Status.TIMER_ALREADY_RUNNING


class TimerNotRunning(ComponentError):
    status = Status.TIMER_NOT_RUNNING


# --- activation errors -------------------------------------------------

class VersionTooOld(MicrocomError):
    status = Status.VERSION_TOO_OLD


class FactoryFailure(MicrocomError):
    status = Status.FACTORY_FAILURE


class ServerNotFound(MicrocomError):
    status = Status.SERVER_NOT_FOUND


class ActivationTimeout(MicrocomError):
    status = Status.ACTIVATION_TIMEOUT


class DuplicateRegistration(MicrocomError):
    pass


# --- wire errors -------------------------------------------------------

class ProtocolError(MicrocomError):
    status = Status.PROTOCOL_ERROR


class UnknownObject(MicrocomError):
    status = Status.UNKNOWN_OBJECT


class ConnectionLost(MicrocomError):
    pass


class BindFailure(MicrocomError):
    pass


class RemoteFault(MicrocomError):
    """A peer returned a nonzero status that has no richer local meaning."""

    status = Status.REMOTE_FAULT

    def __init__(self, message: str, remote_status: int = 0):
        super().__init__(message)
        self.remote_status = remote_status


_STATUS_TO_ERROR: dict[int, type[MicrocomError]] = {}
for _cls in list(globals().values()):
    if (
        isinstance(_cls, type)
        and issubclass(_cls, MicrocomError)
        and getattr(_cls, "status", None) is not None
    ):
        _STATUS_TO_ERROR.setdefault(int(_cls.status), _cls)
_STATUS_TO_ERROR[int(Status.COMPONENT_ERROR)] = ComponentError
del _cls


def status_of(exc: BaseException) -> Status:
    """Map an exception onto the wire status used to report it to a peer."""
    if isinstance(exc, MicrocomError) and exc.status is not None:
        return exc.status
    return Status.REMOTE_FAULT


def error_for_status(status: int, message: str) -> MicrocomError:
    """Rebuild the local exception for a nonzero status received off the wire."""
    cls = _STATUS_TO_ERROR.get(status)
    if cls is None or cls is RemoteFault:
        return RemoteFault(message or f"remote status {status}", remote_status=status)
    return cls(message)
