"""Sample components: a three-interface clock and a minimal echo object.

The clock runs on virtual time: nothing moves unless a client calls
``advance`` (or ``set_time``), so every behaviour is deterministic given the
call sequence.  The echo object is born initialized and exists to exercise
the marshaling layer with arbitrary values.
"""

from __future__ import annotations

from .errors import (
    AlarmNotFound,
    ComponentError,
    TimerAlreadyRunning,
    TimerNotRunning,
)
from .guid import Guid, guid_parse
from .interfaces import (
    IALARM,
    ICLOCK,
    IECHO,
    IID_IALARM,
    IID_ICLOCK,
    IID_IECHO,
    IID_ITIMER,
    ITIMER,
)
from .objects import Component

# Published class ids of the sample components, frozen like the interface ids.
CLSID_CLOCK = guid_parse("{2273F9E5-B5FE-4801-80FA-036588F14629}")
CLSID_ECHO = guid_parse("{04D28D8D-4C0F-4A4B-8580-B3231C54B4E4}")


def _as_i64(value, what: str) -> int:
    # bool is an int subclass; a clock fed `true` is a caller bug
    if type(value) is not int:
        raise ComponentError(f"{what} must be an i64, got {type(value).__name__}")
    return value


class ClockComponent(Component):
    """The clock object: IClock, IAlarm and ITimer over one shared state."""

    interfaces = {IID_ICLOCK: ICLOCK, IID_IALARM: IALARM, IID_ITIMER: ITIMER}
    requires_initialization = True

    def __init__(self):
        self.virtual_now = 0
        self.alarms: list[int] = []  # sorted ascending, no duplicates
        self.timer_running = False
        self.timer_started_at = 0
        self.timer_accumulated = 0

    def initialize(self, args: list) -> None:
        if len(args) != 1:
            raise ComponentError("clock initialization takes exactly [start_seconds]")
        self.virtual_now = _as_i64(args[0], "start_seconds")

    def invoke(self, iid: Guid, ordinal: int, args: list):
        if iid == IID_ICLOCK:
            if ordinal == 0:  # get_time
                return self.virtual_now
            if ordinal == 1:  # set_time
                self.virtual_now = _as_i64(args[0], "set_time")
                return None
            self.virtual_now += _as_i64(args[0], "advance")  # advance
            return None
        if iid == IID_IALARM:
            if ordinal == 0:
                return self._set_alarm(_as_i64(args[0], "set_alarm"))
            if ordinal == 1:
                return self._cancel_alarm(_as_i64(args[0], "cancel_alarm"))
            return self._next_alarm()
        # ITimer
        if ordinal == 0:
            return self._start()
        if ordinal == 1:
            return self._stop()
        return self._elapsed()

    # -- alarms -----------------------------------------------------------

    def _set_alarm(self, when: int) -> None:
        if when not in self.alarms:
            self.alarms.append(when)
            self.alarms.sort()
        return None

    def _cancel_alarm(self, when: int) -> None:
        try:
            self.alarms.remove(when)
        except ValueError:
            raise AlarmNotFound(f"no alarm set for {when}") from None
        return None

    def _next_alarm(self) -> int | None:
        for when in self.alarms:
            if when >= self.virtual_now:
                return when
        return None

    # -- stopwatch over virtual time ---------------------------------------

    def _start(self) -> None:
        if self.timer_running:
            raise TimerAlreadyRunning("timer is already running")
        self.timer_running = True
        self.timer_started_at = self.virtual_now
        return None

    def _stop(self) -> None:
        if not self.timer_running:
            raise TimerNotRunning("timer is not running")
        self.timer_running = False
        # virtual time may have been set backwards; never accumulate negative
        self.timer_accumulated += max(0, self.virtual_now - self.timer_started_at)
        return None

    def _elapsed(self) -> int:
        total = self.timer_accumulated
        if self.timer_running:
            total += max(0, self.virtual_now - self.timer_started_at)
        return total


class EchoComponent(Component):
    """Codec exerciser: one method that returns its argument unchanged."""

    interfaces = {IID_IECHO: IECHO}

    def invoke(self, iid: Guid, ordinal: int, args: list):
        return args[0]


# Catalog of components loadable without any dynamic-module machinery,
# keyed by the suffix of a `builtin:<name>` registry location.
BUILTIN_CATALOG = {
    "clock": ClockComponent,
    "echo": EchoComponent,
}
