"""Shared test helpers: scripted sessions and tracked object runtimes."""

from microcom.activation import factory_create_instance, initialize_object
from microcom.guid import Guid
from microcom.interfaces import (
    IID_IALARM,
    IID_ICLASS_FACTORY,
    IID_ICLOCK,
    IID_IECHO,
    IID_IINITIALIZE,
    IID_ITIMER,
    IID_IUNKNOWN,
)
from microcom.objects import ObjectRuntime
from microcom.scm import ActivationRequest
from microcom.wire import render_value

ALL_WELL_KNOWN_IIDS = [
    IID_IUNKNOWN,
    IID_ICLASS_FACTORY,
    IID_IINITIALIZE,
    IID_ICLOCK,
    IID_IALARM,
    IID_ITIMER,
    IID_IECHO,
]

CLOCK_IID_SET = frozenset({IID_IUNKNOWN, IID_IINITIALIZE, IID_ICLOCK, IID_IALARM, IID_ITIMER})
ECHO_IID_SET = frozenset({IID_IUNKNOWN, IID_IECHO})


def qi_success_set(handle, candidates=ALL_WELL_KNOWN_IIDS) -> frozenset[Guid]:
    """Which of the candidate interfaces the handle's object admits to."""
    from microcom.errors import NoInterface

    supported = set()
    for iid in candidates:
        try:
            h = handle.query_interface(iid)
        except NoInterface:
            continue
        h.release()
        supported.add(iid)
    return frozenset(supported)


def tracked_runtime() -> tuple[ObjectRuntime, list, list]:
    """An ObjectRuntime that records created and destroyed objects."""
    runtime = ObjectRuntime()
    created: list = []
    destroyed: list = []

    def observe(obj):
        created.append(obj)
        obj.destruction_hooks.append(destroyed.append)

    runtime.creation_observers.append(observe)
    return runtime, created, destroyed


# The 20-call mixed clock script used by the location-transparency checks.
_CLOCK_SCRIPT = [
    ("clock", "set_time", (5,)),
    ("clock", "get_time", ()),
    ("clock", "advance", (10,)),
    ("clock", "get_time", ()),
    ("alarm", "set_alarm", (30,)),
    ("alarm", "set_alarm", (20,)),
    ("alarm", "next_alarm", ()),
    ("clock", "advance", (10,)),
    ("alarm", "next_alarm", ()),
    ("alarm", "cancel_alarm", (30,)),
    ("alarm", "next_alarm", ()),
    ("timer", "start", ()),
    ("clock", "advance", (7,)),
    ("timer", "elapsed", ()),
    ("timer", "stop", ()),
    ("clock", "advance", (5,)),
    ("timer", "elapsed", ()),
    ("clock", "set_time", (100,)),
    ("alarm", "next_alarm", ()),
    ("clock", "get_time", ()),
]


def scm_create_instance(scm, clsid, iid):
    """The one-step creation path, expressed against a bare Scm facade."""
    factory = activate_factory(scm, clsid)
    try:
        return factory_create_instance(factory, iid)
    finally:
        factory.release()


def clock_session_transcript(create_instance, clsid: Guid) -> str:
    """One scripted client session rendered canonically.

    ``create_instance`` is any callable ``(clsid, iid) -> handle``.  Identity
    tokens are route-dependent and never appear in the transcript; identity
    *equalities* do.
    """
    lines = []
    obj = create_instance(clsid, IID_ICLOCK)
    lines.append("created")
    initialize_object(obj, [0])
    lines.append("initialized")

    clock = obj.query_interface(IID_ICLOCK)
    alarm = obj.query_interface(IID_IALARM)
    timer = obj.query_interface(IID_ITIMER)
    handles = {"clock": clock, "alarm": alarm, "timer": timer}
    lines.append(f"identity-consistent {all(h.identity_token == obj.identity_token for h in handles.values())}")

    assert len(_CLOCK_SCRIPT) == 20
    for role, method, args in _CLOCK_SCRIPT:
        result = handles[role].call_by_name(method, *args)
        rendered = render_value(result)
        lines.append(f"{role}.{method}{list(args)} -> {rendered}")

    for name in ("clock", "alarm", "timer"):
        lines.append(f"release {name} -> {handles[name].release()}")
    lines.append(f"release object -> {obj.release()}")
    return "\n".join(lines) + "\n"


def activate_factory(scm, clsid, iid=IID_ICLASS_FACTORY):
    return scm.activate(ActivationRequest(clsid=clsid, iid=iid))


def make_clock_session(scm, clsid):
    """create + initialize a clock through an Scm facade (no library context)."""
    factory = activate_factory(scm, clsid)
    try:
        obj = factory_create_instance(factory, IID_ICLOCK)
    finally:
        factory.release()
    initialize_object(obj, [0])
    return obj
