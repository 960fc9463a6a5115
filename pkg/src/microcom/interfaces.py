"""Interface identities and their frozen method tables.

An interface is a published contract: a Guid plus an ordered method table.
Dispatch everywhere in the runtime is by ``(iid, method ordinal)`` so that a
call looks the same whether the target object lives in-process or behind a
connection.  Ordinals are assigned 0..n-1 in declaration order and are frozen
for the lifetime of an interface version.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import BadArity, NoSuchMethod
from .guid import Guid, guid_parse


@dataclass(frozen=True)
class MethodInfo:
    ordinal: int
    name: str
    arity: int


@dataclass(frozen=True)
class InterfaceId:
    """An interface Guid together with its ordered method table."""

    iid: Guid
    name: str
    methods: tuple[MethodInfo, ...] = field(default=())

    def __post_init__(self):
        for i, m in enumerate(self.methods):
            if m.ordinal != i:
                raise ValueError(
                    f"{self.name}: ordinals must be 0..n-1 in declaration order"
                )

    def method(self, ordinal: int) -> MethodInfo:
        if not 0 <= ordinal < len(self.methods):
            raise NoSuchMethod(f"{self.name} has no method ordinal {ordinal}")
        return self.methods[ordinal]

    def check_call(self, ordinal: int, args: list) -> MethodInfo:
        m = self.method(ordinal)
        if len(args) != m.arity:
            raise BadArity(
                f"{self.name}.{m.name} takes {m.arity} argument(s), got {len(args)}"
            )
        return m

    def ordinal_of(self, name: str) -> int:
        for m in self.methods:
            if m.name == name:
                return m.ordinal
        raise NoSuchMethod(f"{self.name} has no method named {name!r}")


def _table(iid_text: str, name: str, *methods: tuple[str, int]) -> InterfaceId:
    return InterfaceId(
        iid=guid_parse(iid_text),
        name=name,
        methods=tuple(
            MethodInfo(ordinal=i, name=m, arity=a) for i, (m, a) in enumerate(methods)
        ),
    )


# Published interface ids: generated once, frozen here and in the docs.
IUNKNOWN = _table(
    "{FEF90232-BAA3-4975-BDD0-D1C08E931A09}",
    "IUnknown",
    ("query_interface", 1),
    ("add_ref", 0),
    ("release", 0),
)
ICLASS_FACTORY = _table(
    "{0BAE0298-3607-4DF7-99B8-E5615139252F}",
    "IClassFactory",
    ("create_instance", 1),
)
IINITIALIZE = _table(
    "{FEE83369-2450-48F6-B949-BC4BC554C7F3}",
    "IInitialize",
    ("initialize", 1),
)
ICLOCK = _table(
    "{936792BB-AACF-46EE-8110-F1A175998792}",
    "IClock",
    ("get_time", 0),
    ("set_time", 1),
    ("advance", 1),
)
IALARM = _table(
    "{93BD708B-250D-4B5D-94B7-B3F7690EED2E}",
    "IAlarm",
    ("set_alarm", 1),
    ("cancel_alarm", 1),
    ("next_alarm", 0),
)
ITIMER = _table(
    "{963A2F03-68B8-47D0-90EF-CB33FA51400C}",
    "ITimer",
    ("start", 0),
    ("stop", 0),
    ("elapsed", 0),
)
IECHO = _table(
    "{7EC3F67F-D44A-4517-8A55-256442162B2F}",
    "IEcho",
    ("echo", 1),
)

IID_IUNKNOWN = IUNKNOWN.iid
IID_ICLASS_FACTORY = ICLASS_FACTORY.iid
IID_IINITIALIZE = IINITIALIZE.iid
IID_ICLOCK = ICLOCK.iid
IID_IALARM = IALARM.iid
IID_ITIMER = ITIMER.iid
IID_IECHO = IECHO.iid

WELL_KNOWN_INTERFACES: dict[Guid, InterfaceId] = {
    t.iid: t for t in (IUNKNOWN, ICLASS_FACTORY, IINITIALIZE, ICLOCK, IALARM, ITIMER, IECHO)
}

_BY_NAME = {t.name: t for t in WELL_KNOWN_INTERFACES.values()}


def interface_by_name(name: str) -> InterfaceId:
    try:
        return _BY_NAME[name]
    except KeyError:
        raise NoSuchMethod(f"no published interface named {name!r}") from None
