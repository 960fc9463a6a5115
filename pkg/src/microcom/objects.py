"""The core object runtime: refcounted lifetime, interface dispatch, handles.

Every live component instance is wrapped in a :class:`LiveObject` that owns a
32-bit reference count.  Clients never touch objects directly; they hold
:class:`InterfaceHandle` values.  A handle is a single-use capability for one
reference unit: it is produced by creation, ``query_interface`` or ``add_ref``
and consumed by exactly one ``release``.  That discipline is what makes the
count-conservation invariant (count == number of live handles) checkable, and
it turns double-release into a detected error instead of undefined behaviour.

Destruction is immediate and exactly-once: the release that takes the count
to zero destroys the object and fires its destruction hooks before returning.
"""

from __future__ import annotations

import logging
import threading
from typing import Callable

from .errors import (
    AlreadyInitialized,
    ComponentError,
    CountOverflow,
    FactoryFailure,
    HandleDead,
    NoInterface,
    NoSuchMethod,
    NotInitialized,
)
from .guid import Guid, guid_format
from .interfaces import (
    ICLASS_FACTORY,
    IID_ICLASS_FACTORY,
    IID_IINITIALIZE,
    IID_IUNKNOWN,
    IINITIALIZE,
    IUNKNOWN,
    InterfaceId,
)

log = logging.getLogger(__name__)

MAX_REF_COUNT = 2**32 - 1


class Component:
    """Base class for component implementations.

    Subclasses declare the concrete interfaces they implement in
    ``interfaces`` (IUnknown and IInitialize are the runtime's business) and
    dispatch method calls in :meth:`invoke`.  A component that needs a
    post-creation initialization call sets ``requires_initialization`` and
    overrides :meth:`initialize`; others are born initialized.
    """

    interfaces: dict[Guid, InterfaceId] = {}
    requires_initialization: bool = False

    def initialize(self, args: list) -> None:
        raise ComponentError(f"{type(self).__name__} does not take initialization")

    def invoke(self, iid: Guid, ordinal: int, args: list):
        raise NoSuchMethod(f"{type(self).__name__} dispatches no methods")


def supported_iids_of(component: Component) -> frozenset[Guid]:
    iids = {IID_IUNKNOWN}
    if component.requires_initialization:
        iids.add(IID_IINITIALIZE)
    iids.update(component.interfaces)
    return frozenset(iids)


class LiveObject:
    """Runtime record for one live component instance.

    All count mutations and method calls are serialized on the object's own
    lock, which is also the per-object call-serialization guarantee component
    bodies rely on.  Destruction hooks run outside the lock, after the state
    transition, and exactly once.
    """

    def __init__(self, identity_token: int, component: Component):
        self.identity_token = identity_token
        self.component = component
        self.supported_iids = supported_iids_of(component)
        self._tables: dict[Guid, InterfaceId] = {IID_IUNKNOWN: IUNKNOWN}
        if component.requires_initialization:
            self._tables[IID_IINITIALIZE] = IINITIALIZE
        self._tables.update(component.interfaces)
        self._lock = threading.Lock()
        self._ref_count = 0
        self._initialized = not component.requires_initialization
        self._destroyed = False
        self._hooks_fired = False
        self.destruction_hooks: list[Callable[["LiveObject"], None]] = []

    @property
    def ref_count(self) -> int:
        with self._lock:
            return self._ref_count

    @property
    def initialized(self) -> bool:
        with self._lock:
            return self._initialized

    @property
    def destroyed(self) -> bool:
        with self._lock:
            return self._destroyed

    def supports(self, iid: Guid) -> bool:
        return iid in self.supported_iids

    # -- handle issuance and consumption --------------------------------

    def _issue_locked(self, iid: Guid) -> "InterfaceHandle":
        if self._destroyed:
            raise HandleDead("object already destroyed")
        if self._ref_count >= MAX_REF_COUNT:
            raise CountOverflow(f"reference count is already {MAX_REF_COUNT}")
        self._ref_count += 1
        handle = InterfaceHandle(LocalRoute(self), iid)
        handle.count_at_issue = self._ref_count
        return handle

    def issue_handle(self, iid: Guid) -> "InterfaceHandle":
        """Add one reference and hand out the handle that owns it."""
        with self._lock:
            return self._issue_locked(iid)

    def query_interface_issue(self, iid: Guid) -> "InterfaceHandle":
        with self._lock:
            if self._destroyed:
                raise HandleDead("object already destroyed")
            if iid not in self.supported_iids:
                raise NoInterface(f"object does not support {guid_format(iid)}")
            return self._issue_locked(iid)

    def release_one(self) -> int:
        destroy = False
        with self._lock:
            if self._destroyed:
                raise HandleDead("object already destroyed")
            self._ref_count -= 1
            new_count = self._ref_count
            if new_count == 0:
                self._destroyed = True
                destroy = True
        if destroy:
            self._fire_destruction_hooks()
        return new_count

    def _fire_destruction_hooks(self) -> None:
        if self._hooks_fired:  # unreachable by construction, kept as a guard
            return
        self._hooks_fired = True
        for hook in self.destruction_hooks:
            try:
                hook(self)
            except Exception:
                log.exception("destruction hook failed for object %d", self.identity_token)

    # -- method dispatch --------------------------------------------------

    def call(self, iid: Guid, ordinal: int, args: list):
        args = list(args)
        with self._lock:
            if self._destroyed:
                raise HandleDead("object already destroyed")
            table = self._tables.get(iid)
            if table is None:
                raise NoInterface(f"object does not support {guid_format(iid)}")
            if iid == IID_IUNKNOWN:
                # QueryInterface/AddRef/Release have dedicated operations
                # (and dedicated wire frames); they are not callable here.
                raise NoSuchMethod("IUnknown methods are not ordinal-dispatched")
            table.check_call(ordinal, args)
            if iid == IID_IINITIALIZE:
                if self._initialized:
                    raise AlreadyInitialized("object is already initialized")
                init_args = args[0]
                if not isinstance(init_args, list):
                    raise ComponentError("initialize takes a list of arguments")
                self.component.initialize(init_args)
                self._initialized = True
                return None
            if not self._initialized:
                raise NotInitialized("object has not been initialized")
            return self.component.invoke(iid, ordinal, args)


class LocalRoute:
    """Direct, in-process route from a handle to its object."""

    kind = "local"

    __slots__ = ("target",)

    def __init__(self, target: LiveObject):
        self.target = target

    @property
    def identity_token(self) -> int:
        return self.target.identity_token

    def query_interface(self, iid: Guid) -> "InterfaceHandle":
        return self.target.query_interface_issue(iid)

    def add_ref(self, iid: Guid) -> "InterfaceHandle":
        return self.target.issue_handle(iid)

    def release(self) -> int:
        return self.target.release_one()

    def call(self, iid: Guid, ordinal: int, args: list):
        return self.target.call(iid, ordinal, args)


class InterfaceHandle:
    """A client's typed reference to one interface of one live object.

    Consumed by exactly one successful :meth:`release`; any later operation
    through it raises :class:`HandleDead` and mutates nothing.
    """

    __slots__ = ("iid", "_route", "_alive", "_lock", "count_at_issue")

    def __init__(self, route, iid: Guid):
        self._route = route
        self.iid = iid
        self._alive = True
        self._lock = threading.Lock()
        # reference count observed when this handle was issued (local handles
        # always carry it; proxy handles carry it when the wire reported one)
        self.count_at_issue: int | None = None

    @property
    def route_kind(self) -> str:
        return self._route.kind

    @property
    def identity_token(self) -> int:
        return self._route.identity_token

    @property
    def is_alive(self) -> bool:
        return self._alive

    @property
    def local_target(self) -> LiveObject | None:
        """The underlying object for local handles; None behind a proxy."""
        return self._route.target if isinstance(self._route, LocalRoute) else None

    @property
    def proxy_binding(self):
        """The connection-level binding for proxy handles; None when local."""
        return getattr(self._route, "binding", None)

    def _check_alive(self) -> None:
        if not self._alive:
            raise HandleDead("handle has been released")

    def query_interface(self, iid: Guid) -> "InterfaceHandle":
        """Ask for another interface on the same object; success adds a reference."""
        self._check_alive()
        return self._route.query_interface(iid)

    def add_ref(self) -> "InterfaceHandle":
        """Add one reference and return the duplicate handle that owns it."""
        self._check_alive()
        return self._route.add_ref(self.iid)

    def release(self) -> int:
        """Drop this handle's reference; returns the new count (0 = destroyed)."""
        with self._lock:
            self._check_alive()
            self._alive = False
        return self._route.release()

    def call(self, ordinal: int, args: list | None = None):
        """Invoke a method of this handle's interface by ordinal."""
        self._check_alive()
        return self._route.call(self.iid, ordinal, list(args or []))

    def call_interface(self, iid: Guid, ordinal: int, args: list):
        """Dispatch on an explicit interface id (the wire CALL contract)."""
        self._check_alive()
        return self._route.call(iid, ordinal, list(args))

    def call_by_name(self, name: str, *args):
        """Convenience dispatch by method name on this handle's interface."""
        from .interfaces import WELL_KNOWN_INTERFACES

        table = WELL_KNOWN_INTERFACES.get(self.iid)
        if table is None:
            raise NoSuchMethod(f"no published method table for {guid_format(self.iid)}")
        return self.call(table.ordinal_of(name), list(args))

    def __repr__(self) -> str:
        state = "live" if self._alive else "dead"
        return (
            f"<InterfaceHandle {state} iid={guid_format(self.iid)} "
            f"route={self._route.kind} token={self._route.identity_token}>"
        )


class ObjectRuntime:
    """Per-process (or per-server) factory of live objects.

    Assigns identity tokens unique among the objects it has created and lets
    tests observe every creation so they can attach destruction hooks.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._next_token = 1
        self.creation_observers: list[Callable[[LiveObject], None]] = []

    def _allocate_token(self) -> int:
        with self._lock:
            token = self._next_token
            self._next_token += 1
        return token

    def create_object(self, component: Component, iid: Guid) -> InterfaceHandle:
        """Wrap a component instance as a live object with one reference."""
        if iid not in supported_iids_of(component):
            raise NoInterface(
                f"{type(component).__name__} does not support {guid_format(iid)}"
            )
        obj = LiveObject(self._allocate_token(), component)
        for observer in self.creation_observers:
            observer(obj)
        return obj.issue_handle(iid)


class ClassFactoryComponent(Component):
    """The manufactured-object maker: one factory per activated class.

    A factory is itself a refcounted object; its only method is
    ``create_instance(iid)`` at ordinal 0.
    """

    interfaces = {IID_ICLASS_FACTORY: ICLASS_FACTORY}

    def __init__(self, runtime: ObjectRuntime, clsid: Guid, constructor: Callable[[], Component]):
        self._runtime = runtime
        self._constructor = constructor
        self.class_clsid = clsid

    def invoke(self, iid: Guid, ordinal: int, args: list):
        # interfaces/table checks already done by LiveObject.call
        requested = args[0]
        if not isinstance(requested, Guid):
            raise ComponentError("create_instance takes an interface id")
        return self.create_instance(requested)

    def create_instance(self, iid: Guid) -> InterfaceHandle:
        try:
            component = self._constructor()
        except Exception as exc:
            raise FactoryFailure(
                f"constructor for {guid_format(self.class_clsid)} failed: {exc}"
            ) from exc
        if iid not in supported_iids_of(component):
            raise NoInterface(
                f"class {guid_format(self.class_clsid)} does not support {guid_format(iid)}"
            )
        return self._runtime.create_object(component, iid)
