"""Client-facing library surface: init/version gate, creation, initialization.

A client first initializes the library, stating the minimum library version
it needs; a newer library always serves an older client but not the other
way around.  After that, objects are created either in one step
(:meth:`LibraryContext.create_instance`) or explicitly via the class factory
(:meth:`LibraryContext.get_class_object` plus :func:`factory_create_instance`).
Newly created objects are uninitialized until :func:`initialize_object` ran,
unless the component declares no initialization at all.
"""

from __future__ import annotations

import os
import threading

from .errors import FactoryFailure, NotInitialized, VersionTooOld
from .guid import Guid
from .interfaces import IID_ICLASS_FACTORY, IID_IINITIALIZE
from .objects import InterfaceHandle, ObjectRuntime
from .scm import ActivationRequest, Scm, ScmConfig

LIBRARY_VERSION = 1
DEFAULT_REGISTRY_PATH = "./microcom.reg"
REGISTRY_ENV_VAR = "MICROCOM_REGISTRY"

_guard = threading.Lock()
_current: "LibraryContext | None" = None


class LibraryContext:
    """Process-wide library state; all activation goes through its SCM."""

    library_version = LIBRARY_VERSION

    def __init__(self, scm: Scm):
        self.scm = scm
        self.initialized = True

    @property
    def runtime(self) -> ObjectRuntime:
        return self.scm.runtime

    def _ensure_initialized(self) -> None:
        if not self.initialized:
            raise NotInitialized("the library has been shut down")

    def get_class_object(self, clsid: Guid, iid: Guid) -> InterfaceHandle:
        """Obtain a live class-factory handle; the SCM locates the server."""
        self._ensure_initialized()
        return self.scm.activate(ActivationRequest(clsid=clsid, iid=iid))

    def create_instance(self, clsid: Guid, iid: Guid) -> InterfaceHandle:
        """One-step creation: factory lookup, instantiation, factory release.

        The returned object still requires initialization (when its class
        takes any).
        """
        self._ensure_initialized()
        factory = self.get_class_object(clsid, IID_ICLASS_FACTORY)
        try:
            return factory_create_instance(factory, iid)
        finally:
            factory.release()

    def shutdown(self) -> None:
        if not self.initialized:
            return
        self.initialized = False
        self.scm.shutdown()


def library_init(
    required_version: int,
    *,
    registry_path: str | os.PathLike | None = None,
    config: ScmConfig | None = None,
) -> LibraryContext:
    """Initialize the library, verifying it is new enough for the caller.

    ``required_version`` 0 requests "any version".  The call is idempotent:
    while a context is live, subsequent calls return it unchanged.
    """
    global _current
    with _guard:
        if required_version > LIBRARY_VERSION:
            raise VersionTooOld(
                f"library version {LIBRARY_VERSION} is older than required "
                f"version {required_version}"
            )
        if _current is not None and _current.initialized:
            return _current
        if registry_path is None:
            registry_path = os.environ.get(REGISTRY_ENV_VAR, DEFAULT_REGISTRY_PATH)
        _current = LibraryContext(Scm(registry_path, config=config))
        return _current


def library_shutdown(ctx: LibraryContext) -> None:
    """Release library-held server connections; idempotent.

    Client-held handles on in-process objects stay valid — the library does
    not own them.
    """
    global _current
    with _guard:
        ctx.shutdown()
        if _current is ctx:
            _current = None


def factory_create_instance(factory: InterfaceHandle, iid: Guid) -> InterfaceHandle:
    """Ask a class factory for a brand-new, uninitialized instance."""
    result = factory.call_interface(IID_ICLASS_FACTORY, 0, [iid])
    if not isinstance(result, InterfaceHandle):
        raise FactoryFailure("factory did not produce an object")
    return result


def initialize_object(handle: InterfaceHandle, args: list) -> None:
    """Run the object's single initialization call with the given arguments."""
    init_handle = handle.query_interface(IID_IINITIALIZE)
    try:
        init_handle.call(0, [list(args)])
    finally:
        init_handle.release()
