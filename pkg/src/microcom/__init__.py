"""microcom: a miniature, portable component-object runtime.

Components live behind interfaces, objects are reference-counted, class
factories manufacture instances, and a service control manager locates the
server for a class — in the client's process, in a spawned child process, or
behind a peer SCM on another machine — without the client caring which.
"""

from .activation import (
    LIBRARY_VERSION,
    LibraryContext,
    factory_create_instance,
    initialize_object,
    library_init,
    library_shutdown,
)
from .components import BUILTIN_CATALOG, CLSID_CLOCK, CLSID_ECHO
from .errors import MicrocomError, Status
from .guid import Guid, guid_format, guid_new_unique, guid_parse
from .interfaces import (
    IID_IALARM,
    IID_ICLASS_FACTORY,
    IID_ICLOCK,
    IID_IECHO,
    IID_IINITIALIZE,
    IID_ITIMER,
    IID_IUNKNOWN,
    WELL_KNOWN_INTERFACES,
    InterfaceId,
    interface_by_name,
)
from .objects import (
    ClassFactoryComponent,
    Component,
    InterfaceHandle,
    LiveObject,
    ObjectRuntime,
)
from .registry import Registry, ServerRegistration, ServerType
from .scm import ActivationRequest, Scm, ScmConfig, scm_serve

__version__ = "0.1.0"

__all__ = [
    "LIBRARY_VERSION",
    "LibraryContext",
    "factory_create_instance",
    "initialize_object",
    "library_init",
    "library_shutdown",
    "BUILTIN_CATALOG",
    "CLSID_CLOCK",
    "CLSID_ECHO",
    "MicrocomError",
    "Status",
    "Guid",
    "guid_format",
    "guid_new_unique",
    "guid_parse",
    "IID_IALARM",
    "IID_ICLASS_FACTORY",
    "IID_ICLOCK",
    "IID_IECHO",
    "IID_IINITIALIZE",
    "IID_ITIMER",
    "IID_IUNKNOWN",
    "WELL_KNOWN_INTERFACES",
    "InterfaceId",
    "interface_by_name",
    "ClassFactoryComponent",
    "Component",
    "InterfaceHandle",
    "LiveObject",
    "ObjectRuntime",
    "Registry",
    "ServerRegistration",
    "ServerType",
    "ActivationRequest",
    "Scm",
    "ScmConfig",
    "scm_serve",
    "__version__",
]
