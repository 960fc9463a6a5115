"""Service Control Manager: locate a class's server and produce its factory.

Given an activation request the SCM consults the registry and dispatches on
the server type: in-process components are instantiated from the builtin
catalog (or a dynamically loaded module, when enabled), local components get
a spawned child process that dials back to a per-spawn control endpoint, and
remote components are forwarded to the peer SCM that owns them.  A running
factory is recorded in the running-class table so that repeated activations
of the same class share one server; the table holds no references of its
own — server lifetime is driven entirely by outstanding factories and
objects.
"""

from __future__ import annotations

import importlib.util
import itertools
import logging
import socket
import subprocess
import threading
from dataclasses import dataclass
from pathlib import Path

from .components import BUILTIN_CATALOG
from .errors import (
    ActivationTimeout,
    ClassNotRegistered,
    ConnectionLost,
    DuplicateRegistration,
    MicrocomError,
    NoInterface,
    NotInitialized,
    RemoteFault,
    ServerNotFound,
    Status,
    UnknownObject,
)
from .guid import Guid, guid_format
from .interfaces import IID_ICLASS_FACTORY, IID_IUNKNOWN
from .objects import ClassFactoryComponent, InterfaceHandle, LiveObject, ObjectRuntime
from .registry import Registry, ServerRegistration, ServerType
from .remoting import Connection, ProxyRoute, ServerConnection, WireServer, connect
from . import wire

log = logging.getLogger(__name__)

BUILTIN_SCHEME = "builtin:"
DYNAMIC_ENTRY_POINT = "microcom_get_class_factory"
DEFAULT_REMOTE_PORT = 7700

_dynamic_module_counter = itertools.count(1)


@dataclass
class ScmConfig:
    """Tunable timeouts and feature gates; tests rely on the defaults."""

    spawn_timeout: float = 5.0
    connect_timeout: float = 3.0
    linger: float = 2.0
    call_timeout: float = 30.0
    allow_dynamic_modules: bool = False


@dataclass(frozen=True)
class ActivationRequest:
    clsid: Guid
    iid: Guid
    origin: ServerConnection | None = None  # None means a local client


@dataclass
class RunningEntry:
    """One live server known to the table.  Holds no reference units."""

    clsid: Guid
    server_kind: ServerType
    server_identity: str
    obj: LiveObject | None = None  # in-process factories
    binding: object | None = None  # ProxyBinding for proxied factories
    conn: Connection | None = None
    process: subprocess.Popen | None = None
    activation_count: int = 0


class Scm:
    """One service control manager: registry cache, running table, transports."""

    def __init__(
        self,
        registry_path,
        *,
        catalog: dict | None = None,
        config: ScmConfig | None = None,
        runtime: ObjectRuntime | None = None,
        label: str = "scm",
    ):
        self.registry_path = Path(registry_path)
        self.catalog = BUILTIN_CATALOG if catalog is None else catalog
        self.config = config or ScmConfig()
        self.runtime = runtime or ObjectRuntime()
        self.label = label
        self._registry: Registry | None = None
        self._registry_sig: tuple[int, int] | None = None
        self._registry_lock = threading.Lock()
        self._table: dict[Guid, RunningEntry] = {}
        self._table_lock = threading.Lock()
        self._clsid_locks: dict[Guid, threading.Lock] = {}
        self._clsid_locks_guard = threading.Lock()
        self._connections: dict[tuple[str, int], Connection] = {}
        self._connections_lock = threading.Lock()
        self._children: list[subprocess.Popen] = []
        self._closed = False
        self.spawn_count = 0  # instrumentation for single-instance checks

    # -- registry ----------------------------------------------------------

    def registry(self) -> Registry:
        """Current registry state; re-read when the file's mtime changes."""
        with self._registry_lock:
            try:
                st = self.registry_path.stat()
                sig = (st.st_mtime_ns, st.st_size)
            except FileNotFoundError:
                sig = None
            if self._registry is None or sig != self._registry_sig:
                self._registry = Registry.load(self.registry_path)
                self._registry_sig = sig
            return self._registry

    def lookup_class(self, clsid: Guid) -> ServerRegistration:
        return self.registry().lookup(clsid)

    # -- activation ----------------------------------------------------------

    def activate(self, request: ActivationRequest) -> InterfaceHandle:
        """Produce a live class-factory handle for the requested class."""
        if self._closed:
            raise NotInitialized(f"{self.label} has been shut down")
        clsid, iid = request.clsid, request.iid
        if iid not in (IID_ICLASS_FACTORY, IID_IUNKNOWN):
            raise NoInterface("activation grants IClassFactory or IUnknown only")
        with self._lock_for(clsid):
            handle = self._try_reuse(clsid, iid)
            if handle is not None:
                return handle
            registration = self.lookup_class(clsid)
            if registration.server_type is ServerType.IN_PROCESS:
                return self._activate_in_process(registration, iid)
            if registration.server_type is ServerType.LOCAL:
                return self._activate_local(registration, iid)
            if request.origin is not None:
                # A forwarded request resolves in-process or local here;
                # remote-to-remote chains are refused.
                raise ServerNotFound(
                    f"{guid_format(clsid)} is registered as remote on the serving peer"
                )
            return self._activate_remote(registration, iid)

    # The resolver surface used by serving connections.
    def resolve_activation(
        self, clsid: Guid, iid: Guid, origin: ServerConnection | None
    ) -> InterfaceHandle:
        return self.activate(ActivationRequest(clsid=clsid, iid=iid, origin=origin))

    def _lock_for(self, clsid: Guid) -> threading.Lock:
        with self._clsid_locks_guard:
            lock = self._clsid_locks.get(clsid)
            if lock is None:
                lock = threading.Lock()
                self._clsid_locks[clsid] = lock
            return lock

    def _try_reuse(self, clsid: Guid, iid: Guid) -> InterfaceHandle | None:
        with self._table_lock:
            entry = self._table.get(clsid)
        if entry is None:
            return None
        if entry.obj is not None:
            try:
                handle = entry.obj.issue_handle(iid)
            except MicrocomError:
                self._purge_entry(clsid, entry)
                return None
        else:
            if entry.conn is None or not entry.conn.alive:
                self._purge_entry(clsid, entry)
                return None
            try:
                handle, _ = entry.binding.add_ref_grant(iid)
            except (ConnectionLost, UnknownObject, MicrocomError):
                self._purge_entry(clsid, entry)
                return None
        entry.activation_count += 1
        return handle

    # -- in-process servers --------------------------------------------------

    def _activate_in_process(
        self, registration: ServerRegistration, iid: Guid
    ) -> InterfaceHandle:
        location = registration.location
        if location.startswith(BUILTIN_SCHEME):
            name = location[len(BUILTIN_SCHEME):]
            constructor = self.catalog.get(name)
            if constructor is None:
                raise ServerNotFound(f"no builtin component named {name!r}")
            factory = ClassFactoryComponent(self.runtime, registration.clsid, constructor)
            handle = self.runtime.create_object(factory, iid)
        else:
            handle = self._load_dynamic_module(location, registration.clsid, iid)
        self.register_running_factory(
            registration.clsid,
            handle,
            server_identity=f"inproc:{handle.identity_token}",
            server_kind=ServerType.IN_PROCESS,
        )
        return handle

    def _load_dynamic_module(self, location: str, clsid: Guid, iid: Guid) -> InterfaceHandle:
        if not self.config.allow_dynamic_modules:
            raise ServerNotFound("dynamic component module loading is disabled")
        path = Path(location)
        if not path.exists():
            raise ServerNotFound(f"component module {location} does not exist")
        try:
            module_name = f"_microcom_dyn_{next(_dynamic_module_counter)}"
            spec = importlib.util.spec_from_file_location(module_name, path)
            if spec is None or spec.loader is None:
                raise ServerNotFound(f"{location} is not a loadable module")
            module = importlib.util.module_from_spec(spec)
            spec.loader.exec_module(module)
        except MicrocomError:
            raise
        except Exception as exc:
            raise ServerNotFound(f"failed to load {location}: {exc}") from exc
        entry_point = getattr(module, DYNAMIC_ENTRY_POINT, None)
        if entry_point is None:
            raise ServerNotFound(f"{location} does not export {DYNAMIC_ENTRY_POINT}")
        try:
            handle = entry_point(self.runtime, clsid)
        except MicrocomError:
            raise
        except Exception as exc:
            raise ServerNotFound(f"{DYNAMIC_ENTRY_POINT} in {location} failed: {exc}") from exc
        if not isinstance(handle, InterfaceHandle):
            raise ServerNotFound(
                f"{DYNAMIC_ENTRY_POINT} in {location} did not return a factory handle"
            )
        if handle.iid != iid:
            requested = handle.query_interface(iid)
            handle.release()
            handle = requested
        return handle

    # -- local child servers ---------------------------------------------------

    def _activate_local(self, registration: ServerRegistration, iid: Guid) -> InterfaceHandle:
        clsid = registration.clsid
        try:
            listener = socket.create_server(("127.0.0.1", 0))
        except OSError as exc:
            raise ServerNotFound(f"cannot open a control endpoint: {exc}") from exc
        control_port = listener.getsockname()[1]
        listener.settimeout(self.config.spawn_timeout)
        command = [
            registration.location,
            "--serve",
            "--clsid",
            guid_format(clsid),
            "--control",
            f"127.0.0.1:{control_port}",
        ]
        try:
            process = subprocess.Popen(
                command, stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL
            )
        except OSError as exc:
            listener.close()
            raise ServerNotFound(
                f"cannot spawn server {registration.location!r}: {exc}"
            ) from exc
        self.spawn_count += 1
        self._children.append(process)
        try:
            sock, _addr = listener.accept()
        except (socket.timeout, OSError):
            self._kill(process)
            raise ActivationTimeout(
                f"server {registration.location!r} did not dial back within "
                f"{self.config.spawn_timeout}s"
            ) from None
        finally:
            listener.close()
        sock.settimeout(None)
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        conn = Connection(
            sock,
            label=f"child:{process.pid}",
            call_timeout=self.config.call_timeout,
        )
        conn.on_dead.append(self._on_connection_dead)
        try:
            resp = conn.request(
                wire.MsgType.ACTIVATE_REQ,
                wire.build_activate_req(clsid, iid),
                timeout=self.config.spawn_timeout,
            )
        except ConnectionLost as exc:
            self._kill(process)
            raise ActivationTimeout(
                f"server {registration.location!r} did not register a factory: {exc}"
            ) from exc
        status, oid = wire.parse_activate_resp(resp.payload)
        if status != Status.OK:
            conn.close()
            self._kill(process)
            try:
                status_name = Status(status).name
            except ValueError:
                status_name = str(status)
            raise ServerNotFound(
                f"server {registration.location!r} refused activation (status {status_name})"
            )
        binding = conn.adopt_grant(oid)
        handle = InterfaceHandle(ProxyRoute(binding), iid)
        self.register_running_factory(
            clsid,
            handle,
            server_identity=f"pid:{process.pid}",
            server_kind=ServerType.LOCAL,
            process=process,
        )
        return handle

    # -- remote peers ----------------------------------------------------------

    def _activate_remote(self, registration: ServerRegistration, iid: Guid) -> InterfaceHandle:
        host, port = registration.endpoint
        for attempt in (1, 2):
            conn = self._connection_to(host, port)
            try:
                resp = conn.request(
                    wire.MsgType.ACTIVATE_REQ,
                    wire.build_activate_req(registration.effective_remote_clsid, iid),
                    timeout=self.config.spawn_timeout,
                )
                break
            except ConnectionLost:
                self._drop_connection(host, port, conn)
                if attempt == 2:
                    raise ActivationTimeout(
                        f"peer SCM {host}:{port} did not answer the activation"
                    ) from None
        status, oid = wire.parse_activate_resp(resp.payload)
        if status != Status.OK:
            raise RemoteFault(
                f"peer SCM {host}:{port} returned status {status} for "
                f"{guid_format(registration.effective_remote_clsid)}",
                remote_status=status,
            )
        binding = conn.adopt_grant(oid)
        handle = InterfaceHandle(ProxyRoute(binding), iid)
        self.register_running_factory(
            registration.clsid,
            handle,
            server_identity=f"remote:{host}:{port}",
            server_kind=ServerType.REMOTE,
        )
        return handle

    def _connection_to(self, host: str, port: int) -> Connection:
        with self._connections_lock:
            conn = self._connections.get((host, port))
            if conn is not None and conn.alive:
                return conn
            try:
                conn = connect(
                    host,
                    port,
                    timeout=self.config.connect_timeout,
                    label=f"peer:{host}:{port}",
                    call_timeout=self.config.call_timeout,
                )
            except OSError as exc:
                raise ServerNotFound(f"cannot reach peer SCM {host}:{port}: {exc}") from exc
            conn.on_dead.append(self._on_connection_dead)
            self._connections[(host, port)] = conn
            return conn

    def _drop_connection(self, host: str, port: int, conn: Connection) -> None:
        with self._connections_lock:
            if self._connections.get((host, port)) is conn:
                del self._connections[(host, port)]

    # -- running-class table -----------------------------------------------------

    def register_running_factory(
        self,
        clsid: Guid,
        factory: InterfaceHandle,
        server_identity: str,
        *,
        server_kind: ServerType | None = None,
        process: subprocess.Popen | None = None,
    ) -> None:
        """Record a live factory so later activations can share the server.

        The table entry does not own a reference; it watches the factory and
        removes itself when the factory dies or its server goes away.
        """
        obj = factory.local_target
        if server_kind is None:
            server_kind = ServerType.IN_PROCESS if obj is not None else ServerType.REMOTE
        entry = RunningEntry(
            clsid=clsid,
            server_kind=server_kind,
            server_identity=server_identity,
            activation_count=1,
        )
        if obj is not None:
            entry.obj = obj
        else:
            binding = factory.proxy_binding
            entry.binding = binding
            entry.conn = binding.conn
            entry.process = process
        with self._table_lock:
            existing = self._table.get(clsid)
            if existing is not None and self._entry_is_live(existing):
                if existing.server_identity != server_identity:
                    raise DuplicateRegistration(
                        f"{guid_format(clsid)} already served by {existing.server_identity}"
                    )
                existing.activation_count += 1
                return
            self._table[clsid] = entry
        if entry.obj is not None:
            entry.obj.destruction_hooks.append(lambda _obj: self._purge_entry(clsid, entry))
        else:
            entry.binding.on_zero = lambda _binding: self._purge_entry(clsid, entry)

    def _entry_is_live(self, entry: RunningEntry) -> bool:
        if entry.obj is not None:
            return not entry.obj.destroyed
        return entry.conn is not None and entry.conn.alive and entry.binding.local_count > 0

    def _purge_entry(self, clsid: Guid, entry: RunningEntry) -> None:
        with self._table_lock:
            if self._table.get(clsid) is entry:
                del self._table[clsid]
        if entry.process is not None:
            self._reap_later(entry.process)

    def _on_connection_dead(self, conn: Connection) -> None:
        with self._table_lock:
            doomed = [
                (clsid, entry) for clsid, entry in self._table.items() if entry.conn is conn
            ]
            for clsid, _entry in doomed:
                del self._table[clsid]
        with self._connections_lock:
            for key, cached in list(self._connections.items()):
                if cached is conn:
                    del self._connections[key]
        for _clsid, entry in doomed:
            if entry.process is not None:
                self._reap_later(entry.process)

    def running_table(self) -> dict[Guid, RunningEntry]:
        with self._table_lock:
            return dict(self._table)

    def live_child_count(self) -> int:
        return sum(1 for p in self._children if p.poll() is None)

    # -- teardown -------------------------------------------------------------

    def _kill(self, process: subprocess.Popen) -> None:
        try:
            process.kill()
            process.wait(timeout=5)
        except (OSError, subprocess.TimeoutExpired):
            pass

    def _reap_later(self, process: subprocess.Popen) -> None:
        def reap():
            deadline = self.config.linger + 5.0
            try:
                process.wait(timeout=deadline)
            except subprocess.TimeoutExpired:
                self._kill(process)

        threading.Thread(target=reap, name="microcom-reaper", daemon=True).start()

    def shutdown(self) -> None:
        """Close every transport and stop tracking servers; idempotent."""
        if self._closed:
            return
        self._closed = True
        with self._connections_lock:
            conns = list(self._connections.values())
            self._connections.clear()
        with self._table_lock:
            entries = list(self._table.values())
            self._table.clear()
        for entry in entries:
            if entry.conn is not None and entry.conn not in conns:
                conns.append(entry.conn)
        for conn in conns:
            conn.close()
        for process in self._children:
            if process.poll() is None:
                try:
                    process.wait(timeout=self.config.linger + 3.0)
                except subprocess.TimeoutExpired:
                    self._kill(process)


def _announce_stdout(line: str) -> None:
    print(line, flush=True)


def scm_serve(
    host: str,
    port: int,
    registry_path,
    config: ScmConfig | None = None,
    *,
    stop_event: threading.Event | None = None,
    announce=_announce_stdout,
) -> None:
    """Run a serving SCM until the stop event fires.

    Prints ``LISTENING <port>`` once the socket is bound so harnesses can
    find an ephemerally chosen port.
    """
    scm = Scm(registry_path, config=config, label=f"scm:{host}:{port}")
    server = WireServer(host, port, scm, label=scm.label)
    server.start()
    announce(f"LISTENING {server.port}")
    try:
        server.serve_forever(stop_event)
    finally:
        server.stop()
        scm.shutdown()
