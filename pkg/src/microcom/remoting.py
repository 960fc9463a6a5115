"""Proxy/stub machinery carrying object traffic over stream connections.

Client side, a :class:`Connection` multiplexes concurrent requests over one
socket by correlation id, so responses may come back in any order.  Each
remote object the peer has granted us is tracked by a :class:`ProxyBinding`;
proxy handles mirror their reference units onto the peer one-for-one, which
keeps the telescoping invariant exact: an object's total count always equals
its server-local handles plus the per-connection stub counts.

Server side, a :class:`StubTable` owns real handles on behalf of one
connection.  When the connection closes — gracefully or because the peer
crashed — :func:`StubTable.rundown` releases everything the connection still
held, so objects whose only clients vanished are destroyed normally.
"""

from __future__ import annotations

import itertools
import logging
import socket
import threading
from typing import Callable

from .errors import (
    BindFailure,
    ConnectionLost,
    MicrocomError,
    ProtocolError,
    Status,
    UnknownObject,
    error_for_status,
    status_of,
)
from .guid import Guid, guid_format
from .interfaces import IID_ICLASS_FACTORY
from .objects import InterfaceHandle
from . import wire

log = logging.getLogger(__name__)

DEFAULT_CALL_TIMEOUT = 30.0

_RESPONSE_TYPES = frozenset(
    {
        wire.MsgType.ACTIVATE_RESP,
        wire.MsgType.CALL_RESP,
        wire.MsgType.COUNT_RESP,
        wire.MsgType.QUERY_RESP,
    }
)


def recv_exact(sock: socket.socket, n: int) -> bytes | None:
    """Read exactly n bytes; None on clean EOF at a frame boundary."""
    chunks = []
    remaining = n
    while remaining:
        try:
            chunk = sock.recv(remaining)
        except OSError:
            return None
        if not chunk:
            if remaining == n:
                return None
            raise ProtocolError("connection closed mid-frame")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def read_frame(sock: socket.socket) -> wire.WireMessage | None:
    """Read one full frame; None on clean EOF before a header."""
    header = recv_exact(sock, wire.HEADER_SIZE)
    if header is None:
        return None
    head, length = wire.decode_header(header)
    payload = b""
    if length:
        payload = recv_exact(sock, length)
        if payload is None:
            raise ProtocolError("connection closed mid-frame")
    return wire.WireMessage(
        msg_type=head.msg_type,
        correlation_id=head.correlation_id,
        payload=payload,
        flags=head.flags,
    )


class ProxyBinding:
    """Client-side record of one object id granted by the peer.

    ``local_count`` mirrors the per-connection stub count exactly; the
    identity token is inherited from the handle ancestry so all handles on
    the same remote object agree on it.
    """

    def __init__(self, conn: "Connection", oid: int, identity_token: int):
        self.conn = conn
        self.oid = oid
        self.identity_token = identity_token
        self.local_count = 0
        self.on_zero: Callable[["ProxyBinding"], None] | None = None

    def grant(self) -> None:
        self.local_count += 1

    def add_ref_grant(self, iid: Guid) -> tuple[InterfaceHandle, int]:
        """Acquire one more wire reference and the handle owning it."""
        resp = self.conn.request(wire.MsgType.ADDREF, wire.build_object_id(self.oid))
        status, count = wire.parse_count_resp(resp.payload)
        if status != Status.OK:
            raise error_for_status(status, f"ADDREF on object {self.oid} failed")
        with self.conn._bindings_lock:
            self.local_count += 1
        handle = InterfaceHandle(ProxyRoute(self), iid)
        handle.count_at_issue = count
        return handle, count


class ProxyRoute:
    """Forwards one handle's operations over the binding's connection."""

    kind = "proxy"

    __slots__ = ("binding",)

    def __init__(self, binding: ProxyBinding):
        self.binding = binding

    @property
    def identity_token(self) -> int:
        return self.binding.identity_token

    def query_interface(self, iid: Guid) -> InterfaceHandle:
        conn = self.binding.conn
        resp = conn.request(
            wire.MsgType.QUERY_REQ, wire.build_query_req(self.binding.oid, iid)
        )
        status, new_oid = wire.parse_query_resp(resp.payload)
        if status != Status.OK:
            raise error_for_status(
                status, f"object does not support {guid_format(iid)}"
            )
        binding = conn.adopt_grant(new_oid, identity_token=self.binding.identity_token)
        return InterfaceHandle(ProxyRoute(binding), iid)

    def add_ref(self, iid: Guid) -> InterfaceHandle:
        handle, _count = self.binding.add_ref_grant(iid)
        return handle

    def release(self) -> int:
        conn = self.binding.conn
        resp = conn.request(wire.MsgType.RELEASE, wire.build_object_id(self.binding.oid))
        status, count = wire.parse_count_resp(resp.payload)
        if status != Status.OK:
            raise error_for_status(status, f"RELEASE on object {self.binding.oid} failed")
        conn._binding_released(self.binding)
        return count

    def call(self, iid: Guid, ordinal: int, args: list):
        conn = self.binding.conn
        resp = conn.request(
            wire.MsgType.CALL_REQ,
            wire.build_call_req(self.binding.oid, iid, ordinal, args),
        )
        status, value = wire.parse_call_resp(resp.payload)
        if status != Status.OK:
            raise error_for_status(
                status, f"call {guid_format(iid)}#{ordinal} failed with status {status}"
            )
        if iid == IID_ICLASS_FACTORY and ordinal == 0:
            # create_instance hands back a new object reference: the value
            # is the granted object id, not a plain integer.
            if not isinstance(value, int) or isinstance(value, bool):
                raise ProtocolError("create_instance response did not carry an object id")
            binding = conn.adopt_grant(value)
            requested_iid = args[0]
            return InterfaceHandle(ProxyRoute(binding), requested_iid)
        return value


class _Pending:
    __slots__ = ("event", "response", "error")

    def __init__(self):
        self.event = threading.Event()
        self.response: wire.WireMessage | None = None
        self.error: Exception | None = None


class Connection:
    """Client side of one wire connection; safe for concurrent callers."""

    def __init__(
        self,
        sock: socket.socket,
        *,
        label: str = "",
        call_timeout: float = DEFAULT_CALL_TIMEOUT,
    ):
        self._sock = sock
        self.label = label or "connection"
        self._call_timeout = call_timeout
        self._send_lock = threading.Lock()
        self._corr = itertools.count(1)
        self._pending: dict[int, _Pending] = {}
        self._pending_lock = threading.Lock()
        self._bindings: dict[int, ProxyBinding] = {}
        self._bindings_lock = threading.Lock()
        self._alive = True
        self._dead_reason = ""
        self.on_dead: list[Callable[["Connection"], None]] = []
        self._reader = threading.Thread(
            target=self._read_loop, name=f"microcom-reader-{self.label}", daemon=True
        )
        self._reader.start()

    @property
    def alive(self) -> bool:
        return self._alive

    # -- binding bookkeeping ----------------------------------------------

    def adopt_grant(self, oid: int, identity_token: int | None = None) -> ProxyBinding:
        """Record one wire reference the peer just granted for ``oid``."""
        with self._bindings_lock:
            binding = self._bindings.get(oid)
            if binding is None:
                binding = ProxyBinding(
                    self, oid, oid if identity_token is None else identity_token
                )
                self._bindings[oid] = binding
            binding.grant()
            return binding

    def _binding_released(self, binding: ProxyBinding) -> None:
        notify = None
        with self._bindings_lock:
            binding.local_count -= 1
            if binding.local_count <= 0:
                self._bindings.pop(binding.oid, None)
                notify = binding.on_zero
        if notify is not None:
            try:
                notify(binding)
            except Exception:
                log.exception("%s: binding on_zero callback failed", self.label)

    def live_reference_total(self) -> int:
        with self._bindings_lock:
            return sum(b.local_count for b in self._bindings.values())

    # -- request/response --------------------------------------------------

    def request(
        self, msg_type: int, payload: bytes, *, timeout: float | None = None
    ) -> wire.WireMessage:
        if not self._alive:
            raise ConnectionLost(f"{self.label}: {self._dead_reason or 'connection closed'}")
        corr = next(self._corr)
        pending = _Pending()
        with self._pending_lock:
            self._pending[corr] = pending
        try:
            frame = wire.encode_message(
                wire.WireMessage(msg_type=msg_type, correlation_id=corr, payload=payload)
            )
            with self._send_lock:
                self._sock.sendall(frame)
        except OSError as exc:
            self._mark_dead(f"send failed: {exc}")
            raise ConnectionLost(f"{self.label}: send failed: {exc}") from exc
        if not pending.event.wait(timeout if timeout is not None else self._call_timeout):
            self._mark_dead("response timed out")
            raise ConnectionLost(f"{self.label}: response timed out")
        if pending.error is not None:
            raise pending.error
        assert pending.response is not None
        return pending.response

    def _read_loop(self) -> None:
        reason = "peer closed the connection"
        try:
            while True:
                msg = read_frame(self._sock)
                if msg is None:
                    break
                if msg.msg_type == wire.MsgType.BYE:
                    reason = "peer sent BYE"
                    break
                if msg.msg_type in _RESPONSE_TYPES:
                    with self._pending_lock:
                        pending = self._pending.pop(msg.correlation_id, None)
                    if pending is None:
                        log.warning(
                            "%s: dropping response with unknown correlation id %d",
                            self.label,
                            msg.correlation_id,
                        )
                        continue
                    pending.response = msg
                    pending.event.set()
                    continue
                reason = f"peer sent unexpected {wire.MsgType(msg.msg_type).name}"
                break
        except (ProtocolError, OSError) as exc:
            reason = str(exc)
        self._mark_dead(reason)

    def _mark_dead(self, reason: str) -> None:
        if not self._alive:
            return
        self._alive = False
        self._dead_reason = reason
        try:
            self._sock.close()
        except OSError:
            pass
        with self._pending_lock:
            pending = list(self._pending.values())
            self._pending.clear()
        for p in pending:
            p.error = ConnectionLost(f"{self.label}: {reason}")
            p.event.set()
        for callback in list(self.on_dead):
            try:
                callback(self)
            except Exception:
                log.exception("%s: on_dead callback failed", self.label)

    def close(self, *, send_bye: bool = True) -> None:
        """Graceful teardown: notify the peer, then drop the socket."""
        if self._alive and send_bye:
            try:
                with self._send_lock:
                    self._sock.sendall(
                        wire.encode_message(wire.WireMessage(msg_type=wire.MsgType.BYE))
                    )
            except OSError:
                pass
        self._mark_dead("closed locally")


def connect(
    host: str,
    port: int,
    *,
    timeout: float,
    label: str = "",
    call_timeout: float = DEFAULT_CALL_TIMEOUT,
) -> Connection:
    """Open a client connection to a listening wire endpoint."""
    sock = socket.create_connection((host, port), timeout=timeout)
    sock.settimeout(None)
    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    return Connection(sock, label=label or f"{host}:{port}", call_timeout=call_timeout)


# --- server side ----------------------------------------------------------


class _StubEntry:
    __slots__ = ("handles",)

    def __init__(self, handle: InterfaceHandle):
        self.handles = [handle]


class StubTable:
    """Per-connection map from granted object ids to the handles held for them."""

    def __init__(self):
        self._lock = threading.Lock()
        self._entries: dict[int, _StubEntry] = {}
        self._next_oid = itertools.count(1)
        self._ran_down = False

    def register_grant(self, handle: InterfaceHandle) -> int:
        """Take ownership of one handle and grant the peer an object id."""
        with self._lock:
            oid = next(self._next_oid)
            self._entries[oid] = _StubEntry(handle)
            return oid

    def _entry(self, oid: int) -> _StubEntry:
        entry = self._entries.get(oid)
        if entry is None:
            raise UnknownObject(f"object id {oid} is not in the stub table")
        return entry

    def peek(self, oid: int) -> InterfaceHandle:
        with self._lock:
            return self._entry(oid).handles[0]

    def addref(self, oid: int) -> int:
        with self._lock:
            entry = self._entry(oid)
            duplicate = entry.handles[0].add_ref()
            entry.handles.append(duplicate)
            return duplicate.count_at_issue

    def release(self, oid: int) -> int:
        with self._lock:
            entry = self._entry(oid)
            handle = entry.handles.pop()
            count = handle.release()
            if not entry.handles:
                del self._entries[oid]
            return count

    def rundown(self) -> None:
        """Release every reference this connection still holds; idempotent."""
        with self._lock:
            if self._ran_down:
                return
            self._ran_down = True
            entries = list(self._entries.values())
            self._entries.clear()
        for entry in entries:
            for handle in entry.handles:
                try:
                    handle.release()
                except MicrocomError as exc:
                    log.warning("rundown release failed: %s", exc)

    def size(self) -> int:
        with self._lock:
            return len(self._entries)

    def per_connection_count(self, oid: int) -> int:
        with self._lock:
            entry = self._entries.get(oid)
            return len(entry.handles) if entry else 0

    def total_held(self) -> int:
        with self._lock:
            return sum(len(e.handles) for e in self._entries.values())


class ServerConnection:
    """Server half of one accepted (or dialed-back) connection.

    Frames are dispatched in arrival order on a single thread; the connection
    lock makes rundown mutually exclusive with dispatch.
    """

    def __init__(self, sock: socket.socket, resolver, *, label: str = ""):
        self.sock = sock
        self.resolver = resolver
        self.label = label or "server-conn"
        self.table = StubTable()
        self._send_lock = threading.Lock()
        self._dispatch_lock = threading.Lock()
        self._closed = False
        self.ever_held = False
        self.on_closed: list[Callable[["ServerConnection"], None]] = []

    def serve(self) -> None:
        """Read and dispatch frames until the peer goes away."""
        try:
            while not self._closed:
                try:
                    msg = read_frame(self.sock)
                except ProtocolError as exc:
                    log.warning("%s: protocol error, dropping peer: %s", self.label, exc)
                    break
                if msg is None:
                    break
                if msg.msg_type == wire.MsgType.BYE:
                    break
                try:
                    response = self.dispatch(msg)
                except ProtocolError as exc:
                    log.warning("%s: bad frame, dropping peer: %s", self.label, exc)
                    break
                if response is not None:
                    try:
                        self._send(response)
                    except OSError:
                        break
        finally:
            self.close()

    def dispatch(self, msg: wire.WireMessage) -> wire.WireMessage | None:
        with self._dispatch_lock:
            return self._dispatch_locked(msg)

    def _dispatch_locked(self, msg: wire.WireMessage) -> wire.WireMessage | None:
        mt = wire.MsgType(msg.msg_type)
        corr = msg.correlation_id
        if mt == wire.MsgType.ACTIVATE_REQ:
            clsid, iid = wire.parse_activate_req(msg.payload)
            try:
                handle = self.resolver.resolve_activation(clsid, iid, origin=self)
                oid = self.table.register_grant(handle)
                self.ever_held = True
                payload = wire.build_activate_resp(Status.OK, oid)
            except Exception as exc:
                log.debug("%s: activation failed: %s", self.label, exc)
                payload = wire.build_activate_resp(status_of(exc), 0)
            return wire.WireMessage(
                msg_type=wire.MsgType.ACTIVATE_RESP, correlation_id=corr, payload=payload
            )
        if mt == wire.MsgType.CALL_REQ:
            oid, iid, ordinal, args = wire.parse_call_req(msg.payload)
            try:
                target = self.table.peek(oid)
                result = target.call_interface(iid, ordinal, args)
                if isinstance(result, InterfaceHandle):
                    result = self.table.register_grant(result)
                payload = wire.build_call_resp(Status.OK, result)
            except Exception as exc:
                payload = wire.build_call_resp(status_of(exc), None)
            return wire.WireMessage(
                msg_type=wire.MsgType.CALL_RESP, correlation_id=corr, payload=payload
            )
        if mt == wire.MsgType.QUERY_REQ:
            oid, iid = wire.parse_query_req(msg.payload)
            try:
                target = self.table.peek(oid)
                granted = target.query_interface(iid)
                new_oid = self.table.register_grant(granted)
                payload = wire.build_query_resp(Status.OK, new_oid)
            except Exception as exc:
                payload = wire.build_query_resp(status_of(exc), 0)
            return wire.WireMessage(
                msg_type=wire.MsgType.QUERY_RESP, correlation_id=corr, payload=payload
            )
        if mt == wire.MsgType.ADDREF:
            oid = wire.parse_object_id(msg.payload, "ADDREF")
            try:
                count = self.table.addref(oid)
                payload = wire.build_count_resp(Status.OK, count or 0)
            except Exception as exc:
                payload = wire.build_count_resp(status_of(exc), 0)
            return wire.WireMessage(
                msg_type=wire.MsgType.COUNT_RESP, correlation_id=corr, payload=payload
            )
        if mt == wire.MsgType.RELEASE:
            oid = wire.parse_object_id(msg.payload, "RELEASE")
            try:
                count = self.table.release(oid)
                payload = wire.build_count_resp(Status.OK, count)
            except Exception as exc:
                payload = wire.build_count_resp(status_of(exc), 0)
            return wire.WireMessage(
                msg_type=wire.MsgType.COUNT_RESP, correlation_id=corr, payload=payload
            )
        # A response type arriving at a server is a peer bug.
        raise ProtocolError(f"unexpected {mt.name} frame on a serving connection")

    def _send(self, msg: wire.WireMessage) -> None:
        with self._send_lock:
            self.sock.sendall(wire.encode_message(msg))

    def send_bye(self) -> None:
        try:
            self._send(wire.WireMessage(msg_type=wire.MsgType.BYE))
        except OSError:
            pass

    def close(self) -> None:
        """Run down every held reference and drop the socket; idempotent."""
        with self._dispatch_lock:
            if self._closed:
                return
            self._closed = True
            self.table.rundown()
        try:
            self.sock.close()
        except OSError:
            pass
        for callback in list(self.on_closed):
            try:
                callback(self)
            except Exception:
                log.exception("%s: on_closed callback failed", self.label)

    @property
    def closed(self) -> bool:
        return self._closed


class WireServer:
    """Listening endpoint that serves wire connections until stopped."""

    def __init__(self, host: str, port: int, resolver, *, label: str = "scm"):
        self.resolver = resolver
        self.label = label
        try:
            self._listener = socket.create_server((host, port))
        except OSError as exc:
            raise BindFailure(f"cannot bind {host}:{port}: {exc}") from exc
        self.host, self.port = self._listener.getsockname()[:2]
        self._stopped = False
        self.connections: list[ServerConnection] = []
        self._conn_lock = threading.Lock()
        self._accept_thread: threading.Thread | None = None

    def start(self) -> None:
        self._accept_thread = threading.Thread(
            target=self._accept_loop, name=f"microcom-accept-{self.label}", daemon=True
        )
        self._accept_thread.start()

    def _accept_loop(self) -> None:
        counter = itertools.count(1)
        while not self._stopped:
            try:
                sock, addr = self._listener.accept()
            except OSError:
                break
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            conn = ServerConnection(
                sock,
                self.resolver,
                label=f"{self.label}#{next(counter)}<-{addr[0]}:{addr[1]}",
            )
            with self._conn_lock:
                self.connections.append(conn)
            conn.on_closed.append(self._forget)
            threading.Thread(
                target=conn.serve, name=f"microcom-serve-{conn.label}", daemon=True
            ).start()

    def _forget(self, conn: ServerConnection) -> None:
        with self._conn_lock:
            if conn in self.connections:
                self.connections.remove(conn)

    def live_connections(self) -> list[ServerConnection]:
        with self._conn_lock:
            return list(self.connections)

    def stop(self) -> None:
        if self._stopped:
            return
        self._stopped = True
        try:
            self._listener.close()
        except OSError:
            pass
        for conn in self.live_connections():
            conn.send_bye()
            conn.close()

    def serve_forever(self, stop_event: threading.Event | None = None) -> None:
        """Block until the stop event fires (or forever)."""
        if self._accept_thread is None:
            self.start()
        try:
            if stop_event is None:
                self._accept_thread.join()
            else:
                stop_event.wait()
        finally:
            self.stop()
