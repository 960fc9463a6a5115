"""Sample component server executable.

Spawned by an SCM as ``<path> --serve --clsid <braced-guid> --control
<host:port>``: it dials back to the control endpoint, serves the wire
protocol over that single connection, and prints ``READY`` once it has
registered its class factory with the requesting SCM.  It embeds the clock
and echo sample components and exits on its own once its stub table has been
empty for the linger timeout (or the control connection goes away).
"""

from __future__ import annotations

import argparse
import socket
import sys
import threading
import time

from .components import CLSID_CLOCK, CLSID_ECHO, ClockComponent, EchoComponent
from .errors import ClassNotRegistered, HandleDead
from .guid import Guid, guid_format, guid_parse
from .objects import ClassFactoryComponent, InterfaceHandle, LiveObject, ObjectRuntime
from .remoting import ServerConnection

EMBEDDED_COMPONENTS = {
    CLSID_CLOCK: ClockComponent,
    CLSID_ECHO: EchoComponent,
}


class EmbeddedComponentResolver:
    """Serves activation requests for the components this executable embeds."""

    def __init__(self, runtime: ObjectRuntime):
        self.runtime = runtime
        self._factories: dict[Guid, LiveObject] = {}
        self._lock = threading.Lock()
        self._announced = False

    def resolve_activation(self, clsid: Guid, iid: Guid, origin) -> InterfaceHandle:
        constructor = EMBEDDED_COMPONENTS.get(clsid)
        if constructor is None:
            raise ClassNotRegistered(f"this server does not embed {guid_format(clsid)}")
        with self._lock:
            handle = None
            obj = self._factories.get(clsid)
            if obj is not None:
                try:
                    handle = obj.issue_handle(iid)
                except HandleDead:
                    handle = None
            if handle is None:
                factory = ClassFactoryComponent(self.runtime, clsid, constructor)
                handle = self.runtime.create_object(factory, iid)
                self._factories[clsid] = handle.local_target
            if not self._announced:
                self._announced = True
                print("READY", flush=True)
        return handle


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="microcom-server")
    parser.add_argument("--serve", action="store_true", required=True)
    parser.add_argument("--clsid", required=True)
    parser.add_argument("--control", required=True, metavar="HOST:PORT")
    parser.add_argument("--linger", type=float, default=2.0)
    args = parser.parse_args(argv)

    try:
        guid_parse(args.clsid)
        host, _, port_text = args.control.rpartition(":")
        port = int(port_text)
    except Exception as exc:
        parser.error(str(exc))

    try:
        sock = socket.create_connection((host or "127.0.0.1", port), timeout=10.0)
    except OSError as exc:
        print(f"cannot reach control endpoint {args.control}: {exc}", file=sys.stderr)
        return 3
    sock.settimeout(None)
    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

    resolver = EmbeddedComponentResolver(ObjectRuntime())
    conn = ServerConnection(sock, resolver, label="sample-server")
    serve_thread = threading.Thread(target=conn.serve, daemon=True)
    serve_thread.start()

    # Exit once the stub table has been empty for the linger timeout, or as
    # soon as the controlling connection goes away.
    empty_since: float | None = None
    while True:
        time.sleep(0.05)
        if conn.closed or not serve_thread.is_alive():
            break
        if conn.ever_held and conn.table.size() == 0:
            now = time.monotonic()
            if empty_since is None:
                empty_since = now
            elif now - empty_since >= args.linger:
                conn.send_bye()
                conn.close()
                break
        else:
            empty_since = None
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
