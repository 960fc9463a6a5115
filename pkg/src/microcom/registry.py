"""File-backed store of class information: which server implements which class.

The store is a UTF-8, line-oriented file.  Each section starts with the
braced canonical class id in square brackets, followed by ``key=value``
lines; blank lines and ``#`` comments are ignored, unknown keys are skipped
with a warning.  Example::

    [{C56A4180-65AA-42EC-A945-5FD21DEC0538}]
    type=local
    path=./bin/clock-server
    name=Clock Component
    version=1

Saves are atomic (write to a temp file in the same directory, then rename),
and entries are always emitted in ascending class-id order so that saving
the same state twice produces byte-identical files.
"""

from __future__ import annotations

import enum
import logging
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

from .errors import (
    ClassNotRegistered,
    InvalidRegistration,
    IoFailure,
    MalformedGuid,
    RegistryCorrupt,
)
from .guid import Guid, guid_format, guid_parse

log = logging.getLogger(__name__)

_KNOWN_KEYS = {"type", "path", "host", "remote_clsid", "name", "version"}


class ServerType(enum.Enum):
    IN_PROCESS = "inproc"
    LOCAL = "local"
    REMOTE = "remote"

    @classmethod
    def from_token(cls, token: str) -> "ServerType":
        for member in cls:
            if member.value == token:
                return member
        raise ValueError(f"unknown server type {token!r}")


@dataclass(frozen=True)
class ServerRegistration:
    """One class-to-server mapping.

    ``location`` is a component module path or ``builtin:<name>`` for
    in-process servers, a server executable path for local servers, and a
    ``host:port`` endpoint for remote servers.
    """

    clsid: Guid
    server_type: ServerType
    location: str
    remote_clsid: Guid | None = None
    friendly_name: str = ""
    component_version: int = 1

    def __post_init__(self):
        if not self.location:
            raise InvalidRegistration("location must be non-empty")
        if "\n" in self.location or "\n" in self.friendly_name:
            raise InvalidRegistration("location and name must be single-line")
        if self.component_version < 1:
            raise InvalidRegistration("component_version must be >= 1")
        if self.remote_clsid is not None and self.server_type is not ServerType.REMOTE:
            raise InvalidRegistration("remote_clsid is only valid for remote servers")
        if self.server_type is ServerType.REMOTE:
            self._split_endpoint(self.location)

    @staticmethod
    def _split_endpoint(location: str) -> tuple[str, int]:
        if location.count(":") != 1:
            raise InvalidRegistration(
                f"remote location must be host:port, got {location!r}"
            )
        host, _, port_text = location.partition(":")
        try:
            port = int(port_text)
        except ValueError:
            raise InvalidRegistration(f"port {port_text!r} is not a number") from None
        if not host or not 1 <= port <= 65535:
            raise InvalidRegistration(
                f"remote location must be host:port with port 1-65535, got {location!r}"
            )
        return host, port

    @property
    def endpoint(self) -> tuple[str, int]:
        """(host, port) of a remote registration."""
        return self._split_endpoint(self.location)

    @property
    def effective_remote_clsid(self) -> Guid:
        return self.remote_clsid if self.remote_clsid is not None else self.clsid


@dataclass
class Registry:
    """In-memory view of the class store, tied to one backing file."""

    backing_path: Path
    entries: dict[Guid, ServerRegistration] = field(default_factory=dict)
    dirty: bool = False

    # -- persistence -----------------------------------------------------

    @classmethod
    def load(cls, path: str | os.PathLike) -> "Registry":
        """Load the store; a missing file is an empty registry."""
        path = Path(path)
        reg = cls(backing_path=path)
        if not path.exists():
            return reg
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise IoFailure(f"cannot read {path}: {exc}") from exc
        reg.entries = _parse_registry_text(text, str(path))
        return reg

    def save(self) -> None:
        """Atomically replace the backing file; ascending class-id order."""
        chunks = []
        for clsid in sorted(self.entries):
            r = self.entries[clsid]
            chunks.append(f"[{guid_format(clsid)}]\n")
            chunks.append(f"type={r.server_type.value}\n")
            key = "host" if r.server_type is ServerType.REMOTE else "path"
            chunks.append(f"{key}={r.location}\n")
            if r.remote_clsid is not None:
                chunks.append(f"remote_clsid={guid_format(r.remote_clsid)}\n")
            if r.friendly_name:
                chunks.append(f"name={r.friendly_name}\n")
            chunks.append(f"version={r.component_version}\n")
            chunks.append("\n")
        data = "".join(chunks)
        directory = self.backing_path.parent
        try:
            directory.mkdir(parents=True, exist_ok=True)
            fd, tmp_name = tempfile.mkstemp(
                prefix=self.backing_path.name + ".", suffix=".tmp", dir=directory
            )
            try:
                with os.fdopen(fd, "w", encoding="utf-8") as fh:
                    fh.write(data)
                os.replace(tmp_name, self.backing_path)
            except BaseException:
                try:
                    os.unlink(tmp_name)
                except OSError:
                    pass
                raise
        except OSError as exc:
            raise IoFailure(f"cannot save {self.backing_path}: {exc}") from exc
        self.dirty = False

    # -- mutation and lookup ----------------------------------------------

    def register(self, registration: ServerRegistration) -> None:
        """Insert or replace the entry for the registration's class id."""
        if not isinstance(registration, ServerRegistration):
            raise InvalidRegistration("expected a ServerRegistration")
        self.entries[registration.clsid] = registration
        self.dirty = True

    def unregister(self, clsid: Guid) -> None:
        if clsid not in self.entries:
            raise ClassNotRegistered(f"class not registered: {guid_format(clsid)}")
        del self.entries[clsid]
        self.dirty = True

    def lookup(self, clsid: Guid) -> ServerRegistration:
        try:
            return self.entries[clsid]
        except KeyError:
            raise ClassNotRegistered(
                f"class not registered: {guid_format(clsid)}"
            ) from None

    def list_classes(self) -> list[ServerRegistration]:
        """All entries in ascending (bytewise) class-id order."""
        return [self.entries[clsid] for clsid in sorted(self.entries)]

    def __len__(self) -> int:
        return len(self.entries)


def _parse_registry_text(text: str, origin: str) -> dict[Guid, ServerRegistration]:
    entries: dict[Guid, ServerRegistration] = {}
    current_clsid: Guid | None = None
    current_line = 0
    pairs: dict[str, tuple[str, int]] = {}  # key -> (value, line number)

    def finish_section() -> None:
        nonlocal current_clsid, pairs
        if current_clsid is None:
            return
        entries[current_clsid] = _registration_from_pairs(
            current_clsid, pairs, current_line
        )
        current_clsid = None
        pairs = {}

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise RegistryCorrupt(f"unterminated section header {raw!r}", lineno)
            finish_section()
            try:
                current_clsid = guid_parse(line[1:-1])
            except MalformedGuid as exc:
                raise RegistryCorrupt(f"bad class id in section header: {exc}", lineno) from None
            current_line = lineno
            continue
        if "=" not in line:
            raise RegistryCorrupt(f"expected key=value, got {raw!r}", lineno)
        if current_clsid is None:
            raise RegistryCorrupt("key=value before any section header", lineno)
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in _KNOWN_KEYS:
            log.warning("%s:%d: ignoring unknown key %r", origin, lineno, key)
            continue
        pairs[key] = (value, lineno)
    finish_section()
    return entries


def _registration_from_pairs(
    clsid: Guid, pairs: dict[str, tuple[str, int]], section_line: int
) -> ServerRegistration:
    if "type" not in pairs:
        raise RegistryCorrupt(
            f"section {guid_format(clsid)} is missing required key 'type'", section_line
        )
    type_token, type_line = pairs["type"]
    try:
        server_type = ServerType.from_token(type_token)
    except ValueError as exc:
        raise RegistryCorrupt(str(exc), type_line) from None
    location_key = "host" if server_type is ServerType.REMOTE else "path"
    if location_key not in pairs:
        raise RegistryCorrupt(
            f"section {guid_format(clsid)} is missing required key {location_key!r}",
            section_line,
        )
    location, _ = pairs[location_key]
    remote_clsid = None
    if "remote_clsid" in pairs:
        value, value_line = pairs["remote_clsid"]
        try:
            remote_clsid = guid_parse(value)
        except MalformedGuid as exc:
            raise RegistryCorrupt(f"bad remote_clsid: {exc}", value_line) from None
    version = 1
    if "version" in pairs:
        value, value_line = pairs["version"]
        try:
            version = int(value)
        except ValueError:
            raise RegistryCorrupt(
                f"version must be a decimal integer, got {value!r}", value_line
            ) from None
    try:
        return ServerRegistration(
            clsid=clsid,
            server_type=server_type,
            location=location,
            remote_clsid=remote_clsid,
            friendly_name=pairs.get("name", ("", 0))[0],
            component_version=version,
        )
    except InvalidRegistration as exc:
        raise RegistryCorrupt(str(exc), section_line) from None
