import stat
import subprocess
import sys

import pytest

from microcom import activation
from microcom.registry import Registry, ServerRegistration
from microcom.remoting import WireServer
from microcom.scm import Scm


@pytest.fixture(autouse=True)
def _reset_library():
    """Make sure no test leaks the process-wide library context."""
    yield
    with activation._guard:
        ctx = activation._current
    if ctx is not None:
        activation.library_shutdown(ctx)


@pytest.fixture
def registry_path(tmp_path):
    return tmp_path / "microcom.reg"


def write_registrations(path, *registrations: ServerRegistration) -> Registry:
    reg = Registry.load(path)
    for r in registrations:
        reg.register(r)
    reg.save()
    return reg


@pytest.fixture(scope="session")
def server_shim(tmp_path_factory):
    """An executable honoring the local-server contract, backed by this venv."""
    directory = tmp_path_factory.mktemp("shim")
    shim = directory / "sample-server"
    shim.write_text(
        f"#!{sys.executable}\nfrom microcom.server import main\nraise SystemExit(main())\n"
    )
    shim.chmod(shim.stat().st_mode | stat.S_IXUSR | stat.S_IXGRP | stat.S_IXOTH)
    return shim


@pytest.fixture
def loopback_peer(tmp_path):
    """Factory for in-process serving SCMs reachable over loopback TCP."""
    created = []
    counter = [0]

    def build(*registrations, config=None, catalog=None):
        counter[0] += 1
        regpath = tmp_path / f"peer{counter[0]}.reg"
        write_registrations(regpath, *registrations)
        scm = Scm(regpath, config=config, catalog=catalog, label=f"peer{counter[0]}")
        server = WireServer("127.0.0.1", 0, scm, label=scm.label)
        server.start()
        created.append((scm, server))
        return scm, server

    yield build
    for scm, server in created:
        server.stop()
        scm.shutdown()


@pytest.fixture
def client_scm(tmp_path):
    """Factory for client-side SCM facades with their own registry files."""
    created = []
    counter = [0]

    def build(*registrations, config=None, name=None):
        counter[0] += 1
        regpath = tmp_path / f"{name or 'client'}{counter[0]}.reg"
        write_registrations(regpath, *registrations)
        scm = Scm(regpath, config=config, label=f"client{counter[0]}")
        created.append(scm)
        return scm

    yield build
    for scm in created:
        scm.shutdown()


@pytest.fixture
def peer_process(tmp_path):
    """Factory spawning a real `microcom serve` subprocess on an ephemeral port."""
    procs = []

    def start(*registrations) -> int:
        regpath = tmp_path / f"peerproc{len(procs)}.reg"
        write_registrations(regpath, *registrations)
        proc = subprocess.Popen(
            [
                sys.executable,
                "-m",
                "microcom.cli",
                "serve",
                "--port",
                "0",
                "--bind",
                "127.0.0.1",
                "--registry",
                str(regpath),
            ],
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
            text=True,
        )
        procs.append(proc)
        line = proc.stdout.readline()
        assert line.startswith("LISTENING "), f"unexpected serve banner: {line!r}"
        return int(line.split()[1])

    yield start
    for proc in procs:
        proc.kill()
        proc.wait(timeout=10)
