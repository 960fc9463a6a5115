"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines; every tolerance asserted here is fixed, not calibrated.
"""

import functools
import random
import signal
import subprocess
import sys
import threading
import time

import pytest

from microcom.activation import (
    factory_create_instance,
    initialize_object,
    library_init,
    library_shutdown,
)
from microcom.components import CLSID_CLOCK, ClockComponent
from microcom.errors import (
    AlreadyInitialized,
    NoInterface,
    NotInitialized,
    ProtocolError,
    VersionTooOld,
)
from microcom.guid import Guid, guid_format
from microcom.interfaces import (
    IID_IALARM,
    IID_ICLASS_FACTORY,
    IID_ICLOCK,
    IID_IINITIALIZE,
    IID_ITIMER,
    IID_IUNKNOWN,
)
from microcom.scm import ScmConfig
from microcom import wire

from conftest import write_registrations
from support import (
    CLOCK_IID_SET,
    activate_factory,
    clock_session_transcript,
    qi_success_set,
    scm_create_instance,
    tracked_runtime,
)
from test_remoting import builtin, local, remote, wait_until


def ok(number: int, name: str) -> None:
    print(f"ACCEPTANCE {number} ({name}): PASS")


def make_clock(runtime):
    return runtime.create_object(ClockComponent(), IID_ICLOCK)


def test_criterion_1_two_client_disconnection(loopback_peer, client_scm):
    # in-process: two handles on one object, destroyed exactly at the second release
    started = time.monotonic()
    runtime, created, destroyed = tracked_runtime()
    h1 = make_clock(runtime)
    h2 = h1.add_ref()
    obj = created[-1]
    assert h1.release() == 1
    assert destroyed == []
    assert h2.release() == 0
    assert destroyed == [obj]
    in_process_elapsed = time.monotonic() - started
    assert in_process_elapsed < 1.0

    # remote: two clients (two connections) sharing the peer's single factory
    started = time.monotonic()
    peer_scm, peer_server = loopback_peer(builtin(CLSID_CLOCK, "clock"))
    factory_destroyed = []
    peer_scm.runtime.creation_observers.append(
        lambda obj: obj.destruction_hooks.append(factory_destroyed.append)
    )
    client_a = client_scm(remote(CLSID_CLOCK, peer_server.port), name="a")
    client_b = client_scm(remote(CLSID_CLOCK, peer_server.port), name="b")
    fa = activate_factory(client_a, CLSID_CLOCK)
    fb = activate_factory(client_b, CLSID_CLOCK)
    assert len(peer_server.live_connections()) == 2
    assert fa.release() == 1
    assert factory_destroyed == []
    assert fb.release() == 0
    wait_until(lambda: len(factory_destroyed) == 1, 5, "factory destruction")
    remote_elapsed = time.monotonic() - started
    assert remote_elapsed < 10.0
    ok(1, "two-client disconnection, in-process and remote")


def test_criterion_2_refcount_fuzz_against_counter_model():
    started = time.monotonic()
    rng = random.Random(0xFACADE)
    runtime, created, destroyed = tracked_runtime()
    sequences = 10_000
    for _ in range(sequences):
        destroyed_before = len(destroyed)
        h = make_clock(runtime)
        obj = created[-1]
        handles = [h]
        model = 1
        assert obj.ref_count == model
        for _ in range(rng.randrange(1, 12)):
            op = rng.choice(("addref", "qi", "release"))
            if op == "addref":
                handles.append(rng.choice(handles).add_ref())
                model += 1
            elif op == "qi":
                iid = rng.choice(sorted(obj.supported_iids))
                handles.append(rng.choice(handles).query_interface(iid))
                model += 1
            else:
                victim = handles.pop(rng.randrange(len(handles)))
                victim.release()
                model -= 1
            assert obj.ref_count == model
            destroyed_now = len(destroyed) - destroyed_before
            assert destroyed_now == (1 if model == 0 else 0)
            if model == 0:
                break
        for handle in handles:
            handle.release()
            model -= 1
            assert obj.ref_count == model
        assert len(destroyed) == destroyed_before + 1  # exactly at the model's zero
    elapsed = time.monotonic() - started
    assert elapsed < 30.0
    ok(2, f"refcount fuzz, {sequences} sequences in {elapsed:.1f}s")


def test_criterion_3_query_interface_property_suite():
    started = time.monotonic()
    runtime, created, _ = tracked_runtime()
    root = make_clock(runtime)
    obj = created[-1]

    # reflexivity for every supported interface
    for iid in sorted(obj.supported_iids):
        h = root.query_interface(iid)
        assert h.iid == iid
        same = h.query_interface(iid)
        assert same.identity_token == h.identity_token
        same.release()
        h.release()

    # IUnknown-identity agreement across all pairs of live handles
    live = [root]
    for iid in (IID_ICLOCK, IID_IALARM, IID_ITIMER, IID_IINITIALIZE):
        live.append(live[-1].query_interface(iid))
    tokens = set()
    for handle in live:
        u = handle.query_interface(IID_IUNKNOWN)
        tokens.add(u.identity_token)
        u.release()
    assert len(tokens) == 1

    # set stability across 1,000 interleaved method calls
    init = root.query_interface(IID_IINITIALIZE)
    init.call(0, [[0]])
    init.release()
    clock = root.query_interface(IID_ICLOCK)
    baseline = qi_success_set(root)
    assert baseline == CLOCK_IID_SET
    for i in range(1000):
        clock.call_by_name("advance", 1) if i % 2 else clock.call_by_name("get_time")
        if i % 100 == 0:
            assert qi_success_set(root) == baseline
    assert qi_success_set(root) == baseline
    clock.release()

    # NoInterface for 1,000 random Guids with zero count perturbation
    rng = random.Random(514)
    count_before = obj.ref_count
    rejected = 0
    for _ in range(1000):
        iid = Guid(rng.randbytes(16))
        if iid in obj.supported_iids:
            continue
        with pytest.raises(NoInterface):
            root.query_interface(iid)
        assert obj.ref_count == count_before
        rejected += 1
    assert rejected >= 999
    for handle in reversed(live):
        handle.release()
    elapsed = time.monotonic() - started
    assert elapsed < 10.0
    ok(3, f"QueryInterface property suite in {elapsed:.1f}s")


def test_criterion_4_version_gate(registry_path):
    with pytest.raises(VersionTooOld):
        library_init(2, registry_path=registry_path)
    ctx = library_init(1, registry_path=registry_path)
    assert ctx.initialized
    library_shutdown(ctx)
    ctx = library_init(0, registry_path=registry_path)
    assert ctx.initialized
    library_shutdown(ctx)
    ok(4, "library version gate")


def test_criterion_5_creation_contract(registry_path):
    write_registrations(registry_path, builtin(CLSID_CLOCK, "clock"))
    ctx = library_init(1, registry_path=registry_path)
    try:
        one_step = ctx.create_instance(CLSID_CLOCK, IID_ICLOCK)
        factory = ctx.get_class_object(CLSID_CLOCK, IID_ICLASS_FACTORY)
        two_step = factory_create_instance(factory, IID_ICLOCK)
        factory.release()
        for obj in (one_step, two_step):
            with pytest.raises(NotInitialized):
                obj.call_by_name("get_time")
        assert qi_success_set(one_step) == qi_success_set(two_step) == CLOCK_IID_SET
        for obj in (one_step, two_step):
            initialize_object(obj, [0])
            assert obj.call_by_name("get_time") == 0
            with pytest.raises(AlreadyInitialized):
                initialize_object(obj, [0])
            obj.release()
    finally:
        library_shutdown(ctx)
    ok(5, "creation contract and path equivalence")


def test_criterion_6_location_transparency(
    tmp_path, server_shim, client_scm, peer_process
):
    started = time.monotonic()
    transcripts = {}

    inproc_scm = client_scm(builtin(CLSID_CLOCK, "clock"), name="inproc")
    transcripts["inproc"] = clock_session_transcript(
        functools.partial(scm_create_instance, inproc_scm), CLSID_CLOCK
    )

    local_scm = client_scm(
        local(CLSID_CLOCK, server_shim), config=ScmConfig(linger=0.5), name="local"
    )
    transcripts["local"] = clock_session_transcript(
        functools.partial(scm_create_instance, local_scm), CLSID_CLOCK
    )

    peer_port = peer_process(builtin(CLSID_CLOCK, "clock"))
    remote_scm = client_scm(remote(CLSID_CLOCK, peer_port), name="remote")
    transcripts["remote"] = clock_session_transcript(
        functools.partial(scm_create_instance, remote_scm), CLSID_CLOCK
    )

    assert transcripts["inproc"] == transcripts["local"] == transcripts["remote"]
    assert transcripts["inproc"].encode() == transcripts["remote"].encode()
    elapsed = time.monotonic() - started
    assert elapsed < 20.0
    ok(6, f"location transparency across three routes in {elapsed:.1f}s")


def test_criterion_7_wire_codec(loopback_peer, client_scm):
    # BYE frame byte-exactness
    bye = wire.encode_message(wire.WireMessage(msg_type=wire.MsgType.BYE))
    assert bye == bytes.fromhex("4D434F4D00010800" + "00000000" + "00000000")

    # decode∘encode identity over 10,000 randomized messages and values
    rng = random.Random(0xBEEF)

    def random_value(depth=0):
        kinds = ["null", "bool", "i64", "f64", "str", "bytes", "guid"]
        if depth < 6:
            kinds.append("list")
        kind = rng.choice(kinds)
        if kind == "null":
            return None
        if kind == "bool":
            return rng.random() < 0.5
        if kind == "i64":
            return rng.randrange(-(2**63), 2**63)
        if kind == "f64":
            return rng.uniform(-1e12, 1e12)
        if kind == "str":
            return "".join(rng.choice("abcdef🙂é ") for _ in range(rng.randrange(8)))
        if kind == "bytes":
            return rng.randbytes(rng.randrange(12))
        if kind == "guid":
            return Guid(rng.randbytes(16))
        return [random_value(depth + 1) for _ in range(rng.randrange(4))]

    for i in range(5000):
        value = random_value()
        assert wire.decode_value(wire.encode_value(value)) == value
    for i in range(5000):
        msg = wire.WireMessage(
            msg_type=rng.choice(list(wire.MsgType)),
            correlation_id=rng.randrange(2**32),
            payload=rng.randbytes(rng.randrange(64)),
        )
        assert wire.decode_message(wire.encode_message(msg)) == msg

    # malformed frames raise ProtocolError and do not crash a serving SCM
    import socket as socket_module

    peer_scm, peer_server = loopback_peer(builtin(CLSID_CLOCK, "clock"))
    good = wire.encode_message(wire.WireMessage(msg_type=wire.MsgType.BYE))
    bad_magic = b"MCON" + good[4:]
    bad_version = good[:4] + b"\x00\x02" + good[6:]
    truncated = wire.encode_message(
        wire.WireMessage(msg_type=wire.MsgType.ADDREF, payload=b"\x00" * 8)
    )[:-3]
    for frame in (bad_magic, bad_version, truncated):
        with pytest.raises(ProtocolError):
            wire.decode_message(frame)
        sock = socket_module.create_connection(("127.0.0.1", peer_server.port))
        sock.sendall(frame)
        sock.close()
    time.sleep(0.2)
    client = client_scm(remote(CLSID_CLOCK, peer_server.port))
    obj = scm_create_instance(client, CLSID_CLOCK, IID_ICLOCK)  # server still alive
    initialize_object(obj, [1])
    assert obj.call_by_name("get_time") == 1
    obj.release()
    ok(7, "wire codec identity, BYE frame, malformed-frame resilience")


def test_criterion_8_rundown_and_single_instance(
    loopback_peer, tmp_path, server_shim, client_scm
):
    # killing a client that holds three remote handles runs down within 5s
    peer_scm, peer_server = loopback_peer(builtin(CLSID_CLOCK, "clock"))
    destroyed = []
    peer_scm.runtime.creation_observers.append(
        lambda obj: obj.destruction_hooks.append(destroyed.append)
    )
    client_registry = tmp_path / "crash.reg"
    write_registrations(client_registry, remote(CLSID_CLOCK, peer_server.port))
    script = tmp_path / "holder.py"
    script.write_text(
        "import sys, time\n"
        "from microcom.activation import library_init, initialize_object\n"
        "from microcom.guid import guid_parse\n"
        "from microcom.interfaces import IID_IALARM, IID_ICLOCK, IID_ITIMER\n"
        "ctx = library_init(1, registry_path=sys.argv[1])\n"
        "obj = ctx.create_instance(guid_parse(sys.argv[2]), IID_ICLOCK)\n"
        "initialize_object(obj, [0])\n"
        "alarm = obj.query_interface(IID_IALARM)\n"
        "timer = obj.query_interface(IID_ITIMER)\n"
        "print('HOLDING', flush=True)\n"
        "time.sleep(120)\n"
    )
    proc = subprocess.Popen(
        [sys.executable, str(script), str(client_registry), guid_format(CLSID_CLOCK)],
        stdout=subprocess.PIPE,
        stderr=subprocess.DEVNULL,
        text=True,
    )
    try:
        assert proc.stdout.readline().strip() == "HOLDING"
        wait_until(lambda: peer_server.live_connections(), 5, "client connection")
        conn = peer_server.live_connections()[0]
        assert conn.table.total_held() == 3  # object + two QI'd interfaces
        # the intermediate factory already died when create_instance released
        # it; the clock object is the sole-owner object still alive
        destroyed_before = len(destroyed)
        proc.send_signal(signal.SIGKILL)
        proc.wait(timeout=10)
        killed_at = time.monotonic()
        wait_until(lambda: conn.table.size() == 0, 5, "stub table emptied")
        wait_until(lambda: len(destroyed) == destroyed_before + 1, 5, "clock destroyed")
        assert destroyed[-1].supported_iids == CLOCK_IID_SET
        assert time.monotonic() - killed_at <= 5.0
    finally:
        if proc.poll() is None:
            proc.kill()
            proc.wait(timeout=5)

    # 32 concurrent activations of a local server spawn exactly one child
    client = client_scm(local(CLSID_CLOCK, server_shim), config=ScmConfig(linger=0.5))
    results = []
    errors = []
    barrier = threading.Barrier(32)

    def worker():
        try:
            barrier.wait(timeout=10)
            results.append(activate_factory(client, CLSID_CLOCK))
        except Exception as exc:  # pragma: no cover - failure reporting
            errors.append(exc)

    threads = [threading.Thread(target=worker) for _ in range(32)]
    for t in threads:
        t.start()
    for t in threads:
        t.join(timeout=60)
    assert not errors
    assert len(results) == 32
    assert client.spawn_count == 1  # exactly one child process
    assert client.live_child_count() == 1
    assert len({h.identity_token for h in results}) == 1
    for h in results:
        h.release()
    wait_until(lambda: client.live_child_count() == 0, 6, "child exit")
    ok(8, "crash rundown within 5s and single-instance under 32 activations")


def test_criterion_9_demo_lifecycle_all_three_routes(
    tmp_path, server_shim, peer_process, capsys
):
    from microcom.cli import run_cli

    expected = (
        "PHASE 1: Client request ... OK\n"
        "PHASE 2: Server location ... OK\n"
        "PHASE 3: Object creation ... OK\n"
        "PHASE 4: Interaction ... OK\n"
        "PHASE 5: Disconnection ... OK\n"
    )
    registries = {}

    reg = tmp_path / "demo-inproc.reg"
    write_registrations(reg, builtin(CLSID_CLOCK, "clock"))
    registries["inproc"] = reg

    reg = tmp_path / "demo-local.reg"
    write_registrations(reg, local(CLSID_CLOCK, server_shim))
    registries["local"] = reg

    peer_port = peer_process(builtin(CLSID_CLOCK, "clock"))
    reg = tmp_path / "demo-remote.reg"
    write_registrations(reg, remote(CLSID_CLOCK, peer_port))
    registries["remote"] = reg

    for route, registry in registries.items():
        code = run_cli(
            ["demo-lifecycle", "--registry", str(registry), "--clsid", guid_format(CLSID_CLOCK)]
        )
        out = capsys.readouterr().out
        assert code == 0, f"{route} demo exited {code}"
        assert out == expected, f"{route} demo output differs"
    ok(9, "five-phase demo on in-process, local and remote routes")
