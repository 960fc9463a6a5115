"""Operator and demo command line: registry management, activation, serving.

Exit codes: 0 success, 2 usage error, 3 runtime error (the error code is
printed on standard error).
"""

from __future__ import annotations

import argparse
import os
import sys
import threading

from .activation import (
    DEFAULT_REGISTRY_PATH,
    REGISTRY_ENV_VAR,
    factory_create_instance,
    initialize_object,
    library_init,
    library_shutdown,
)
from .errors import MicrocomError, NoInterface
from .guid import Guid, guid_format, guid_parse
from .interfaces import (
    IID_IALARM,
    IID_ICLASS_FACTORY,
    IID_ICLOCK,
    IID_IECHO,
    IID_ITIMER,
    IID_IUNKNOWN,
    interface_by_name,
)
from .registry import Registry, ServerRegistration, ServerType
from .scm import DEFAULT_REMOTE_PORT, ScmConfig, scm_serve
from .wire import render_value

PHASE_NAMES = [
    "Client request",
    "Server location",
    "Object creation",
    "Interaction",
    "Disconnection",
]

DEFAULT_INIT_ARGS = [0]


def _clsid_arg(text: str) -> Guid:
    try:
        return guid_parse(text)
    except MicrocomError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _iid_arg(text: str) -> Guid:
    try:
        return guid_parse(text)
    except MicrocomError:
        pass
    try:
        return interface_by_name(text).iid
    except MicrocomError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _parse_value_token(token: str):
    """One CLI value literal: a tagged canonical form or a bare shorthand."""
    token = token.strip()
    if token == "null":
        return None
    if token in ("true", "false"):
        return token == "true"
    if token.startswith("bool:"):
        return token[5:] == "true"
    if token.startswith("i64:"):
        return int(token[4:])
    if token.startswith("f64:"):
        return float(token[4:])
    if token.startswith("str:"):
        body = token[4:]
        if len(body) >= 2 and body[0] == '"' and body[-1] == '"':
            body = body[1:-1]
        return body.replace('\\"', '"').replace("\\\\", "\\")
    if token.startswith("bytes:"):
        return bytes.fromhex(token[6:])
    if token.startswith("guid:"):
        return guid_parse(token[5:])
    if token.startswith("{") and token.endswith("}"):
        return guid_parse(token)
    try:
        return int(token)
    except ValueError:
        pass
    try:
        return float(token)
    except ValueError:
        pass
    return token


def _parse_value_list(text: str) -> list:
    if text == "":
        return []
    return [_parse_value_token(token) for token in text.split(",")]


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--registry",
        default=os.environ.get(REGISTRY_ENV_VAR, DEFAULT_REGISTRY_PATH),
        help="registry file path (env MICROCOM_REGISTRY overrides the default)",
    )

    parser = argparse.ArgumentParser(
        prog="microcom", description="miniature component-object runtime"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("register", parents=[common], help="add or replace a class registration")
    p.add_argument("--clsid", type=_clsid_arg, required=True)
    p.add_argument("--type", choices=[t.value for t in ServerType], required=True)
    p.add_argument("--path", help="component module or server executable (inproc/local)")
    p.add_argument("--host", help="host:port of the peer SCM (remote)")
    p.add_argument("--remote-clsid", type=_clsid_arg, default=None)
    p.add_argument("--name", default="")
    p.add_argument("--version", type=int, default=1)

    p = sub.add_parser("unregister", parents=[common], help="remove a class registration")
    p.add_argument("--clsid", type=_clsid_arg, required=True)

    sub.add_parser("list", parents=[common], help="list registrations in class-id order")

    p = sub.add_parser("create", parents=[common], help="create, initialize and release an object")
    p.add_argument("--clsid", type=_clsid_arg, required=True)
    p.add_argument("--iid", type=_iid_arg, required=True)
    p.add_argument("--init", default=None, help="comma-separated initialization values")

    p = sub.add_parser("call", parents=[common], help="create an object and invoke one method")
    p.add_argument("--clsid", type=_clsid_arg, required=True)
    p.add_argument("--iid", type=_iid_arg, required=True)
    p.add_argument("--ordinal", type=int, required=True)
    p.add_argument("--args", default="", help="comma-separated argument values")
    p.add_argument("--init", default=None, help="comma-separated initialization values")

    p = sub.add_parser(
        "demo-lifecycle", parents=[common], help="walk the five object life-cycle phases"
    )
    p.add_argument("--clsid", type=_clsid_arg, required=True)

    p = sub.add_parser("serve", parents=[common], help="run a serving SCM")
    p.add_argument("--port", type=int, default=7700)
    p.add_argument("--bind", default="0.0.0.0")
    p.add_argument("--spawn-timeout", type=float, default=5.0)
    p.add_argument("--connect-timeout", type=float, default=3.0)
    p.add_argument("--linger", type=float, default=2.0)
    p.add_argument("--allow-dynamic", action="store_true")

    return parser


def _cmd_register(args) -> int:
    if args.type == ServerType.REMOTE.value:
        if not args.host:
            raise UsageError("remote registrations need --host")
        location = args.host
    else:
        if not args.path:
            raise UsageError(f"{args.type} registrations need --path")
        location = args.path
    registration = ServerRegistration(
        clsid=args.clsid,
        server_type=ServerType.from_token(args.type),
        location=location,
        remote_clsid=args.remote_clsid,
        friendly_name=args.name,
        component_version=args.version,
    )
    registry = Registry.load(args.registry)
    registry.register(registration)
    registry.save()
    return 0


def _cmd_unregister(args) -> int:
    registry = Registry.load(args.registry)
    registry.unregister(args.clsid)
    registry.save()
    return 0


def _cmd_list(args) -> int:
    registry = Registry.load(args.registry)
    for r in registry.list_classes():
        print(
            f"{guid_format(r.clsid)}\t{r.server_type.value}\t{r.location}\t{r.friendly_name}"
        )
    return 0


def _initialize_with_default(handle, init_text: str | None) -> None:
    init_args = DEFAULT_INIT_ARGS if init_text is None else _parse_value_list(init_text)
    try:
        initialize_object(handle, init_args)
    except NoInterface:
        pass  # born initialized


def _cmd_create(args) -> int:
    ctx = library_init(1, registry_path=args.registry)
    try:
        handle = ctx.create_instance(args.clsid, args.iid)
        try:
            _initialize_with_default(handle, args.init)
            print(handle.identity_token)
        finally:
            handle.release()
    finally:
        library_shutdown(ctx)
    return 0


def _cmd_call(args) -> int:
    ctx = library_init(1, registry_path=args.registry)
    try:
        handle = ctx.create_instance(args.clsid, args.iid)
        try:
            _initialize_with_default(handle, args.init)
            result = handle.call(args.ordinal, _parse_value_list(args.args))
            print(render_value(result))
        finally:
            handle.release()
    finally:
        library_shutdown(ctx)
    return 0


def _cmd_demo_lifecycle(args) -> int:
    phase = 0

    def done() -> None:
        nonlocal phase
        phase += 1
        print(f"PHASE {phase}: {PHASE_NAMES[phase - 1]} ... OK")

    ctx = library_init(1, registry_path=args.registry)
    done()  # Client request: version verified, library initialized
    try:
        factory = ctx.get_class_object(args.clsid, IID_ICLASS_FACTORY)
        done()  # Server location: the SCM found and connected the server
        try:
            obj = factory_create_instance(factory, IID_IUNKNOWN)
            try:
                _initialize_with_default(obj, None)
                done()  # Object creation: instantiated and initialized

                _demo_interaction(obj)
                done()  # Interaction
            finally:
                obj.release()
        finally:
            factory.release()
        done()  # Disconnection: every reference released
    finally:
        library_shutdown(ctx)
    return 0


def _demo_interaction(obj) -> None:
    """Exercise whichever sample interfaces the object supports."""
    try:
        clock = obj.query_interface(IID_ICLOCK)
    except NoInterface:
        clock = None
    if clock is not None:
        try:
            clock.call_by_name("set_time", 40)
            clock.call_by_name("advance", 2)
            assert clock.call_by_name("get_time") == 42
            alarm = obj.query_interface(IID_IALARM)
            try:
                alarm.call_by_name("set_alarm", 50)
                assert alarm.call_by_name("next_alarm") == 50
            finally:
                alarm.release()
            timer = obj.query_interface(IID_ITIMER)
            try:
                timer.call_by_name("start")
                clock.call_by_name("advance", 7)
                timer.call_by_name("stop")
                assert timer.call_by_name("elapsed") == 7
            finally:
                timer.release()
        finally:
            clock.release()
        return
    try:
        echo = obj.query_interface(IID_IECHO)
    except NoInterface:
        echo = None
    if echo is not None:
        try:
            assert echo.call_by_name("echo", "ping") == "ping"
        finally:
            echo.release()
        return
    # minimal interaction: prove the identity rule on a fresh IUnknown handle
    unknown = obj.query_interface(IID_IUNKNOWN)
    try:
        assert unknown.identity_token == obj.identity_token
    finally:
        unknown.release()


def _cmd_serve(args) -> int:
    config = ScmConfig(
        spawn_timeout=args.spawn_timeout,
        connect_timeout=args.connect_timeout,
        linger=args.linger,
        allow_dynamic_modules=args.allow_dynamic,
    )
    stop = threading.Event()
    try:
        scm_serve(args.bind, args.port, args.registry, config, stop_event=stop)
    except KeyboardInterrupt:
        stop.set()
    return 0


class UsageError(Exception):
    pass


_COMMANDS = {
    "register": _cmd_register,
    "unregister": _cmd_unregister,
    "list": _cmd_list,
    "create": _cmd_create,
    "call": _cmd_call,
    "demo-lifecycle": _cmd_demo_lifecycle,
    "serve": _cmd_serve,
}


def run_cli(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except MicrocomError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


def main() -> int:
    return run_cli()


if __name__ == "__main__":
    raise SystemExit(main())
