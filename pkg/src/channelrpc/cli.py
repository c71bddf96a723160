"""Command line front end: demo server, naming daemons, one-shot calls,
and scripted scenarios.

    channelrpc call --method answer --arg hello
    channelrpc call --method add --arg 2 --arg 40 --template secure
    channelrpc scenario demo --trace -
    channelrpc serve --address tcp://127.0.0.1:4500/demo --template stamped
    channelrpc registry --address tcp://127.0.0.1:4501/registry

`call` with no --target and no --registry spins up an in-process demo
server over the loopback transport, so the round trip still crosses the
full channel stacks named by the template.

Seed precedence is --seed, then CHANNELRPC_SEED, then 0 for in-process
work (real transports fall back to the wall clock).  Template precedence
is --template, then CHANNELRPC_TEMPLATE, then the bare empty stack.
--trace appends the tab-separated event trace to a file, or to stderr
when given "-".
"""

import argparse
import os
import sys
import time
from typing import Optional

from .client import DEMO_SIGNATURES, Answerer, bind_direct, bind_via_registry
from .message import FaultError, format_address, parse_address
from .naming import RegistryService, RelocationManagerService
from .runtime import DeterministicRuntime, SystemRuntime
from .scenario import ScenarioError, ScenarioRunner, _parse_arg
from .server import Server
from .stream import Network, TransportFault
from .templates import (NegotiationFailed, TemplateError, bundled_names,
                        load_bundled, load_template_text)
from .trace import Tracer


def _resolve_seed(args) -> Optional[int]:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("CHANNELRPC_SEED")
    if env:
        return int(env)
    return None


def _resolve_template(args) -> Optional[str]:
    spec = args.template or os.environ.get("CHANNELRPC_TEMPLATE")
    if not spec:
        return None
    return load_template_text(spec)


def _make_runtime(seed: Optional[int], default_seed: Optional[int] = None):
    if seed is not None:
        return DeterministicRuntime(seed)
    if default_seed is not None:
        return DeterministicRuntime(default_seed)
    return SystemRuntime()


def _make_tracer(args, rt):
    """Returns (tracer or None, file handle to close or None)."""
    if not args.trace:
        return None, None
    if args.trace == "-":
        return Tracer(out=sys.stderr, rt=rt), None
    fh = open(args.trace, "a")
    return Tracer(out=fh, rt=rt), fh


def _block_until_interrupted(*servers):
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        pass
    finally:
        for srv in servers:
            srv.close()


# ------------------------------------------------------------- subcommands


def cmd_serve(args) -> int:
    rt = _make_runtime(_resolve_seed(args))
    tracer, fh = _make_tracer(args, rt)
    network = Network(rt=rt, tracer=tracer)
    srv = Server(_resolve_template(args), Answerer(),
                 parse_address(args.address), network,
                 signatures=DEMO_SIGNATURES, runtime=rt, tracer=tracer,
                 registry=parse_address(args.registry) if args.registry else None,
                 manager=parse_address(args.manager) if args.manager else None)
    actual = srv.start()
    print("serving %r at %s" % (srv.name, format_address(actual)), flush=True)
    _block_until_interrupted(srv)
    if fh:
        fh.close()
    return 0


def _cmd_naming(args, service, what: str) -> int:
    rt = _make_runtime(_resolve_seed(args))
    tracer, fh = _make_tracer(args, rt)
    network = Network(rt=rt, tracer=tracer)
    srv = Server(None, service, parse_address(args.address), network,
                 runtime=rt, tracer=tracer)
    actual = srv.start()
    print("%s at %s" % (what, format_address(actual)), flush=True)
    _block_until_interrupted(srv)
    if fh:
        fh.close()
    return 0


def cmd_registry(args) -> int:
    return _cmd_naming(args, RegistryService(), "registry")


def cmd_relocmgr(args) -> int:
    return _cmd_naming(args, RelocationManagerService(), "relocation manager")


def cmd_call(args) -> int:
    seed = _resolve_seed(args)
    template = _resolve_template(args)
    demo = not args.target and not args.registry
    # The in-process demo must be reproducible even without a seed.
    rt = _make_runtime(seed, default_seed=0 if demo else None)
    tracer, fh = _make_tracer(args, rt)
    network = Network(rt=rt, tracer=tracer)

    # Each process must present a distinct caller identity, or the server's
    # per-caller sequence scoreboard will see a restart as a replay.  The
    # in-process demo keeps a fixed name so seeded traces stay identical.
    local_name = "caller" if demo else "caller-%d" % os.getpid()

    server = None
    try:
        if demo:
            server = Server(template, Answerer(),
                            parse_address("loopback:///demo"), network,
                            signatures=DEMO_SIGNATURES, runtime=rt,
                            tracer=tracer)
            server.start()
            caller = bind_direct(template, server.address, network,
                                 signatures=DEMO_SIGNATURES, runtime=rt,
                                 tracer=tracer)
        elif args.registry:
            caller = bind_via_registry(parse_address(args.registry),
                                       args.name, template, network,
                                       signatures=DEMO_SIGNATURES,
                                       runtime=rt, tracer=tracer,
                                       local_name=local_name)
        else:
            caller = bind_direct(template, parse_address(args.target),
                                 network, signatures=DEMO_SIGNATURES,
                                 runtime=rt, tracer=tracer,
                                 local_name=local_name)
        if args.timeout_ms is not None:
            caller.binding.config.confirm_timeout_ms = args.timeout_ms

        one_cast = True if args.one_cast else None
        result = caller.call(args.method, *[_parse_arg(a) for a in args.arg],
                             one_cast=one_cast)
    except FaultError as e:
        print("fault: %s" % e.fault.describe(), file=sys.stderr)
        return 1
    except (LookupError, NegotiationFailed, TemplateError,
            TransportFault) as e:
        print("error: %s" % e, file=sys.stderr)
        return 1
    finally:
        if server is not None:
            server.close()
        if fh:
            fh.close()

    if result is None:
        return 0
    if isinstance(result, bytes):
        print(result.hex())
    else:
        print(result)
    return 0


def cmd_scenario(args) -> int:
    spec = args.script
    if os.path.exists(spec):
        with open(spec, encoding="utf-8") as fh:
            text = fh.read()
    else:
        try:
            text = load_bundled(spec if spec.endswith(".scn") else spec + ".scn")
        except FileNotFoundError:
            print("error: no scenario file %r and no bundled scenario of "
                  "that name; bundled: %s"
                  % (spec, ", ".join(n for n in bundled_names()
                                     if n.endswith(".scn"))),
                  file=sys.stderr)
            return 1

    trace_out = None
    fh = None
    if args.trace == "-":
        trace_out = sys.stderr
    elif args.trace:
        fh = trace_out = open(args.trace, "a")

    try:
        report = ScenarioRunner(text, seed=_resolve_seed(args),
                                trace_out=trace_out).run()
    except ScenarioError as e:
        print("error: %s" % e, file=sys.stderr)
        return 1
    finally:
        if fh:
            fh.close()
    sys.stdout.write(report)
    return 0


# ------------------------------------------------------------------ parser


def _add_common(p):
    p.add_argument("--seed", type=int, default=None,
                   help="seed for the deterministic runtime "
                        "(default: $CHANNELRPC_SEED)")
    p.add_argument("--trace", metavar="PATH",
                   help="write the event trace to PATH, or to stderr for '-'")


def _add_template(p):
    p.add_argument("--template", metavar="NAME-OR-PATH",
                   help="channel template, bundled name or file "
                        "(default: $CHANNELRPC_TEMPLATE, else bare)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="channelrpc",
        description="Layered-channel RPC demo tools.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="host the demo service")
    p.add_argument("--address", default="tcp://127.0.0.1:4500/demo")
    p.add_argument("--registry", help="registry to publish into")
    p.add_argument("--manager", help="relocation manager to report moves to")
    _add_template(p)
    _add_common(p)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("registry", help="host a name registry")
    p.add_argument("--address", default="tcp://127.0.0.1:4501/registry")
    _add_common(p)
    p.set_defaults(func=cmd_registry)

    p = sub.add_parser("relocmgr", help="host a relocation manager")
    p.add_argument("--address", default="tcp://127.0.0.1:4502/relocmgr")
    _add_common(p)
    p.set_defaults(func=cmd_relocmgr)

    p = sub.add_parser("call", help="invoke one method and print the result")
    p.add_argument("--method", required=True)
    p.add_argument("--arg", action="append", default=[],
                   help="positional argument; parses as int, float, "
                        "true/false, or text (repeatable)")
    p.add_argument("--target", help="server address for a direct bind")
    p.add_argument("--registry", help="look the server up here instead")
    p.add_argument("--name", default="demo",
                   help="logical server name for registry lookup")
    p.add_argument("--one-cast", action="store_true",
                   help="fire and forget: one frame, no reply expected")
    p.add_argument("--timeout-ms", type=int, default=None)
    _add_template(p)
    _add_common(p)
    p.set_defaults(func=cmd_call)

    p = sub.add_parser("scenario", help="run a scripted scenario")
    p.add_argument("script", help="path or bundled name (e.g. demo)")
    _add_common(p)
    p.set_defaults(func=cmd_scenario)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
