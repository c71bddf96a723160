"""Scripted end-to-end runs over in-process loopback.

A scenario is line-oriented; # starts a comment.  Directives:

    seed <n>
    start-daemon registry <address>
    start-daemon relocmgr <address>
    start-daemon server <address> [template=<name-or-path>]
                 [registry=<address>] [manager=<address>]
    call <method> [<arg> ...] [server=<name>] [one-cast]
                 [expect-result=<text>] [expect-fault=<substring>]
    inject-fault drop-nth <n> | corrupt-byte <k> | delay-ms <ms>
                 | refuse-next [<count>]
    relocate-server <name> <new-address>
    capture-frame [<slot>]
    resend-frame [<slot>]
    expect trace-contains <substring> [count=<n>]

Everything runs inside one process over the loopback transport with a seeded
runtime, so two runs with the same seed produce byte-identical traces.  Call
arguments parse as int, float, true/false, or text, in that order.
"""

from __future__ import annotations

import shlex
from typing import Dict, List, Optional, TextIO, Tuple

from .client import Answerer, DEMO_SIGNATURES, bind_direct, bind_via_registry
from .message import Address, FaultError, parse_address
from .naming import RegistryService, RelocationManagerService
from .runtime import DeterministicRuntime
from .server import Server, serve_naming
from .stream import Network, TransportFault
from .templates import load_template_text
from .trace import Tracer


class ScenarioError(Exception):
    def __init__(self, lineno: int, detail: str):
        super().__init__("scenario line %d: %s" % (lineno, detail))
        self.lineno = lineno
        self.detail = detail


def _parse_arg(token: str):
    try:
        return int(token)
    except ValueError:
        pass
    try:
        return float(token)
    except ValueError:
        pass
    if token in ("true", "false"):
        return token == "true"
    return token


def _split_options(tokens: List[str], flags=()) -> Tuple[List[str], Dict[str, str]]:
    """Separate positional tokens from key=value options and bare flags."""
    positional, options = [], {}
    for tok in tokens:
        if tok in flags:
            options[tok] = "true"
        elif "=" in tok:
            key, _, value = tok.partition("=")
            options[key] = value
        else:
            positional.append(tok)
    return positional, options


class ScenarioRunner:
    def __init__(self, text: str, seed: Optional[int] = None,
                 trace_out: Optional[TextIO] = None):
        self.lines = self._tokenize(text)
        script_seed = self._scripted_seed()
        self.seed = seed if seed is not None else (
            script_seed if script_seed is not None else 0)
        self.runtime = DeterministicRuntime(self.seed)
        self.tracer = Tracer(out=trace_out, rt=self.runtime)
        self.network = Network(rt=self.runtime, tracer=self.tracer)
        self.servers: Dict[str, Server] = {}
        self.callers: Dict[str, object] = {}
        self.registry_addr: Optional[Address] = None
        self.manager_addr: Optional[Address] = None
        self.last_server: Optional[str] = None
        self.captured: Dict[str, Tuple[str, bytes]] = {}
        self.report: List[str] = []

    @staticmethod
    def _tokenize(text: str) -> List[Tuple[int, List[str]]]:
        out = []
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            try:
                tokens = shlex.split(line, comments=True)
            except ValueError as e:
                raise ScenarioError(lineno, str(e)) from None
            if tokens:
                out.append((lineno, tokens))
        return out

    def _scripted_seed(self) -> Optional[int]:
        for _, tokens in self.lines:
            if tokens[0] == "seed" and len(tokens) == 2:
                return int(tokens[1])
        return None

    # ------------------------------------------------------------- running

    def run(self) -> str:
        for lineno, tokens in self.lines:
            head, rest = tokens[0], tokens[1:]
            step = getattr(self, "_do_" + head.replace("-", "_"), None)
            if step is None:
                raise ScenarioError(lineno, "unknown directive %r" % head)
            try:
                step(lineno, rest)
            except ScenarioError:
                raise
            except Exception as e:
                raise ScenarioError(lineno, "%s: %s" % (type(e).__name__, e)) from e
        return "\n".join(self.report) + ("\n" if self.report else "")

    def _ok(self, text: str):
        self.report.append("ok: " + text)

    # ---------------------------------------------------------- directives

    def _do_seed(self, lineno, rest):
        pass  # consumed before construction

    def _do_start_daemon(self, lineno, rest):
        if len(rest) < 2:
            raise ScenarioError(lineno, "start-daemon needs a kind and an address")
        kind, addr_text = rest[0], rest[1]
        addr = parse_address(addr_text)
        if kind == "registry":
            self.registry_addr = serve_naming(
                RegistryService(), addr, self.network).address
            self._ok("registry up at %s" % addr_text)
        elif kind == "relocmgr":
            self.manager_addr = serve_naming(
                RelocationManagerService(), addr, self.network).address
            self._ok("relocation manager up at %s" % addr_text)
        elif kind == "server":
            _, options = _split_options(rest[2:])
            template = load_template_text(options["template"]) \
                if "template" in options else None
            registry = parse_address(options["registry"]) \
                if "registry" in options else self.registry_addr
            manager = parse_address(options["manager"]) \
                if "manager" in options else self.manager_addr
            srv = Server(template, Answerer(), addr, self.network,
                         signatures=DEMO_SIGNATURES, runtime=self.runtime,
                         tracer=self.tracer, registry=registry,
                         manager=manager)
            srv.start()
            self.servers[srv.name] = srv
            self.last_server = srv.name
            self._ok("server %s up at %s" % (srv.name, addr_text))
        else:
            raise ScenarioError(lineno, "unknown daemon kind %r" % kind)

    def _caller_for(self, name: str):
        if name not in self.callers:
            srv = self.servers[name]
            if srv.registry is not None:
                caller = bind_via_registry(
                    srv.registry, name, srv.template, self.network,
                    signatures=DEMO_SIGNATURES, runtime=self.runtime,
                    tracer=self.tracer)
            else:
                caller = bind_direct(
                    srv.template, srv.address, self.network,
                    signatures=DEMO_SIGNATURES, runtime=self.runtime,
                    tracer=self.tracer)
            self.callers[name] = caller
        return self.callers[name]

    def _do_call(self, lineno, rest):
        if not rest:
            raise ScenarioError(lineno, "call needs a method name")
        positional, options = _split_options(rest, flags=("one-cast",))
        method, raw_args = positional[0], positional[1:]
        name = options.get("server", self.last_server)
        if name is None or name not in self.servers:
            raise ScenarioError(lineno, "no server to call (start one first)")
        caller = self._caller_for(name)
        args = [_parse_arg(a) for a in raw_args]
        one_cast = True if "one-cast" in options else None
        try:
            result = caller.call(method, *args, one_cast=one_cast)
        except FaultError as e:
            if "expect-fault" in options:
                if options["expect-fault"] not in e.fault.describe():
                    raise ScenarioError(
                        lineno, "fault %r does not mention %r"
                        % (e.fault.describe(), options["expect-fault"]))
                self._ok("call %s faulted as expected (%s)"
                         % (method, options["expect-fault"]))
                return
            raise ScenarioError(lineno, "call %s faulted: %s"
                                % (method, e.fault.describe())) from e
        if "expect-fault" in options:
            raise ScenarioError(lineno, "call %s succeeded but a fault "
                                        "mentioning %r was expected"
                                % (method, options["expect-fault"]))
        shown = "" if result is None else str(result)
        if "expect-result" in options and shown != options["expect-result"]:
            raise ScenarioError(lineno, "call %s returned %r, expected %r"
                                % (method, shown, options["expect-result"]))
        self._ok("call %s -> %s" % (method, shown or "(one-cast)"))

    def _do_inject_fault(self, lineno, rest):
        if not rest:
            raise ScenarioError(lineno, "inject-fault needs a kind")
        kind = rest[0]
        loop = self.network.loopback
        if kind == "drop-nth":
            loop.fault_drop_nth(int(rest[1]))
        elif kind == "corrupt-byte":
            loop.fault_corrupt_next(int(rest[1]))
        elif kind == "delay-ms":
            loop.fault_delay_next(int(rest[1]))
        elif kind == "refuse-next":
            loop.fault_refuse_next(int(rest[1]) if len(rest) > 1 else 1)
        else:
            raise ScenarioError(lineno, "unknown fault kind %r" % kind)
        self._ok("injected %s" % " ".join(rest))

    def _do_relocate_server(self, lineno, rest):
        if len(rest) != 2:
            raise ScenarioError(lineno, "relocate-server needs a name and an address")
        name, addr_text = rest
        if name not in self.servers:
            raise ScenarioError(lineno, "no server named %r" % name)
        self.servers[name].move(parse_address(addr_text))
        self._ok("server %s moved to %s (epoch %d)"
                 % (name, addr_text, self.servers[name].epoch))

    def _do_capture_frame(self, lineno, rest):
        slot = rest[0] if rest else "last"
        for endpoint, direction, data in reversed(self.network.loopback.frames):
            if direction == "req":
                self.captured[slot] = (endpoint, data)
                self._ok("captured a %d byte request frame to %s"
                         % (len(data), endpoint))
                return
        raise ScenarioError(lineno, "no request frame on the wire yet")

    def _do_resend_frame(self, lineno, rest):
        slot = rest[0] if rest else "last"
        if slot not in self.captured:
            raise ScenarioError(lineno, "nothing captured under %r" % slot)
        endpoint, data = self.captured[slot]
        try:
            response = self.network.loopback.inject(endpoint, data)
        except TransportFault:
            self._ok("resent frame to %s: endpoint gone" % endpoint)
            return
        got = "no response" if response is None else "%d byte response" % len(response)
        self._ok("resent frame to %s: %s" % (endpoint, got))

    def _do_expect(self, lineno, rest):
        if not rest or rest[0] != "trace-contains":
            raise ScenarioError(lineno, "expect supports: trace-contains <substring>")
        positional, options = _split_options(rest[1:])
        if not positional:
            raise ScenarioError(lineno, "expect trace-contains needs a substring")
        needle = positional[0]
        hits = sum(1 for line in self.tracer.lines if needle in line)
        if "count" in options:
            want = int(options["count"])
            if hits != want:
                raise ScenarioError(lineno, "trace has %d lines containing %r, "
                                            "expected %d" % (hits, needle, want))
        elif hits == 0:
            raise ScenarioError(lineno, "trace never mentions %r" % needle)
        self._ok("trace contains %r (%d)" % (needle, hits))


def run_scenario(text: str, seed: Optional[int] = None,
                 trace_out: Optional[TextIO] = None) -> str:
    return ScenarioRunner(text, seed=seed, trace_out=trace_out).run()
