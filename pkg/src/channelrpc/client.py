"""Initiator-side assembly: template in, ready-to-call Caller out."""

from __future__ import annotations

from typing import Dict, Optional, Union

from . import runtime as _runtime
from .engine import Binding, Caller, EngineConfig
from .message import Address, MethodSignature, parse_address
from .naming import registry_lookup
from .services import build_for_side, counterpart_free_names
from .stream import Network
from .templates import ChannelTemplate, negotiate, parse_template
from .trace import Tracer

_CONFIG_KEYS = {
    "scheme": ("scheme", str),
    "confirm-timeout-ms": ("confirm_timeout_ms", int),
    "resend-budget": ("resend_budget", int),
    "callstate-ttl-ms": ("callstate_ttl_ms", int),
}


def template_config(tpl: ChannelTemplate) -> EngineConfig:
    kwargs = {}
    for key, value in tpl.engine_params:
        if key not in _CONFIG_KEYS:
            raise ValueError("unknown engine parameter %r" % key)
        attr, cast = _CONFIG_KEYS[key]
        kwargs[attr] = cast(value)
    return EngineConfig(**kwargs)


def build_binding(tpl: ChannelTemplate, side: str, peer: Optional[Address],
                  local: Address, network: Network,
                  signatures: Optional[Dict[str, MethodSignature]] = None,
                  runtime: Optional[_runtime.Runtime] = None,
                  tracer: Optional[Tracer] = None,
                  config: Optional[EngineConfig] = None,
                  rebuild=None) -> Binding:
    call_sets, stream_chain = build_for_side(
        ((e.name, e.layer, e.required, e.params_dict) for e in tpl.entries),
        side,
    )
    return Binding(side, peer, local, call_sets, stream_chain,
                   signatures=signatures, runtime=runtime, tracer=tracer,
                   network=network, config=config or template_config(tpl),
                   rebuild=rebuild)


def _as_template(tpl: Union[str, ChannelTemplate, None]) -> ChannelTemplate:
    if tpl is None:
        return ChannelTemplate()
    if isinstance(tpl, str):
        return parse_template(tpl)
    return tpl


def bind_direct(template: Union[str, ChannelTemplate, None],
                target: Address, network: Network,
                signatures: Optional[Dict[str, MethodSignature]] = None,
                runtime: Optional[_runtime.Runtime] = None,
                tracer: Optional[Tracer] = None,
                local_name: str = "caller") -> Caller:
    """Bind straight to a known address with the given stack.

    The binding carries a rebuild path, so a relocation object in the stack
    can demand a rebind and calls will continue against the new address over
    fresh channels."""
    tpl = _as_template(template)
    local = Address(target.transport, "", 0, local_name)
    logical_name = target.object_name  # stable identity across relocations

    def rebuild(new_target: Address) -> Binding:
        binding = build_binding(tpl, "initiator", new_target, local, network,
                                signatures=signatures, runtime=runtime,
                                tracer=tracer, rebuild=rebuild)
        binding.session["peer.logical-name"] = logical_name
        return binding

    return Caller(rebuild(target))


def bind_via_registry(registry: Address, name: str,
                      client_template: Union[str, ChannelTemplate, None],
                      network: Network,
                      signatures: Optional[Dict[str, MethodSignature]] = None,
                      runtime: Optional[_runtime.Runtime] = None,
                      tracer: Optional[Tracer] = None,
                      local_name: str = "caller") -> Caller:
    """Look the server up, negotiate stacks, and bind to where it lives."""
    rec = registry_lookup(network, registry, name, runtime=runtime)
    if rec is None:
        raise LookupError("registry has no record of %r" % name)
    agreed = negotiate(_as_template(client_template),
                       parse_template(rec.template),
                       counterpart_free_names())
    return bind_direct(agreed, parse_address(rec.address), network,
                       signatures=signatures, runtime=runtime, tracer=tracer,
                       local_name=local_name)


# ------------------------------------------------------------ demo service

class Answerer:
    """The demo service the CLI hosts when no target is given."""

    def __init__(self):
        self.notes = []

    def answer(self, text: str) -> str:
        return "You said:" + text

    def add(self, a: int, b: int) -> int:
        return a + b

    def echo_blob(self, blob: bytes) -> bytes:
        return blob

    def note(self, text: str) -> None:
        self.notes.append(text)

    def fail(self, detail: str):
        raise RuntimeError(detail)


DEMO_SIGNATURES: Dict[str, MethodSignature] = {
    "answer": MethodSignature("answer"),
    "add": MethodSignature("add"),
    "echo_blob": MethodSignature("echo_blob"),
    "note": MethodSignature("note", returns_result=False),
    "fail": MethodSignature("fail", fault_names=("RuntimeError",)),
}
