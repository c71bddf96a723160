"""RPC with pluggable per-phase channel objects.

A call travels request -> indication -> response -> confirmation.  Each
phase crosses an ordered stack of channel objects that may wrap the message,
check it, repair faults, or demand a rebind, all without the application
noticing.  See the README for the wire format and the bundled services.
"""

from .engine import Binding, Caller, Endpoint, EngineConfig, loopback_pair
from .handler import (
    CallContext,
    CallState,
    ClearedWhileUndoing,
    Handler,
    HandlerSet,
    RebindDemanded,
    Unclearable,
)
from .message import (
    Address,
    CallId,
    Fault,
    FaultError,
    FaultKind,
    Message,
    MethodSignature,
    Phase,
    Reply,
    TaggedValue,
    Transport,
    format_address,
    parse_address,
    unwrap,
    wrap,
)
from .runtime import DeterministicRuntime, SystemRuntime, set_default_runtime
from .stream import Network
from .trace import Tracer

__version__ = "0.1.0"

__all__ = [
    "Address", "Binding", "CallContext", "CallId", "CallState", "Caller",
    "ClearedWhileUndoing", "DeterministicRuntime", "Endpoint", "EngineConfig",
    "Fault", "FaultError", "FaultKind", "Handler", "HandlerSet", "Message",
    "MethodSignature", "Network", "Phase", "RebindDemanded", "Reply",
    "SystemRuntime", "TaggedValue", "Tracer", "Transport", "Unclearable",
    "format_address", "loopback_pair", "parse_address",
    "set_default_runtime", "unwrap", "wrap", "__version__",
]
