"""Call and reply containers plus the wrapping algebra.

A call travels as a Message: addresses, method name, tagged parameters, a
128-bit call identifier, a one-cast flag and the phase of the channel that is
currently carrying it.  Channel objects add services by wrapping: the outer
message invokes the peer handler's method and carries the original message as
its final parameter.  Everything here is an immutable value.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum, IntEnum
from typing import Optional, Tuple

from . import runtime as _runtime


class Phase(IntEnum):
    REQUEST = 1
    INDICATION = 2
    RESPONSE = 3
    CONFIRMATION = 4


class Transport(IntEnum):
    LOOPBACK = 0
    TCP = 1
    UDP = 2


class Tag(IntEnum):
    UNIT = 0
    BOOL = 1
    INT64 = 2
    FLOAT64 = 3
    TEXT = 4
    BYTES = 5
    LIST = 6
    MESSAGE = 7


class FaultKind(Enum):
    APPLICATION = "application"
    CHANNEL = "channel"
    TRANSPORT = "transport"
    CLEARED = "cleared"        # internal control signal, never marshalled
    UNCLEARABLE = "unclearable"
    REBIND = "rebind"


_I64_MIN = -(1 << 63)
_I64_MAX = (1 << 63) - 1


@dataclass(frozen=True)
class Address:
    transport: Transport
    host: str
    port: int
    object_name: str

    def __post_init__(self):
        if not self.object_name:
            raise ValueError("object-name must be non-empty")
        if not 0 <= self.port <= 65535:
            raise ValueError("port out of range: %r" % (self.port,))


def parse_address(text: str) -> Address:
    """Parse 'tcp://host:port/name', 'udp://host:port/name' or 'loopback:///name'."""
    scheme, sep, rest = text.partition("://")
    if not sep:
        raise ValueError("address must look like transport://host:port/name: %r" % text)
    try:
        kind = Transport[scheme.upper()]
    except KeyError:
        raise ValueError("unknown transport %r in %r" % (scheme, text)) from None
    hostport, sep, name = rest.partition("/")
    if not sep or not name:
        raise ValueError("address missing /object-name: %r" % text)
    host, _, port_s = hostport.partition(":")
    port = int(port_s) if port_s else 0
    return Address(kind, host, port, name)


def format_address(a: Address) -> str:
    hostport = a.host
    if a.port:
        hostport += ":%d" % a.port
    return "%s://%s/%s" % (a.transport.name.lower(), hostport, a.object_name)


@dataclass(frozen=True)
class CallId:
    value: bytes

    def __post_init__(self):
        if len(self.value) != 16:
            raise ValueError("CallId is 16 bytes, got %d" % len(self.value))

    @property
    def hex(self) -> str:
        return self.value.hex()

    def __str__(self):
        return self.hex


ZERO_CALL_ID = CallId(b"\x00" * 16)


def new_call_id(rt: Optional[_runtime.Runtime] = None) -> CallId:
    rt = rt or _runtime.default_runtime()
    return CallId(rt.call_id_bytes())


@dataclass(frozen=True)
class TaggedValue:
    """One parameter: a tag plus its payload. Lists hold TaggedValues;
    the message tag holds a complete Message, which is what makes wrapping
    possible."""

    tag: Tag
    value: object = None

    def __post_init__(self):
        t, v = self.tag, self.value
        ok = (
            (t == Tag.UNIT and v is None)
            or (t == Tag.BOOL and isinstance(v, bool))
            or (t == Tag.INT64 and isinstance(v, int) and not isinstance(v, bool)
                and _I64_MIN <= v <= _I64_MAX)
            or (t == Tag.FLOAT64 and isinstance(v, float))
            or (t == Tag.TEXT and isinstance(v, str))
            or (t == Tag.BYTES and isinstance(v, bytes))
            or (t == Tag.LIST and isinstance(v, tuple)
                and all(isinstance(e, TaggedValue) for e in v))
            or (t == Tag.MESSAGE and isinstance(v, Message))
        )
        if not ok:
            raise ValueError("payload %r does not fit tag %s" % (v, t.name))

    @classmethod
    def unit(cls):
        return cls(Tag.UNIT, None)

    @classmethod
    def of_bool(cls, v: bool):
        return cls(Tag.BOOL, bool(v))

    @classmethod
    def of_int(cls, v: int):
        return cls(Tag.INT64, v)

    @classmethod
    def of_float(cls, v: float):
        return cls(Tag.FLOAT64, v)

    @classmethod
    def of_text(cls, v: str):
        return cls(Tag.TEXT, v)

    @classmethod
    def of_bytes(cls, v: bytes):
        return cls(Tag.BYTES, v)

    @classmethod
    def of_list(cls, items):
        return cls(Tag.LIST, tuple(items))

    @classmethod
    def of_message(cls, m: "Message"):
        return cls(Tag.MESSAGE, m)

    @classmethod
    def from_python(cls, v):
        """Best-effort tagging of a plain Python value (bool before int!)."""
        if v is None:
            return cls.unit()
        if isinstance(v, bool):
            return cls.of_bool(v)
        if isinstance(v, int):
            return cls.of_int(v)
        if isinstance(v, float):
            return cls.of_float(v)
        if isinstance(v, str):
            return cls.of_text(v)
        if isinstance(v, bytes):
            return cls.of_bytes(v)
        if isinstance(v, (list, tuple)):
            return cls.of_list(cls.from_python(e) for e in v)
        if isinstance(v, Message):
            return cls.of_message(v)
        raise TypeError("cannot tag %r" % (v,))

    def to_python(self):
        if self.tag == Tag.LIST:
            return [e.to_python() for e in self.value]
        return self.value


@dataclass(frozen=True)
class Message:
    target: Address
    return_address: Address
    method: str
    params: Tuple[TaggedValue, ...]
    call_id: CallId
    one_cast: bool = False
    phase: Phase = Phase.REQUEST

    def __post_init__(self):
        if not self.method:
            raise ValueError("method must be non-empty")
        object.__setattr__(self, "params", tuple(self.params))

    @property
    def is_wrapper(self) -> bool:
        return bool(self.params) and self.params[-1].tag == Tag.MESSAGE

    def with_phase(self, phase: Phase) -> "Message":
        return replace(self, phase=phase)

    def with_target(self, target: Address) -> "Message":
        return replace(self, target=target)


@dataclass(frozen=True)
class Fault:
    kind: FaultKind
    origin_phase: Phase
    handler_name: str = ""
    detail: str = ""
    contained: Optional["Fault"] = None

    def chain_depth(self) -> int:
        d, f = 1, self.contained
        while f is not None:
            d, f = d + 1, f.contained
        return d

    def describe(self) -> str:
        s = "%s/%s" % (self.kind.value, self.origin_phase.name.lower())
        if self.handler_name:
            s += " in %s" % self.handler_name
        if self.detail:
            s += ": %s" % self.detail
        if self.contained is not None:
            s += " [containing %s]" % self.contained.describe()
        return s


@dataclass(frozen=True)
class Reply:
    call_id: CallId
    result: Optional[TaggedValue] = None
    fault: Optional[Fault] = None

    def __post_init__(self):
        if (self.result is None) == (self.fault is None):
            raise ValueError("exactly one of result/fault must be present")

    @property
    def ok(self) -> bool:
        return self.fault is None


def empty_reply(call_id: CallId) -> Reply:
    return Reply(call_id, result=TaggedValue.unit())


class FaultError(Exception):
    """Raised wherever a Fault needs to travel as an exception."""

    def __init__(self, fault: Fault):
        super().__init__(fault.describe())
        self.fault = fault


class NotAWrapper(FaultError):
    """The last parameter is not message-tagged: peer stacks disagree."""

    def __init__(self, m: Message, phase: Phase):
        super().__init__(Fault(FaultKind.CHANNEL, phase, "",
                               "not a wrapper: method %r" % m.method))


class UnknownMethod(FaultError):
    def __init__(self, name: str, phase: Phase = Phase.INDICATION):
        super().__init__(Fault(FaultKind.APPLICATION, phase, "",
                               "unknown method %r" % name))


def wrap(outer_method: str, inner: Message, extra=()) -> Message:
    """Encapsulate `inner` as the final parameter of a message that invokes
    `outer_method` on the peer handler.  Addressing, call identity, the
    one-cast flag and the phase are inherited from the inner message."""
    params = tuple(extra) + (TaggedValue.of_message(inner),)
    return Message(
        target=inner.target,
        return_address=inner.return_address,
        method=outer_method,
        params=params,
        call_id=inner.call_id,
        one_cast=inner.one_cast,
        phase=inner.phase,
    )


def unwrap(m: Message) -> Tuple[Message, Tuple[TaggedValue, ...]]:
    """Inverse of wrap: the contained message and the preceding params."""
    if not m.is_wrapper:
        raise NotAWrapper(m, m.phase)
    return m.params[-1].value, m.params[:-1]


@dataclass(frozen=True)
class MethodSignature:
    """What the dispatcher knows about a remote method, enough to infer
    whether a call can travel as a one-cast."""

    name: str
    returns_result: bool = True
    fault_names: Tuple[str, ...] = ()


def is_one_cast(m: Message, signatures) -> bool:
    """True when no response will ever come back: the flag was set
    explicitly, or the registered signature has no result and no declared
    faults."""
    if m.one_cast:
        return True
    sig = signatures.get(m.method) if signatures is not None else None
    if sig is None:
        raise UnknownMethod(m.method, m.phase)
    return not sig.returns_result and not sig.fault_names
