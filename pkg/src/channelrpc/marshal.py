"""Canonical wire codec: the marshalling boundary.

Everything above this module thinks in Messages and Replies; everything below
thinks in bytes.  The encoding is deterministic (equal values give equal
bytes, which the replay detector relies on) and big-endian throughout.

Frame layout, fixed 27-byte header then payload:

    magic   4  "ODPC"
    version 1  0x01
    phase   1  1=request 2=indication 3=response 4=confirmation
    flags   1  bit0 = one-cast, bit1 = reply frame
    call-id 16
    length  4  u32, payload byte count

Message payload: target address, return address, method (length-prefixed
text), param count u32, then each param as a tag byte plus its body.
Addresses: transport byte (0 loopback, 1 tcp, 2 udp), host text, port u16,
object-name text.  A message nested inside a param re-encodes call-id, phase
and one-cast explicitly, but an address equal to the enclosing message's is
collapsed to the single sentinel byte 0xFF.

Reply payload: outcome byte (0 result, 1 fault), then a tagged value or a
fault record (kind byte, origin-phase byte, handler-name, detail,
contained-flag byte and, when set, a nested fault record).
"""

from __future__ import annotations

import struct
from typing import Optional, Tuple, Union

from .message import (
    Address,
    CallId,
    Fault,
    FaultError,
    FaultKind,
    Message,
    Phase,
    Reply,
    Tag,
    TaggedValue,
    Transport,
)

MAGIC = b"ODPC"
VERSION = 0x01
HEADER_LEN = 27

FLAG_ONE_CAST = 0x01
FLAG_REPLY = 0x02

_INHERIT_ADDRESS = 0xFF

_FAULT_KIND_CODE = {
    FaultKind.APPLICATION: 0,
    FaultKind.CHANNEL: 1,
    FaultKind.TRANSPORT: 2,
    FaultKind.CLEARED: 3,
    FaultKind.UNCLEARABLE: 4,
    FaultKind.REBIND: 5,
}
_FAULT_KIND_BY_CODE = {v: k for k, v in _FAULT_KIND_CODE.items()}


class MalformedFrame(FaultError):
    def __init__(self, detail: str, phase: Phase = Phase.INDICATION):
        super().__init__(Fault(FaultKind.CHANNEL, phase, "marshal", detail))


# ---------------------------------------------------------------- encoding

def _put_text(out: bytearray, s: str) -> None:
    data = s.encode("utf-8")
    out += struct.pack(">I", len(data))
    out += data


def _put_bytes(out: bytearray, b: bytes) -> None:
    out += struct.pack(">I", len(b))
    out += b


def _put_address(out: bytearray, a: Address, like: Optional[Address]) -> None:
    if like is not None and a == like:
        out.append(_INHERIT_ADDRESS)
        return
    out.append(int(a.transport))
    _put_text(out, a.host)
    out += struct.pack(">H", a.port)
    _put_text(out, a.object_name)


def _put_value(out: bytearray, v: TaggedValue, outer: Message) -> None:
    out.append(int(v.tag))
    t = v.tag
    if t == Tag.UNIT:
        pass
    elif t == Tag.BOOL:
        out.append(1 if v.value else 0)
    elif t == Tag.INT64:
        out += struct.pack(">q", v.value)
    elif t == Tag.FLOAT64:
        out += struct.pack(">d", v.value)
    elif t == Tag.TEXT:
        _put_text(out, v.value)
    elif t == Tag.BYTES:
        _put_bytes(out, v.value)
    elif t == Tag.LIST:
        out += struct.pack(">I", len(v.value))
        for e in v.value:
            _put_value(out, e, outer)
    elif t == Tag.MESSAGE:
        _put_nested(out, v.value, outer)
    else:  # pragma: no cover - Tag is closed
        raise ValueError("unencodable tag %r" % t)


def _put_body(out: bytearray, m: Message, like: Optional[Message]) -> None:
    _put_address(out, m.target, like.target if like else None)
    _put_address(out, m.return_address, like.return_address if like else None)
    _put_text(out, m.method)
    out += struct.pack(">I", len(m.params))
    for p in m.params:
        _put_value(out, p, m)


def _put_nested(out: bytearray, m: Message, outer: Message) -> None:
    out += m.call_id.value
    out.append(int(m.phase))
    out.append(1 if m.one_cast else 0)
    _put_body(out, m, outer)


def _header(phase: Phase, flags: int, call_id: CallId, payload_len: int) -> bytes:
    return MAGIC + bytes([VERSION, int(phase), flags]) + call_id.value + struct.pack(
        ">I", payload_len
    )


def marshal_message(m: Message) -> bytes:
    payload = bytearray()
    _put_body(payload, m, None)
    flags = FLAG_ONE_CAST if m.one_cast else 0
    return _header(m.phase, flags, m.call_id, len(payload)) + bytes(payload)


def _put_fault(out: bytearray, f: Fault) -> None:
    if f.kind == FaultKind.CLEARED:
        raise MalformedFrame("fault kind 'cleared' never goes on the wire")
    out.append(_FAULT_KIND_CODE[f.kind])
    out.append(int(f.origin_phase))
    _put_text(out, f.handler_name)
    _put_text(out, f.detail)
    if f.contained is None:
        out.append(0)
    else:
        out.append(1)
        _put_fault(out, f.contained)


def marshal_reply(r: Reply) -> bytes:
    payload = bytearray()
    if r.fault is None:
        payload.append(0)
        _put_value(payload, r.result, None)
    else:
        payload.append(1)
        _put_fault(payload, r.fault)
    return _header(Phase.RESPONSE, FLAG_REPLY, r.call_id, len(payload)) + bytes(payload)


# ---------------------------------------------------------------- decoding

class _Reader:
    def __init__(self, data: bytes, pos: int = 0):
        self.data = data
        self.pos = pos

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise MalformedFrame(
                "truncated: wanted %d bytes at offset %d of %d"
                % (n, self.pos, len(self.data))
            )
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack(">H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack(">I", self.take(4))[0]

    def text(self) -> str:
        n = self.u32()
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError as e:
            raise MalformedFrame("bad utf-8 in text field: %s" % e) from None

    def raw(self) -> bytes:
        return self.take(self.u32())


def _phase_of(code: int) -> Phase:
    try:
        return Phase(code)
    except ValueError:
        raise MalformedFrame("phase byte %d not in 1..4" % code) from None


def _read_header(r: _Reader) -> Tuple[Phase, int, CallId, int]:
    if r.take(4) != MAGIC:
        raise MalformedFrame("bad magic")
    version = r.u8()
    if version != VERSION:
        raise MalformedFrame("unknown version 0x%02x" % version)
    phase = _phase_of(r.u8())
    flags = r.u8()
    if flags & ~(FLAG_ONE_CAST | FLAG_REPLY):
        raise MalformedFrame("unknown flag bits 0x%02x" % flags)
    call_id = CallId(r.take(16))
    length = r.u32()
    if len(r.data) - r.pos != length:
        raise MalformedFrame(
            "payload length %d does not match remaining %d"
            % (length, len(r.data) - r.pos)
        )
    return phase, flags, call_id, length


def _read_address(r: _Reader, like: Optional[Address]) -> Address:
    kind = r.u8()
    if kind == _INHERIT_ADDRESS:
        if like is None:
            raise MalformedFrame("inherit-address sentinel at top level")
        return like
    try:
        transport = Transport(kind)
    except ValueError:
        raise MalformedFrame("unknown transport byte %d" % kind) from None
    host = r.text()
    port = r.u16()
    name = r.text()
    try:
        return Address(transport, host, port, name)
    except ValueError as e:
        raise MalformedFrame(str(e)) from None


def _read_value(r: _Reader, outer: Message) -> TaggedValue:
    code = r.u8()
    try:
        tag = Tag(code)
    except ValueError:
        raise MalformedFrame("unknown tag byte %d" % code) from None
    if tag == Tag.UNIT:
        return TaggedValue.unit()
    if tag == Tag.BOOL:
        b = r.u8()
        if b not in (0, 1):
            raise MalformedFrame("bool byte %d" % b)
        return TaggedValue.of_bool(bool(b))
    if tag == Tag.INT64:
        return TaggedValue.of_int(struct.unpack(">q", r.take(8))[0])
    if tag == Tag.FLOAT64:
        return TaggedValue.of_float(struct.unpack(">d", r.take(8))[0])
    if tag == Tag.TEXT:
        return TaggedValue.of_text(r.text())
    if tag == Tag.BYTES:
        return TaggedValue.of_bytes(r.raw())
    if tag == Tag.LIST:
        n = r.u32()
        return TaggedValue.of_list(_read_value(r, outer) for _ in range(n))
    return TaggedValue.of_message(_read_nested(r, outer))


def _read_body(
    r: _Reader,
    call_id: CallId,
    phase: Phase,
    one_cast: bool,
    like: Optional[Message],
) -> Message:
    target = _read_address(r, like.target if like else None)
    ret = _read_address(r, like.return_address if like else None)
    method = r.text()
    if not method:
        raise MalformedFrame("empty method name")
    count = r.u32()
    # params may nest messages whose addresses inherit from THIS message,
    # so build a shell first and rebuild with the decoded params.
    shell = Message(target, ret, method, (), call_id, one_cast, phase)
    params = tuple(_read_value(r, shell) for _ in range(count))
    return Message(target, ret, method, params, call_id, one_cast, phase)


def _read_nested(r: _Reader, outer: Message) -> Message:
    call_id = CallId(r.take(16))
    phase = _phase_of(r.u8())
    oc = r.u8()
    if oc not in (0, 1):
        raise MalformedFrame("one-cast byte %d" % oc)
    return _read_body(r, call_id, phase, bool(oc), outer)


def unmarshal_message(b: bytes) -> Message:
    r = _Reader(b)
    phase, flags, call_id, _ = _read_header(r)
    if flags & FLAG_REPLY:
        raise MalformedFrame("expected a message frame, got a reply frame")
    m = _read_body(r, call_id, phase, bool(flags & FLAG_ONE_CAST), None)
    if r.pos != len(b):
        raise MalformedFrame("garbage after message body")
    return m


def _read_fault(r: _Reader) -> Fault:
    code = r.u8()
    kind = _FAULT_KIND_BY_CODE.get(code)
    if kind is None:
        raise MalformedFrame("unknown fault kind byte %d" % code)
    if kind == FaultKind.CLEARED:
        raise MalformedFrame("fault kind 'cleared' is not valid on the wire")
    phase = _phase_of(r.u8())
    handler = r.text()
    detail = r.text()
    flag = r.u8()
    if flag not in (0, 1):
        raise MalformedFrame("contained-flag byte %d" % flag)
    contained = _read_fault(r) if flag else None
    return Fault(kind, phase, handler, detail, contained)


def unmarshal_reply(b: bytes) -> Reply:
    r = _Reader(b)
    _, flags, call_id, _ = _read_header(r)
    if not flags & FLAG_REPLY:
        raise MalformedFrame("expected a reply frame, got a message frame")
    outcome = r.u8()
    if outcome == 0:
        reply = Reply(call_id, result=_read_value(r, None))
    elif outcome == 1:
        reply = Reply(call_id, fault=_read_fault(r))
    else:
        raise MalformedFrame("outcome byte %d" % outcome)
    if r.pos != len(b):
        raise MalformedFrame("garbage after reply body")
    return reply


def unmarshal_any(b: bytes) -> Union[Message, Reply]:
    """Decode whichever frame kind the flags byte announces."""
    r = _Reader(b)
    _, flags, _, _ = _read_header(r)
    return unmarshal_reply(b) if flags & FLAG_REPLY else unmarshal_message(b)


def frame_flags(b: bytes) -> Tuple[Phase, int, CallId]:
    """Header fields only; cheap and does not touch the payload."""
    r = _Reader(b)
    phase, flags, call_id, _ = _read_header(r)
    return phase, flags, call_id


def peek_method(b: bytes) -> Tuple[str, CallId, bool]:
    """Partially unmarshal just far enough to dispatch.

    Reads the header and skips the two addresses, stopping right after the
    method field; parameters are never decoded.
    """
    r = _Reader(b)
    _, flags, call_id, _ = _read_header(r)
    if flags & FLAG_REPLY:
        raise MalformedFrame("reply frames carry no method")
    for _ in range(2):  # target, return address
        kind = r.u8()
        if kind == _INHERIT_ADDRESS:
            raise MalformedFrame("inherit-address sentinel at top level")
        r.text()
        r.u16()
        r.text()
    method = r.text()
    if not method:
        raise MalformedFrame("empty method name")
    return method, call_id, bool(flags & FLAG_ONE_CAST)
