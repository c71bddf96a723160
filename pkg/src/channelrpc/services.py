"""The bundled channel objects and the catalog templates build from.

Call-layer objects ride the four phases; the cipher is a stream transform.
All keyed material rests on FNV-1a 64, which is NOT cryptography: the point
is exercising transparent services over the channels, not secrecy.  Deploy
real crypto before trusting any of this with data that matters.

Key establishment is in-band: while no key is present the cipher passes
frames through, the first call carries a client nonce out and the server
nonce back, and both ends derive

    key     = fnv1a64(psk || Nc || Ns || j) for j = 0..3, concatenated
    confirm = fnv1a64(key)

so from the second call on, frames travel XORed with the keystream

    block_i = fnv1a64(key || i-as-u64-big-endian).

Everything a handler pair must share across phases goes through CallState
under its template entry name; the negotiator and cipher share the session
keys "crypto.key" / "crypto.established_ms" and the per-call CallState keys
"crypto.ns" / "crypto.plain".
"""

from __future__ import annotations

import struct
import threading
from collections import deque
from datetime import datetime, timezone
from typing import Dict, List, Optional, Tuple

from .handler import Handler, HandlerSet, RebindDemanded, Unclearable
from .message import (
    Address,
    Fault,
    FaultError,
    FaultKind,
    Phase,
    TaggedValue,
    format_address,
    parse_address,
    unwrap,
    wrap,
)
from .stream import StreamHandler

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


def fnv1a64(data: bytes) -> int:
    h = FNV_OFFSET
    for b in data:
        h = ((h ^ b) * FNV_PRIME) & _MASK64
    return h


def keystream(key: bytes, length: int) -> bytes:
    out = bytearray()
    i = 0
    while len(out) < length:
        out += fnv1a64(key + struct.pack(">Q", i)).to_bytes(8, "big")
        i += 1
    return bytes(out[:length])


def xor_bytes(data: bytes, pad: bytes) -> bytes:
    return bytes(a ^ b for a, b in zip(data, pad))


def derive_key(psk: bytes, client_nonce: bytes, server_nonce: bytes) -> bytes:
    return b"".join(
        fnv1a64(psk + client_nonce + server_nonce + bytes([j])).to_bytes(8, "big")
        for j in range(4)
    )


def confirm_value(key: bytes) -> bytes:
    return fnv1a64(key).to_bytes(8, "big")


# -------------------------------------------------------------- timestamps

class StampIssuer(Handler):
    """Wraps outgoing messages with the send time in epoch milliseconds."""

    WRAP = "checkStamp"

    def __init__(self, name: str):
        self.name = name

    def todo(self, m, ctx):
        if ctx.call_state.get(ctx.call_id, self.name + ".absent"):
            return m  # peer carries no checker; stay unwrapped
        stamp = ctx.now_ms()
        ctx.call_state.put(ctx.call_id, self.name, TaggedValue.of_int(stamp))
        return wrap(self.WRAP, m, (TaggedValue.of_int(stamp),))

    def redo(self, m, ctx):
        if ctx.call_state.get(ctx.call_id, self.name + ".absent"):
            return m
        stored = ctx.call_state.get(ctx.call_id, self.name)
        if stored is None:
            return self.todo(m, ctx)
        return wrap(self.WRAP, m, (stored,))

    def clear(self, m, f, ctx):
        # A stale stamp is repairable: drop it and let redo stamp afresh.
        related = f.handler_name == self.name or "stamp" in f.detail.lower()
        if f.kind != FaultKind.CHANNEL or not related:
            raise Unclearable()
        ctx.call_state.remove(ctx.call_id, self.name)
        return m


class StampChecker(Handler):
    def __init__(self, name: str, skew_ms: int = 5000, required: bool = True):
        self.name = name
        self.skew_ms = skew_ms
        self.required = required

    def todo(self, m, ctx):
        if not (m.is_wrapper and m.method == StampIssuer.WRAP):
            if self.required:
                raise self.fault(ctx, "expected a %s wrapper, got method %r"
                                 % (StampIssuer.WRAP, m.method))
            ctx.call_state.put(ctx.call_id, self.name + ".absent",
                               TaggedValue.of_bool(True))
            return m
        inner, extra = unwrap(m)
        stamped = extra[0].value
        now = ctx.now_ms()
        if abs(now - stamped) > self.skew_ms:
            raise self.fault(ctx, "stamped %d but now is %d, past the %dms skew"
                             % (stamped, now, self.skew_ms))
        return inner


# -------------------------------------------------------------- sequencing

class SequenceIssuer(Handler):
    """Numbers requests so the far side can refuse regressions.  The number
    is pinned per call, so redo resends carry the same one."""

    WRAP = "checkSequence"

    def __init__(self, name: str):
        self.name = name
        self._lock = threading.Lock()

    def _counter_key(self):
        return "seq.next." + self.name

    def todo(self, m, ctx):
        if ctx.call_state.get(ctx.call_id, self.name + ".absent"):
            return m
        key = self._counter_key()
        with self._lock:
            n = ctx.binding.session.get(key, 0) + 1
            ctx.binding.session[key] = n
        ctx.call_state.put(ctx.call_id, self.name, TaggedValue.of_int(n))
        return wrap(self.WRAP, m, (TaggedValue.of_int(n),))

    def redo(self, m, ctx):
        stored = ctx.call_state.get(ctx.call_id, self.name)
        if stored is None:
            return self.todo(m, ctx)
        return wrap(self.WRAP, m, (stored,))

    def undo(self, m, f, ctx):
        stored = ctx.call_state.get(ctx.call_id, self.name)
        key = self._counter_key()
        with self._lock:
            # Give the number back only while it is still the newest.
            if stored is not None and ctx.binding.session.get(key) == stored.value:
                ctx.binding.session[key] = stored.value - 1
        return super().undo(m, f, ctx)


class SequenceChecker(Handler):
    def __init__(self, name: str, required: bool = True):
        self.name = name
        self.required = required
        self._lock = threading.Lock()

    def todo(self, m, ctx):
        if not (m.is_wrapper and m.method == SequenceIssuer.WRAP):
            if self.required:
                raise self.fault(ctx, "expected a %s wrapper, got method %r"
                                 % (SequenceIssuer.WRAP, m.method))
            ctx.call_state.put(ctx.call_id, self.name + ".absent",
                               TaggedValue.of_bool(True))
            return m
        inner, extra = unwrap(m)
        n = extra[0].value
        key = "seq.seen.%s.%s" % (self.name, inner.return_address.object_name)
        with self._lock:
            seen = ctx.binding.session.get(key, 0)
            stored = ctx.call_state.get(ctx.call_id, self.name)
            if stored is not None and stored.value == n:
                return inner  # redo resend of a call already admitted
            if n <= seen:
                raise self.fault(ctx, "sequence %d not above %d" % (n, seen))
            ctx.binding.session[key] = n
            ctx.call_state.put(ctx.call_id, self.name, TaggedValue.of_int(n))
            ctx.call_state.put(ctx.call_id, self.name + ".prev",
                               TaggedValue.of_int(seen))
        return inner

    def undo(self, m, f, ctx):
        stored = ctx.call_state.get(ctx.call_id, self.name)
        prev = ctx.call_state.get(ctx.call_id, self.name + ".prev")
        if stored is not None and prev is not None:
            with self._lock:
                for key, val in list(ctx.binding.session.items()):
                    if key.startswith("seq.seen.%s." % self.name) and val == stored.value:
                        ctx.binding.session[key] = prev.value
                        break
            ctx.call_state.remove(ctx.call_id, self.name)
        return super().undo(m, f, ctx)


# ------------------------------------------------------------ usage logging

class UsageLogger(Handler):
    """Appends one tab-separated line per verb: ISO-8601 time, verb, the
    method as seen at this stack position, call id."""

    def __init__(self, name: str, path: Optional[str] = None):
        self.name = name
        self.path = path
        self.records: List[str] = []
        self._lock = threading.Lock()

    def _log(self, event: str, m, ctx):
        ts = datetime.fromtimestamp(ctx.now_ms() / 1000.0, timezone.utc)
        line = "\t".join((ts.isoformat(timespec="milliseconds"), event,
                          m.method, ctx.call_id.hex if ctx.call_id else "-"))
        with self._lock:
            self.records.append(line)
            if self.path:
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(line + "\n")

    def todo(self, m, ctx):
        self._log("call", m, ctx)
        return m

    def undo(self, m, f, ctx):
        self._log("undo", m, ctx)
        return super().undo(m, f, ctx)

    def redo(self, m, ctx):
        self._log("redo", m, ctx)
        return m


# ---------------------------------------------------------------- accounts

class AccountStamper(Handler):
    WRAP = "billedTo"

    def __init__(self, name: str, account: str):
        self.name = name
        self.account = account

    def todo(self, m, ctx):
        if ctx.call_state.get(ctx.call_id, self.name + ".absent"):
            return m
        return wrap(self.WRAP, m, (TaggedValue.of_text(self.account),))


class AccountChecker(Handler):
    def __init__(self, name: str, required: bool = True):
        self.name = name
        self.required = required
        self._lock = threading.Lock()

    def todo(self, m, ctx):
        if not (m.is_wrapper and m.method == AccountStamper.WRAP):
            if self.required:
                raise self.fault(ctx, "expected a %s wrapper, got method %r"
                                 % (AccountStamper.WRAP, m.method))
            ctx.call_state.put(ctx.call_id, self.name + ".absent",
                               TaggedValue.of_bool(True))
            return m
        inner, extra = unwrap(m)
        account = extra[0].value
        with self._lock:
            ledger = ctx.binding.session.setdefault("billing", {})
            ledger[account] = ledger.get(account, 0) + 1
        ctx.call_state.put(ctx.call_id, self.name, TaggedValue.of_text(account))
        return inner

    def undo(self, m, f, ctx):
        stored = ctx.call_state.get(ctx.call_id, self.name)
        if stored is not None:
            with self._lock:
                ledger = ctx.binding.session.setdefault("billing", {})
                if ledger.get(stored.value, 0) > 0:
                    ledger[stored.value] -= 1
            ctx.call_state.remove(ctx.call_id, self.name)
        return super().undo(m, f, ctx)


# ---------------------------------------------------------- key negotiation

_KEY = "crypto.key"
_KEY_BORN = "crypto.established_ms"
_CS_NS = "crypto.ns"
_CS_PLAIN = "crypto.plain"


class KeyRequest(Handler):
    """Initiator request side: opens negotiation while no key is present."""

    WRAP = "negotiateKey"

    def __init__(self, name: str, psk: bytes):
        self.name = name
        self.psk = psk

    def todo(self, m, ctx):
        if ctx.binding.session.get(_KEY) is not None:
            return m
        nc = ctx.call_state.get(ctx.call_id, self.name)
        if nc is None:
            nc = TaggedValue.of_bytes(ctx.binding.runtime.nonce(16))
            ctx.call_state.put(ctx.call_id, self.name, nc)
        return wrap(self.WRAP, m, (nc,))

    def clear(self, m, f, ctx):
        # An expired or rejected key is repaired by renegotiating from redo.
        if f.kind == FaultKind.CHANNEL and "key" in f.detail.lower():
            ctx.binding.session.pop(_KEY, None)
            ctx.binding.session.pop(_KEY_BORN, None)
            return m
        raise Unclearable()


class KeyAccept(Handler):
    """Acceptor indication side: derives the key, flags a plaintext reply."""

    def __init__(self, name: str, psk: bytes):
        self.name = name
        self.psk = psk

    def todo(self, m, ctx):
        if not (m.is_wrapper and m.method == KeyRequest.WRAP):
            return m
        inner, extra = unwrap(m)
        nc = extra[0].value
        ns = ctx.binding.runtime.nonce(16)
        key = derive_key(self.psk, nc, ns)
        ctx.binding.session[_KEY] = key
        ctx.binding.session[_KEY_BORN] = ctx.now_ms()
        ctx.call_state.put(ctx.call_id, _CS_NS, TaggedValue.of_bytes(ns))
        # The peer cannot decrypt until it has seen our nonce.
        ctx.call_state.put(ctx.call_id, _CS_PLAIN, TaggedValue.of_bool(True))
        return inner

    def undo(self, m, f, ctx):
        if ctx.call_state.get(ctx.call_id, _CS_NS) is not None:
            ctx.binding.session.pop(_KEY, None)
            ctx.binding.session.pop(_KEY_BORN, None)
            ctx.call_state.remove(ctx.call_id, _CS_NS)
            ctx.call_state.remove(ctx.call_id, _CS_PLAIN)
        return super().undo(m, f, ctx)


class KeyReplyIssuer(Handler):
    """Acceptor response side: returns the server nonce and a confirm tag."""

    WRAP = "keyAccept"

    def __init__(self, name: str, psk: bytes):
        self.name = name
        self.psk = psk

    def todo(self, m, ctx):
        ns = ctx.call_state.get(ctx.call_id, _CS_NS)
        if ns is None:
            return m
        key = ctx.binding.session.get(_KEY)
        if key is None:
            raise self.fault(ctx, "negotiated key vanished before the reply")
        conf = TaggedValue.of_bytes(confirm_value(key))
        return wrap(self.WRAP, m, (ns, conf))


class KeyConfirm(Handler):
    """Initiator confirmation side: closes negotiation, installs the key."""

    def __init__(self, name: str, psk: bytes):
        self.name = name
        self.psk = psk

    def todo(self, m, ctx):
        if not (m.is_wrapper and m.method == KeyReplyIssuer.WRAP):
            return m
        inner, extra = unwrap(m)
        ns, conf = extra[0].value, extra[1].value
        nc = ctx.call_state.get(ctx.call_id, self.name)
        if nc is None:
            raise self.fault(ctx, "key reply for a call that never negotiated")
        key = derive_key(self.psk, nc.value, ns)
        if confirm_value(key) != conf:
            raise self.fault(ctx, "key confirmation mismatch")
        ctx.binding.session[_KEY] = key
        ctx.binding.session[_KEY_BORN] = ctx.now_ms()
        return inner


class CipherStream(StreamHandler):
    """XOR keystream over whole frames; passes plaintext while keyless.

    Receive distinguishes the cases by the frame prefix: plaintext frames
    open with the codec magic, anything else must decrypt back to it."""

    MAGIC5 = b"ODPC\x01"

    def __init__(self, name: str, ttl_ms: int = 600_000,
                 static_key: Optional[bytes] = None):
        self.name = name
        self.ttl_ms = ttl_ms
        self.static_key = static_key

    def _fault(self, ctx, detail: str) -> FaultError:
        return FaultError(Fault(FaultKind.CHANNEL, ctx.phase, self.name, detail))

    def _key(self, ctx) -> Optional[bytes]:
        if self.static_key is not None:
            return self.static_key
        return ctx.binding.session.get(_KEY)

    def on_send(self, data, ctx):
        if ctx.call_id is not None and \
                ctx.call_state.get(ctx.call_id, _CS_PLAIN):
            return data
        key = self._key(ctx)
        if key is None:
            return data
        if self.static_key is None:
            born = ctx.binding.session.get(_KEY_BORN, 0)
            if ctx.now_ms() - born > self.ttl_ms:
                raise self._fault(ctx, "key expired, renegotiation needed")
        return xor_bytes(data, keystream(key, len(data)))

    def on_receive(self, data, ctx):
        if data[:5] == self.MAGIC5:
            return data
        key = self._key(ctx)
        if key is None:
            raise self._fault(ctx, "undecipherable frame before key establishment")
        plain = xor_bytes(data, keystream(key, len(data)))
        if plain[:5] != self.MAGIC5:
            raise self._fault(ctx, "decryption integrity check failed")
        return plain


# ----------------------------------------------------------- replay defence

class ReplayWindow:
    """Fixed-capacity FIFO of frame checksums."""

    def __init__(self, capacity: int = 4096):
        if capacity < 1:
            raise ValueError("window capacity must be positive")
        self.capacity = capacity
        self._order = deque()
        self._seen = set()
        self._lock = threading.Lock()

    def admit(self, checksum: int) -> bool:
        """True if the checksum is new; records it, evicting the oldest."""
        with self._lock:
            if checksum in self._seen:
                return False
            self._order.append(checksum)
            self._seen.add(checksum)
            if len(self._order) > self.capacity:
                self._seen.discard(self._order.popleft())
            return True

    def __contains__(self, checksum: int) -> bool:
        with self._lock:
            return checksum in self._seen

    def __len__(self):
        with self._lock:
            return len(self._order)


class ReplayDetector(Handler):
    """Refuses any frame whose checksum was seen recently.  Runs on receive
    channels only; the checksum covers the frame after stream decode."""

    def __init__(self, name: str, capacity: int = 4096):
        self.name = name
        self.window = ReplayWindow(capacity)

    def todo(self, m, ctx):
        if ctx.frame_bytes is None:
            return m
        checksum = fnv1a64(ctx.frame_bytes)
        if not self.window.admit(checksum):
            raise self.fault(ctx, "replayed frame, checksum %016x" % checksum)
        return m


# --------------------------------------------------------------- relocation

class Relocator(Handler):
    """Pass-through that clears transport faults by asking the relocation
    manager where the peer went.  Never repairs in place: a confirmed move
    demands a rebind, anything else stays unclearable."""

    def __init__(self, name: str, manager: Address,
                 object_name: Optional[str] = None):
        self.name = name
        self.manager = manager
        self.object_name = object_name

    def clear(self, m, f, ctx):
        if f.kind != FaultKind.TRANSPORT:
            raise Unclearable("relocation clears transport faults only")
        from .naming import manager_locate  # naming rides the same engine
        target = (self.object_name
                  or ctx.binding.session.get("peer.logical-name")
                  or ctx.peer.object_name)
        current = manager_locate(ctx.binding.network, self.manager, target)
        if current is None:
            raise Unclearable("relocation manager has no record of %r" % target)
        if current == ctx.peer:
            raise Unclearable("peer still lives at %s" % format_address(current))
        raise RebindDemanded(current, "moved to %s" % format_address(current))


# ------------------------------------------------------------------ catalog

class CatalogEntry:
    def __init__(self, layer: str, needs_counterpart: bool, build):
        self.layer = layer
        self.needs_counterpart = needs_counterpart
        self.build = build  # (side, name, params, required) -> object or None


def _int_param(params: Dict[str, str], key: str, default: int) -> int:
    return int(params[key]) if key in params else default


def _build_timestamp(side, name, params, required):
    skew = _int_param(params, "skew-ms", 5000)
    if side == "initiator":
        handlers = {Phase.REQUEST: StampIssuer(name),
                    Phase.CONFIRMATION: StampChecker(name, skew, required)}
    else:
        handlers = {Phase.INDICATION: StampChecker(name, skew, required),
                    Phase.RESPONSE: StampIssuer(name)}
    return HandlerSet(name, handlers, counterpart=("peer", name),
                      required=required)


def _build_sequence(side, name, params, required):
    if side == "initiator":
        handlers = {Phase.REQUEST: SequenceIssuer(name)}
    else:
        handlers = {Phase.INDICATION: SequenceChecker(name, required)}
    return HandlerSet(name, handlers, counterpart=("peer", name),
                      associate=name, required=required)


def _build_usage_log(side, name, params, required):
    if side != "acceptor":
        return None
    return HandlerSet(name, {Phase.INDICATION: UsageLogger(name, params.get("path"))},
                      required=False)


def _build_accounting(side, name, params, required):
    if side == "initiator":
        account = params.get("account", "default")
        handlers = {Phase.REQUEST: AccountStamper(name, account)}
    else:
        handlers = {Phase.INDICATION: AccountChecker(name, required)}
    return HandlerSet(name, handlers, counterpart=("peer", name),
                      required=required)


def _psk_of(params: Dict[str, str]) -> bytes:
    if "psk" not in params:
        raise ValueError("key negotiation needs a psk=<secret> parameter")
    return params["psk"].encode("utf-8")


def _build_key_negotiation(side, name, params, required):
    psk = _psk_of(params)
    if side == "initiator":
        handlers = {Phase.REQUEST: KeyRequest(name, psk),
                    Phase.CONFIRMATION: KeyConfirm(name, psk)}
    else:
        handlers = {Phase.INDICATION: KeyAccept(name, psk),
                    Phase.RESPONSE: KeyReplyIssuer(name, psk)}
    return HandlerSet(name, handlers, counterpart=("peer", name),
                      associate=name, required=required)


def _build_replay(side, name, params, required):
    capacity = _int_param(params, "window", 4096)
    phase = Phase.CONFIRMATION if side == "initiator" else Phase.INDICATION
    return HandlerSet(name, {phase: ReplayDetector(name, capacity)},
                      associate=name, required=False)


def _build_relocation(side, name, params, required):
    if side != "initiator":
        return None
    if "manager" not in params:
        raise ValueError("relocation needs a manager=<address> parameter")
    manager = parse_address(params["manager"])
    return HandlerSet(name, {Phase.REQUEST: Relocator(name, manager,
                                                      params.get("object"))},
                      required=False)


def _build_encrypt(side, name, params, required):
    ttl = _int_param(params, "ttl-ms", 600_000)
    static = None
    if "static-key" in params:
        static = derive_key(params["static-key"].encode("utf-8"),
                            b"\x00" * 16, b"\x00" * 16)
    return CipherStream(name, ttl_ms=ttl, static_key=static)


CATALOG: Dict[str, CatalogEntry] = {
    "timestamp": CatalogEntry("call", True, _build_timestamp),
    "sequence": CatalogEntry("call", True, _build_sequence),
    "usage-log": CatalogEntry("call", False, _build_usage_log),
    "accounting": CatalogEntry("call", True, _build_accounting),
    "key-negotiation": CatalogEntry("call", True, _build_key_negotiation),
    "replay-detection": CatalogEntry("call", False, _build_replay),
    "relocation": CatalogEntry("call", False, _build_relocation),
    "encrypt": CatalogEntry("stream", True, _build_encrypt),
}


def counterpart_free_names() -> Tuple[str, ...]:
    return tuple(n for n, e in CATALOG.items() if not e.needs_counterpart)


def build_for_side(entries, side: str):
    """Instantiate template entries for one side.

    entries: iterable of (name, layer, required, params).
    Returns (call handler sets, stream chain), both in template order."""
    call_sets: List[HandlerSet] = []
    stream_chain: List[StreamHandler] = []
    for name, layer, required, params in entries:
        spec = CATALOG.get(name)
        if spec is None:
            raise ValueError("unknown channel object %r" % name)
        if spec.layer != layer:
            raise ValueError("channel object %r lives in the %s layer, not %s"
                             % (name, spec.layer, layer))
        built = spec.build(side, name, dict(params), required)
        if built is None:
            continue
        if layer == "call":
            call_sets.append(built)
        else:
            stream_chain.append(built)
    return call_sets, stream_chain
