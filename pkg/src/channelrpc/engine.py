"""Call pipelines, fault recovery, dispatch.

A binding side turns each phase into a pipeline of slots:

    send     [call slot ...] [marshal] [stream slot ...]   -> frame bytes
    receive  [stream slot ...] [unmarshal] [call slot ...] -> Message / Reply

Call slots run innermost first on send walks and in reverse on receive
walks, so wrapping and unwrapping pair up across the wire.  The transport
itself behaves like one more slot past the end: a send failure recovers with
failed_index == len(slots), which lets a call handler (typically the
relocation object) clear it.

Recovery walks the pipeline with the control verbs.  Two interchangeable
schemes are provided; both end by redoing every slot from the bottom through
the failed one, so a repaired call continues as if nothing happened.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

from . import runtime as _runtime
from .handler import (
    CallContext,
    CallState,
    ClearedWhileUndoing,
    Handler,
    HandlerSet,
    RebindDemanded,
    Unclearable,
)
from .marshal import marshal_message, marshal_reply, unmarshal_any, unmarshal_reply
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
    ZERO_CALL_ID,
)
from .stream import Network, StreamHandler, TransportFault
from .trace import NullTracer, Tracer

REPLY_CARRIER_METHOD = "deliverReply"

SCHEME_CLEAR_THEN_UNDO_REDO = "clear_then_undo_redo"
SCHEME_CLEAR_AND_UNDO_THEN_REDO = "clear_and_undo_then_redo"
SCHEMES = (SCHEME_CLEAR_THEN_UNDO_REDO, SCHEME_CLEAR_AND_UNDO_THEN_REDO)


@dataclass
class EngineConfig:
    scheme: str = SCHEME_CLEAR_THEN_UNDO_REDO
    confirm_timeout_ms: int = 10_000
    resend_budget: int = 1
    callstate_ttl_ms: int = 60_000

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError("unknown recovery scheme %r" % self.scheme)


# ------------------------------------------------------------------- slots

class Slot:
    """Uniform recovery surface over call handlers, the codec, and stream
    transforms.  State is a Message above the codec, bytes below it."""

    kind = "call"
    name = "slot"
    hset: Optional[HandlerSet] = None

    def todo(self, state, ctx: CallContext):
        return state

    def clear(self, entry_state, f: Fault, ctx: CallContext):
        raise Unclearable()

    def undo(self, state, entry_state, f: Fault, ctx: CallContext):
        return entry_state

    def redo(self, state, ctx: CallContext):
        return self.todo(state, ctx)


class CallSlot(Slot):
    kind = "call"

    def __init__(self, handler: Handler, hset: HandlerSet):
        self.handler = handler
        self.hset = hset
        self.name = handler.name

    def _snapshot(self, state, ctx):
        # Pre-verb input, so the default undo can restore it later.
        if ctx.call_id is not None:
            ctx.call_state.put_message(ctx.call_id, self.handler.name, state)

    def todo(self, state, ctx):
        self._snapshot(state, ctx)
        return self.handler.todo(state, ctx)

    def clear(self, entry_state, f, ctx):
        return self.handler.clear(entry_state, f, ctx)

    def undo(self, state, entry_state, f, ctx):
        return self.handler.undo(state, f, ctx)

    def redo(self, state, ctx):
        self._snapshot(state, ctx)
        return self.handler.redo(state, ctx)


class MarshalSlot(Slot):
    kind = "marshal"
    name = "marshal"

    def todo(self, state, ctx):
        return marshal_message(state)


class UnmarshalSlot(Slot):
    kind = "marshal"
    name = "unmarshal"

    def todo(self, state, ctx):
        return unmarshal_any(state)


class StreamSlot(Slot):
    kind = "stream"

    def __init__(self, sh: StreamHandler, receive: bool = False):
        self.sh = sh
        self.receive = receive
        self.name = sh.name

    def todo(self, state, ctx):
        if self.receive:
            return self.sh.on_receive(state, ctx)
        return self.sh.on_send(state, ctx)

    def clear(self, entry_state, f, ctx):
        return self.sh.clear(entry_state, f, ctx)


# ----------------------------------------------------------------- binding

class Binding:
    """One side's view of a channel relationship with a peer: the deployed
    handler sets, the stream chain, and the shared per-call state."""

    def __init__(self, side: str, peer: Optional[Address],
                 local_address: Address,
                 call_sets=(), stream_chain=(),
                 signatures: Optional[Dict[str, MethodSignature]] = None,
                 runtime: Optional[_runtime.Runtime] = None,
                 tracer: Optional[Tracer] = None,
                 network: Optional[Network] = None,
                 config: Optional[EngineConfig] = None,
                 rebuild: Optional[Callable[[Address], "Binding"]] = None):
        if side not in ("initiator", "acceptor"):
            raise ValueError("side must be initiator or acceptor")
        self.side = side
        self.peer = peer
        self.local_address = local_address
        self.call_sets: List[HandlerSet] = list(call_sets)
        self.stream_chain: List[StreamHandler] = list(stream_chain)
        self.signatures = dict(signatures or {})
        self.runtime = runtime or _runtime.default_runtime()
        self.tracer = tracer or NullTracer()
        self.network = network or Network(rt=self.runtime)
        self.config = config or EngineConfig()
        self.rebuild = rebuild
        self.call_state = CallState(self.runtime, self.config.callstate_ttl_ms)
        self.session: Dict[str, object] = {}

    def handlers_for(self, phase: Phase) -> List[Tuple[HandlerSet, Handler]]:
        out = []
        for hs in self.call_sets:
            h = hs.get_handler(phase)
            if h is not None:
                out.append((hs, h))
        return out

    def send_slots(self, phase: Phase) -> List[Slot]:
        slots: List[Slot] = [CallSlot(h, hs) for hs, h in self.handlers_for(phase)]
        slots.append(MarshalSlot())
        slots.extend(StreamSlot(sh) for sh in self.stream_chain)
        return slots

    def receive_slots(self, phase: Phase) -> List[Slot]:
        slots: List[Slot] = [StreamSlot(sh, receive=True)
                             for sh in reversed(self.stream_chain)]
        slots.append(UnmarshalSlot())
        slots.extend(CallSlot(h, hs)
                     for hs, h in reversed(self.handlers_for(phase)))
        return slots

    def context(self, phase: Phase, call_id: Optional[CallId],
                one_cast: bool = False) -> CallContext:
        return CallContext(self, phase, self.side, call_id, one_cast)


# ---------------------------------------------------------------- recovery

def _attach_contained(fresh: Fault, original: Fault) -> Fault:
    """Chain the fault we were recovering from under the fresh one."""
    if fresh.contained is None:
        return Fault(fresh.kind, fresh.origin_phase, fresh.handler_name,
                     fresh.detail, original)
    return Fault(fresh.kind, fresh.origin_phase, fresh.handler_name,
                 fresh.detail, _attach_contained(fresh.contained, original))


class Walk:
    """Runs one pipeline for one call, recovering in place on faults."""

    def __init__(self, binding: Binding, slots: List[Slot], ctx: CallContext,
                 allow_recover: bool = True):
        self.binding = binding
        self.slots = slots
        self.ctx = ctx
        self.allow_recover = allow_recover
        self.entries: List[object] = [None] * len(slots)
        self.failed_slot: Optional[Slot] = None

    def _emit(self, slot_name: str, event: str, detail: str = ""):
        self.binding.tracer.emit(self.binding.side, self.ctx.phase, slot_name,
                                 event, self.ctx.call_id, detail)

    def run(self, state, verb: str = "todo"):
        i = 0
        while i < len(self.slots):
            slot = self.slots[i]
            self.entries[i] = state
            if isinstance(slot, UnmarshalSlot):
                self.ctx.frame_bytes = state
            try:
                if verb == "redo":
                    out = slot.redo(state, self.ctx)
                else:
                    out = slot.todo(state, self.ctx)
                self._emit(slot.name, verb)
                state = out
            except FaultError as e:
                self.failed_slot = slot
                self._emit(slot.name, "fault", e.fault.describe())
                if not self.allow_recover:
                    raise
                state, i = self.recover(i, e.fault, state)
                continue
            if isinstance(state, Message) and isinstance(slot, UnmarshalSlot):
                state = state.with_phase(self.ctx.phase)
                if self.ctx.call_id is None:
                    self.ctx.call_id = state.call_id
                    self.ctx.one_cast = state.one_cast
            if isinstance(state, Reply):
                # A bare reply short-circuits the call stack above the codec.
                return state
            i += 1
        return state

    def recover_transport(self, fault: Fault) -> bytes:
        """Recover a send failure; returns the rebuilt frame to retry."""
        frame, _ = self.recover(len(self.slots), fault, None)
        return frame

    # The two schemes differ only in how the clear and undo walks interleave;
    # both finish with a redo walk from the bottom through the failed slot.

    def recover(self, failed_index: int, fault: Fault, state_at_fault):
        if self.binding.config.scheme == SCHEME_CLEAR_THEN_UNDO_REDO:
            return self._recover_clear_first(failed_index, fault)
        return self._recover_pairwise(failed_index, fault, state_at_fault)

    def _clear_one(self, k: int, fault: Fault):
        """Returns (handled, repaired).  Unclearable -> (False, None)."""
        slot = self.slots[k]
        try:
            repaired = slot.clear(self.entries[k], fault, self.ctx)
        except Unclearable:
            self._emit(slot.name, "clear", "declined")
            return False, None
        except RebindDemanded as e:
            self._emit(slot.name, "clear",
                       "rebind demanded: %s" % e.new_target.object_name)
            self._unwind_below(k, fault)
            raise
        except FaultError as fresh:
            raise FaultError(_attach_contained(fresh.fault, fault)) from None
        self._emit(slot.name, "clear", "repaired")
        return True, repaired

    def _undo_one(self, j: int, state, fault: Fault):
        """Returns (state, repaired_during_undo)."""
        slot = self.slots[j]
        try:
            state = slot.undo(state, self.entries[j], fault, self.ctx)
        except ClearedWhileUndoing as c:
            self._emit(slot.name, "undo", "repaired while undoing")
            return c.message, True
        except FaultError as fresh:
            raise FaultError(_attach_contained(fresh.fault, fault)) from None
        self._emit(slot.name, "undo")
        return state, False

    def _unwind_below(self, k: int, fault: Fault):
        state = self.entries[k] if k < len(self.slots) else None
        for j in range(k - 1, -1, -1):
            try:
                state, _ = self._undo_one(j, state, fault)
            except FaultError:
                return  # teardown is imminent; stop unwinding

    def _redo_through(self, start: int, failed_index: int, state, fault: Fault):
        top = min(failed_index, len(self.slots) - 1)
        for j in range(start, top + 1):
            slot = self.slots[j]
            self.entries[j] = state
            if isinstance(slot, UnmarshalSlot):
                self.ctx.frame_bytes = state
            try:
                state = slot.redo(state, self.ctx)
            except FaultError as fresh:
                raise FaultError(_attach_contained(fresh.fault, fault)) from None
            self._emit(slot.name, "redo")
        return state, failed_index + 1

    def _recover_clear_first(self, failed_index: int, fault: Fault):
        cleared_at = None
        repaired = None
        for k in range(failed_index - 1, -1, -1):
            handled, repaired = self._clear_one(k, fault)
            if handled:
                cleared_at = k
                break
        if cleared_at is None:
            state = self.entries[failed_index] if failed_index < len(self.slots) else None
            for j in range(failed_index - 1, -1, -1):
                state, fixed = self._undo_one(j, state, fault)
                if fixed:
                    return self._redo_through(j, failed_index, state, fault)
            raise FaultError(fault)
        state = repaired
        for j in range(cleared_at - 1, -1, -1):
            state, fixed = self._undo_one(j, state, fault)
            if fixed:
                return self._redo_through(j, failed_index, state, fault)
        return self._redo_through(0, failed_index, state, fault)

    def _recover_pairwise(self, failed_index: int, fault: Fault, state_at_fault):
        cleared = False
        state = state_at_fault
        if failed_index < len(self.slots):
            state = self.entries[failed_index]
        for k in range(failed_index - 1, -1, -1):
            if not cleared:
                # Once somebody has cleared, the rest of the ascent is pure
                # undo; the fault is gone and must not be offered again.
                handled, repaired = self._clear_one(k, fault)
                if handled:
                    cleared = True
                    state = repaired
            state, fixed = self._undo_one(k, state, fault)
            if fixed:
                return self._redo_through(k, failed_index, state, fault)
        if not cleared:
            raise FaultError(fault)
        return self._redo_through(0, failed_index, state, fault)


# --------------------------------------------------------------- initiator

class _ResendNeeded(Exception):
    def __init__(self, fault: Fault):
        self.fault = fault


class Caller:
    """Initiator-side call interface over one binding."""

    def __init__(self, binding: Binding):
        if binding.side != "initiator":
            raise ValueError("Caller needs an initiator binding")
        self.binding = binding
        self._lock = threading.Lock()

    def call(self, method: str, *args, one_cast: Optional[bool] = None):
        """Invoke a remote method with plain Python arguments.

        Two-way calls return the result as a Python value and raise
        FaultError when the reply carries a fault; one-casts return None as
        soon as the request is on the wire."""
        reply = self.call_reply(method, args, one_cast=one_cast)
        if reply is None:
            return None
        if reply.fault is not None:
            raise FaultError(reply.fault)
        return reply.result.to_python()

    def call_reply(self, method: str, args=(),
                   one_cast: Optional[bool] = None) -> Optional[Reply]:
        b = self.binding
        if one_cast is None:
            sig = b.signatures.get(method)
            one_cast = bool(sig) and not sig.returns_result and not sig.fault_names
        params = tuple(
            a if isinstance(a, TaggedValue) else TaggedValue.from_python(a)
            for a in args
        )
        m0 = Message(
            target=b.peer,
            return_address=b.local_address,
            method=method,
            params=params,
            call_id=CallId(b.runtime.call_id_bytes()),
            one_cast=bool(one_cast),
            phase=Phase.REQUEST,
        )
        return self.initiate(m0)

    def initiate(self, m0: Message) -> Optional[Reply]:
        with self._lock:
            return self._initiate(m0)

    def _initiate(self, m0: Message) -> Optional[Reply]:
        cid = m0.call_id
        budget = self.binding.config.resend_budget
        mode = "todo"
        self.binding.call_state.store_original(cid, m0)
        try:
            while True:
                b = self.binding
                try:
                    return self._one_attempt(b, m0, mode)
                except RebindDemanded as e:
                    if b.rebuild is None:
                        raise FaultError(Fault(
                            FaultKind.REBIND, Phase.REQUEST, "",
                            "rebind demanded but binding has no rebuild path",
                        )) from None
                    if budget <= 0:
                        raise FaultError(Fault(
                            FaultKind.REBIND, Phase.REQUEST, "",
                            "rebind demanded after resend budget was spent",
                        )) from None
                    budget -= 1
                    b.tracer.emit(b.side, Phase.REQUEST, "-", "rebind", cid,
                                  "new target %s" % e.new_target.object_name)
                    self.binding = b.rebuild(e.new_target)
                    m0 = m0.with_target(e.new_target)
                    self.binding.call_state.store_original(cid, m0)
                    self.binding.tracer.emit(self.binding.side, Phase.REQUEST,
                                             "-", "resend", cid, "todo mode")
                    mode = "todo"
                except _ResendNeeded as r:
                    if budget <= 0:
                        raise FaultError(r.fault) from None
                    if b.call_state.original(cid) is None:
                        raise FaultError(r.fault) from None
                    budget -= 1
                    b.tracer.emit(b.side, Phase.REQUEST, "-", "resend", cid,
                                  "redo mode: %s" % r.fault.describe())
                    mode = "redo"
        finally:
            self.binding.call_state.remove_all_for_call(cid)

    def _one_attempt(self, b: Binding, m0: Message,
                     mode: str) -> Optional[Reply]:
        cid, one_cast = m0.call_id, m0.one_cast
        ctx = b.context(Phase.REQUEST, cid, one_cast)
        walk = Walk(b, b.send_slots(Phase.REQUEST), ctx)
        b.tracer.emit(b.side, Phase.REQUEST, "-", "enter", cid, m0.method)
        frame = walk.run(m0, verb=mode)

        while True:
            b.tracer.emit(b.side, Phase.REQUEST, "-", "wire-send", cid,
                          "%d bytes" % len(frame))
            try:
                response = b.network.exchange(b.peer, frame, one_cast,
                                              b.config.confirm_timeout_ms)
                break
            except TransportFault as tf:
                b.tracer.emit(b.side, Phase.REQUEST, "-", "fault", cid,
                              tf.fault.describe())
                frame = walk.recover_transport(tf.fault)
                b.tracer.emit(b.side, Phase.REQUEST, "-", "resend", cid,
                              "after transport repair")

        if one_cast:
            return None
        if response is None:
            raise _ResendNeeded(Fault(
                FaultKind.TRANSPORT, Phase.CONFIRMATION, "",
                "no response within %dms" % b.config.confirm_timeout_ms,
            ))
        b.tracer.emit(b.side, Phase.CONFIRMATION, "-", "wire-recv", cid,
                      "%d bytes" % len(response))
        return self._confirm(b, cid, response)

    def _confirm(self, b: Binding, cid: CallId, response: bytes) -> Reply:
        """Run the confirmation walk.  A checker fault here does not start a
        clear walk; when the faulted object has a request-side associate and
        the original is still retained, the whole call is resent instead."""
        ctx = b.context(Phase.CONFIRMATION, cid, False)
        walk = Walk(b, b.receive_slots(Phase.CONFIRMATION), ctx,
                    allow_recover=False)
        b.tracer.emit(b.side, Phase.CONFIRMATION, "-", "enter", cid)
        try:
            got = walk.run(response)
        except FaultError as e:
            if self._resend_eligible(b, walk.failed_slot):
                raise _ResendNeeded(e.fault) from None
            raise
        if isinstance(got, Reply):
            reply = got
        else:
            reply = self._open_carrier(got)
        if reply.call_id != cid:
            raise FaultError(Fault(
                FaultKind.CHANNEL, Phase.CONFIRMATION, "",
                "reply for call %s arrived on call %s" % (reply.call_id, cid),
            ))
        detail = "ok" if reply.ok else reply.fault.describe()
        b.tracer.emit(b.side, Phase.CONFIRMATION, "-", "reply", cid, detail)
        return reply

    def _resend_eligible(self, b: Binding, slot: Optional[Slot]) -> bool:
        # A set is eligible when it reaches back to the request side: it has
        # a request-phase handler itself or declares an associate there.
        if slot is None or slot.kind != "call":
            return True  # stream or codec trouble: the frame itself was bad
        hset = slot.hset
        if hset is None:
            return False
        return hset.get_handler(Phase.REQUEST) is not None or bool(hset.associate)

    @staticmethod
    def _open_carrier(m: Message) -> Reply:
        if m.method != REPLY_CARRIER_METHOD or len(m.params) != 1:
            raise FaultError(Fault(
                FaultKind.CHANNEL, Phase.CONFIRMATION, "",
                "expected a reply carrier, got method %r" % m.method,
            ))
        payload = m.params[0]
        if payload.to_python().__class__ is not bytes:
            raise FaultError(Fault(
                FaultKind.CHANNEL, Phase.CONFIRMATION, "",
                "reply carrier payload is not bytes",
            ))
        return unmarshal_reply(payload.value)


# ---------------------------------------------------------------- acceptor

class Endpoint:
    """Acceptor side: receives frames, dispatches, sends replies back."""

    def __init__(self, binding: Binding, service):
        if binding.side != "acceptor":
            raise ValueError("Endpoint needs an acceptor binding")
        self.binding = binding
        self.service = service

    def accept_frame(self, frame: bytes) -> Optional[bytes]:
        b = self.binding
        b.tracer.emit(b.side, Phase.INDICATION, "-", "wire-recv", None,
                      "%d bytes" % len(frame))
        ctx = b.context(Phase.INDICATION, None, False)
        walk = Walk(b, b.receive_slots(Phase.INDICATION), ctx)
        b.tracer.emit(b.side, Phase.INDICATION, "-", "enter", None)
        try:
            m = walk.run(frame)
        except FaultError as e:
            return self._fault_reply(b, ctx.call_id, ctx.one_cast, e.fault)
        except RebindDemanded:
            fault = Fault(FaultKind.CHANNEL, Phase.INDICATION, "",
                          "rebind demanded on the acceptor side")
            return self._fault_reply(b, ctx.call_id, ctx.one_cast, fault)
        if isinstance(m, Reply):
            fault = Fault(FaultKind.CHANNEL, Phase.INDICATION, "",
                          "reply frame arrived at an acceptor")
            return self._fault_reply(b, ctx.call_id, ctx.one_cast, fault)

        reply = self._dispatch(b, m, ctx)
        if m.one_cast:
            if reply.fault is not None:
                b.tracer.emit(b.side, Phase.INDICATION, "-", "fault",
                              m.call_id, "one-cast dropped: %s"
                              % reply.fault.describe())
            return None
        if reply.fault is not None:
            return self._fault_reply(b, m.call_id, False, reply.fault)
        return self._respond(b, m, reply)

    def _dispatch(self, b: Binding, m: Message, ctx: CallContext) -> Reply:
        b.tracer.emit(b.side, Phase.INDICATION, "-", "dispatch", m.call_id,
                      m.method)
        if m.method == REPLY_CARRIER_METHOD:
            return Reply(m.call_id, fault=Fault(
                FaultKind.CHANNEL, Phase.INDICATION, "",
                "reply carrier arrived as a request"))
        target = None
        if isinstance(self.service, dict):
            target = self.service.get(m.method)
        else:
            target = getattr(self.service, m.method, None)
        if not callable(target) or m.method.startswith("_"):
            return Reply(m.call_id, fault=Fault(
                FaultKind.APPLICATION, Phase.INDICATION, "",
                "unknown method %r" % m.method))
        try:
            args = [p.to_python() for p in m.params]
            result = target(*args)
        except FaultError as fe:
            return Reply(m.call_id, fault=fe.fault)
        except Exception as e:  # the service's error, not the channel's
            return Reply(m.call_id, fault=Fault(
                FaultKind.APPLICATION, Phase.INDICATION, "",
                "%s: %s" % (type(e).__name__, e)))
        return Reply(m.call_id, result=TaggedValue.from_python(result))

    def _respond(self, b: Binding, m: Message, reply: Reply) -> Optional[bytes]:
        carrier = Message(
            target=m.return_address,
            return_address=b.local_address,
            method=REPLY_CARRIER_METHOD,
            params=(TaggedValue.of_bytes(marshal_reply(reply)),),
            call_id=m.call_id,
            one_cast=False,
            phase=Phase.RESPONSE,
        )
        ctx = b.context(Phase.RESPONSE, m.call_id, False)
        walk = Walk(b, b.send_slots(Phase.RESPONSE), ctx)
        b.tracer.emit(b.side, Phase.RESPONSE, "-", "enter", m.call_id)
        b.tracer.emit(b.side, Phase.RESPONSE, "-", "reply", m.call_id, "ok")
        try:
            frame = walk.run(carrier)
        except (FaultError,) as e:
            return self._fault_reply(b, m.call_id, False, e.fault)
        b.tracer.emit(b.side, Phase.RESPONSE, "-", "wire-send", m.call_id,
                      "%d bytes" % len(frame))
        return frame

    def _fault_reply(self, b: Binding, call_id: Optional[CallId],
                     one_cast: bool, fault: Fault) -> Optional[bytes]:
        """Faults travel back as bare reply frames through the stream chain
        only; call-layer wrappers never see them."""
        if one_cast:
            return None
        cid = call_id or ZERO_CALL_ID
        if fault.kind == FaultKind.CLEARED:
            fault = Fault(FaultKind.CHANNEL, fault.origin_phase,
                          fault.handler_name, fault.detail, fault.contained)
        data = marshal_reply(Reply(cid, fault=fault))
        ctx = b.context(Phase.RESPONSE, cid, False)
        try:
            for sh in b.stream_chain:
                data = sh.on_send(data, ctx)
        except Exception:
            return None  # cannot even report the fault; give up quietly
        b.tracer.emit(b.side, Phase.RESPONSE, "-", "wire-send", cid,
                      "bare fault: %s" % fault.describe())
        return data


# ----------------------------------------------------------------- helpers

def loopback_pair(service, *,
                  object_name: str = "service",
                  init_sets=(), accept_sets=(),
                  init_stream=(), accept_stream=(),
                  signatures: Optional[Dict[str, MethodSignature]] = None,
                  runtime: Optional[_runtime.Runtime] = None,
                  tracer: Optional[Tracer] = None,
                  network: Optional[Network] = None,
                  config: Optional[EngineConfig] = None,
                  accept_config: Optional[EngineConfig] = None,
                  rebuild: Optional[Callable[[Address], Binding]] = None,
                  ) -> Tuple[Caller, Endpoint, Network]:
    """Wire an initiator and an acceptor over in-process loopback."""
    rt = runtime or _runtime.default_runtime()
    net = network or Network(rt=rt)
    server_addr = Address(Transport.LOOPBACK, "", 0, object_name)
    client_addr = Address(Transport.LOOPBACK, "", 0, object_name + ".caller")
    accept_binding = Binding(
        "acceptor", None, server_addr, accept_sets, accept_stream,
        signatures=signatures, runtime=rt, tracer=tracer, network=net,
        config=accept_config or config,
    )
    endpoint = Endpoint(accept_binding, service)
    net.loopback.register(object_name, endpoint.accept_frame)
    init_binding = Binding(
        "initiator", server_addr, client_addr, init_sets, init_stream,
        signatures=signatures, runtime=rt, tracer=tracer, network=net,
        config=config, rebuild=rebuild,
    )
    return Caller(init_binding), endpoint, net


def simple_call(network: Network, target: Address, method: str, *args,
                runtime: Optional[_runtime.Runtime] = None,
                tracer: Optional[Tracer] = None,
                timeout_ms: int = 10_000,
                one_cast: bool = False):
    """One plain call with no channel objects deployed; used for the naming
    and relocation services, whose protocols stay deliberately bare."""
    rt = runtime or _runtime.default_runtime()
    local = Address(transport=target.transport, host="", port=0,
                    object_name="caller")
    binding = Binding("initiator", target, local, runtime=rt, tracer=tracer,
                      network=network,
                      config=EngineConfig(confirm_timeout_ms=timeout_ms))
    return Caller(binding).call(method, *args, one_cast=one_cast)
