"""The channel-object contract and the state that associates share.

A call-handler sits in one phase's stack and is driven through four verbs:
todo (normal processing), clear (repair a fault raised below it), undo
(reverse its own earlier effect) and redo (re-apply after a repair).  Success
returns the next Message; the control outcomes travel as exceptions:

    Unclearable          clear declined; ask the next handler up
    ClearedWhileUndoing  undo both reversed the effect and repaired the fault
    RebindDemanded       clear wants the channel destroyed and rebuilt

Handlers deployed in different phases cooperate through CallState, a keyed
store scoped to (call id, handler name), and through the HandlerSet record
that names their counterpart at the peer and their associate in the local
stack on the other side of the call.
"""

from __future__ import annotations

import threading
from typing import Dict, Optional, Tuple

from .message import (
    Address,
    CallId,
    Fault,
    FaultError,
    FaultKind,
    Message,
    Phase,
    TaggedValue,
)


class Unclearable(Exception):
    def __init__(self, detail: str = ""):
        super().__init__(detail or "unclearable")
        self.detail = detail


class ClearedWhileUndoing(Exception):
    """Undo repaired the fault as a side effect; carries the undone message."""

    def __init__(self, message: Message, detail: str = ""):
        super().__init__(detail or "cleared while undoing")
        self.message = message
        self.detail = detail


class RebindDemanded(Exception):
    """A clear decided the binding itself must be torn down and remade."""

    def __init__(self, new_target: Address, detail: str = ""):
        super().__init__(detail or "rebind demanded")
        self.new_target = new_target
        self.detail = detail


class CallContext:
    """What a handler may touch besides the message: the per-call store, the
    clock, the binding session, and (on receive channels) the raw frame."""

    def __init__(self, binding, phase: Phase, side: str, call_id=None,
                 one_cast: bool = False):
        self.binding = binding
        self.phase = phase
        self.side = side
        self.call_id = call_id
        self.one_cast = one_cast
        self.frame_bytes: Optional[bytes] = None

    @property
    def call_state(self) -> "CallState":
        return self.binding.call_state

    def now_ms(self) -> int:
        return self.binding.runtime.now_ms()

    @property
    def peer(self) -> Address:
        return self.binding.peer


class Handler:
    """Base channel object: copies the message over and refuses to clear.

    Subclasses set `name`; it is what fault records and traces carry.
    """

    name = "Handler"

    def todo(self, m: Message, ctx: CallContext) -> Message:
        return m

    def clear(self, m: Message, f: Fault, ctx: CallContext) -> Message:
        raise Unclearable()

    def undo(self, m: Message, f: Fault, ctx: CallContext) -> Message:
        # Restore the pre-todo message when we stored one, else identity.
        stored = ctx.call_state.get_message(ctx.call_id, self.name)
        return stored if stored is not None else m

    def redo(self, m: Message, ctx: CallContext) -> Message:
        return self.todo(m, ctx)

    def fault(self, ctx: CallContext, detail: str,
              kind: FaultKind = FaultKind.CHANNEL) -> FaultError:
        return FaultError(Fault(kind, ctx.phase, self.name, detail))


class HandlerSet:
    """One channel object's deployment: per-phase handler instances plus the
    counterpart (peer stack, handler) and associate (local) references."""

    def __init__(self, name: str, handlers: Dict[Phase, Handler],
                 counterpart: Optional[Tuple[str, str]] = None,
                 associate: Optional[str] = None,
                 required: bool = True):
        if not handlers:
            raise ValueError("a HandlerSet must populate at least one phase")
        self.name = name
        self._handlers = dict(handlers)
        self.counterpart = counterpart
        self.associate = associate
        self.required = required

    def get_handler(self, phase: Phase) -> Optional[Handler]:
        """Sole lookup path; absent phases are skipped by the engine."""
        return self._handlers.get(phase)

    def phases(self):
        return tuple(self._handlers)


class CallState:
    """Keyed store (CallId, handler-name) -> TaggedValue shared by the
    handlers of one binding side, plus the retained original message per
    call.  Entries evaporate when the call completes or after a TTL, so
    abandoned calls cannot pin memory."""

    def __init__(self, runtime, ttl_ms: int = 60_000):
        self.runtime = runtime
        self.ttl_ms = ttl_ms
        self._lock = threading.Lock()
        self._entries: Dict[Tuple[CallId, str], Tuple[TaggedValue, int]] = {}
        self._messages: Dict[Tuple[CallId, str], Tuple[Message, int]] = {}
        self._originals: Dict[CallId, Tuple[Message, int]] = {}

    def _sweep(self, now: int) -> None:
        for store in (self._entries, self._messages, self._originals):
            dead = [k for k, (_, t) in store.items() if now - t > self.ttl_ms]
            for k in dead:
                del store[k]

    def put(self, call_id: CallId, handler: str, value: TaggedValue) -> None:
        if not isinstance(value, TaggedValue):
            raise TypeError("CallState holds TaggedValues, got %r" % (value,))
        now = self.runtime.now_ms()
        with self._lock:
            self._sweep(now)
            self._entries[(call_id, handler)] = (value, now)

    def get(self, call_id: CallId, handler: str) -> Optional[TaggedValue]:
        with self._lock:
            hit = self._entries.get((call_id, handler))
            return hit[0] if hit else None

    def remove(self, call_id: CallId, handler: str) -> None:
        with self._lock:
            self._entries.pop((call_id, handler), None)

    def put_message(self, call_id: CallId, handler: str, m: Message) -> None:
        now = self.runtime.now_ms()
        with self._lock:
            self._sweep(now)
            self._messages[(call_id, handler)] = (m, now)

    def get_message(self, call_id: CallId, handler: str) -> Optional[Message]:
        with self._lock:
            hit = self._messages.get((call_id, handler))
            return hit[0] if hit else None

    def store_original(self, call_id: CallId, m: Message) -> None:
        with self._lock:
            self._originals[call_id] = (m, self.runtime.now_ms())

    def original(self, call_id: CallId) -> Optional[Message]:
        with self._lock:
            hit = self._originals.get(call_id)
            return hit[0] if hit else None

    def remove_all_for_call(self, call_id: CallId) -> None:
        with self._lock:
            for store in (self._entries, self._messages):
                for k in [k for k in store if k[0] == call_id]:
                    del store[k]
            self._originals.pop(call_id, None)

    def entries_for_call(self, call_id: CallId):
        with self._lock:
            return {k[1]: v for k, (v, _) in self._entries.items()
                    if k[0] == call_id}
