"""Pipeline orchestration: walks, recovery schemes, resends, dispatch.

Scripted handlers record every verb invocation into a shared list, so the
recovery orderings can be asserted exactly rather than sampled.
"""

import pytest

from channelrpc.engine import (
    SCHEME_CLEAR_AND_UNDO_THEN_REDO,
    SCHEME_CLEAR_THEN_UNDO_REDO,
    Binding,
    Caller,
    EngineConfig,
    loopback_pair,
)
from channelrpc.handler import (
    CallContext,
    ClearedWhileUndoing,
    Handler,
    HandlerSet,
    Unclearable,
)
from channelrpc.marshal import marshal_reply
from channelrpc.message import (
    Address,
    CallId,
    FaultError,
    FaultKind,
    MethodSignature,
    Phase,
    Reply,
    TaggedValue,
    Transport,
)
from channelrpc.runtime import DeterministicRuntime
from channelrpc.stream import Network


class Scripted(Handler):
    """Identity transform that logs its verbs and fails/clears on cue."""

    def __init__(self, name, log, fail_times=0, clears=False,
                 clear_in_undo=False, fail_in_undo=False):
        self.name = name
        self.log = log
        self.fail_times = fail_times
        self.clears = clears
        self.clear_in_undo = clear_in_undo
        self.fail_in_undo = fail_in_undo

    def todo(self, m, ctx):
        if self.fail_times > 0:
            self.fail_times -= 1
            self.log.append(("fail", self.name))
            raise self.fault(ctx, "scripted failure in %s" % self.name)
        self.log.append(("todo", self.name))
        return m

    def clear(self, m, f, ctx):
        if self.clears:
            self.log.append(("clear", self.name))
            return m
        self.log.append(("declined", self.name))
        raise Unclearable()

    def undo(self, m, f, ctx):
        if self.fail_in_undo:
            self.log.append(("fail-undo", self.name))
            raise self.fault(ctx, "fresh trouble in %s undo" % self.name)
        if self.clear_in_undo:
            self.log.append(("clear-undo", self.name))
            raise ClearedWhileUndoing(super().undo(m, f, ctx))
        self.log.append(("undo", self.name))
        return super().undo(m, f, ctx)

    def redo(self, m, ctx):
        self.log.append(("redo", self.name))
        return m


class Echo:
    def answer(self, text):
        return "You said:" + text

    def boom(self, text):
        raise RuntimeError(text)

    def note(self, text):
        return None


SIGS = {
    "answer": MethodSignature("answer"),
    "boom": MethodSignature("boom", fault_names=("RuntimeError",)),
    "note": MethodSignature("note", returns_result=False),
}


def pair(**kw):
    kw.setdefault("signatures", SIGS)
    kw.setdefault("runtime", DeterministicRuntime(3))
    return loopback_pair(Echo(), **kw)


def request_set(name, handler):
    return HandlerSet(name, {Phase.REQUEST: handler})


# ------------------------------------------------------------- plain calls

def test_round_trip_and_python_mapping():
    caller, _, _ = pair()
    assert caller.call("answer", "hi") == "You said:hi"


def test_application_errors_arrive_as_faults():
    caller, _, _ = pair()
    with pytest.raises(FaultError) as e:
        caller.call("boom", "dead")
    f = e.value.fault
    assert f.kind is FaultKind.APPLICATION
    assert f.origin_phase is Phase.INDICATION
    assert "RuntimeError: dead" in f.detail


def test_unknown_and_private_methods_are_refused():
    caller, _, _ = pair()
    with pytest.raises(FaultError) as e:
        caller.call("missing", one_cast=False)
    assert "unknown method" in e.value.fault.detail
    with pytest.raises(FaultError):
        caller.call("_log", one_cast=False)


def test_dict_services_dispatch_by_key():
    rt = DeterministicRuntime(4)
    caller, _, _ = loopback_pair({"double": lambda n: n * 2},
                                 signatures={"double": MethodSignature("double")},
                                 runtime=rt)
    assert caller.call("double", 21) == 42


def test_two_frames_per_call_one_per_one_cast():
    caller, _, net = pair()
    caller.call("answer", "a")
    assert len(net.loopback.frames) == 2
    caller.call("note", "b")           # signature says nothing comes back
    assert len(net.loopback.frames) == 3
    caller.call("answer", "c", one_cast=True)  # forced by flag
    assert len(net.loopback.frames) == 4


def test_one_cast_faults_are_dropped_silently():
    caller, _, net = pair()
    assert caller.call("boom", "quiet", one_cast=True) is None
    assert len(net.loopback.frames) == 1


def test_call_state_is_emptied_after_each_call():
    caller, _, _ = pair()
    caller.call("answer", "x")
    cs = caller.binding.call_state
    assert not cs._entries and not cs._messages and not cs._originals


# ------------------------------------------------------ counterpart symmetry

def test_wrapping_pairs_hand_the_service_the_original_message(rt):
    from channelrpc.services import StampChecker, StampIssuer
    seen = {}

    class Spy:
        def answer(self, text):
            seen["text"] = text
            return "You said:" + text

    caller, _, _ = loopback_pair(
        Spy(),
        init_sets=[request_set("timestamp", StampIssuer("timestamp"))],
        accept_sets=[HandlerSet("timestamp",
                                {Phase.INDICATION: StampChecker("timestamp")})],
        signatures=SIGS, runtime=rt)
    assert caller.call("answer", "carried") == "You said:carried"
    assert seen["text"] == "carried"


# ------------------------------------------------------------ recovery order

def run_recovery(scheme, size, fail_at, clearer=None, **handler_kw):
    """One call against a scripted stack; returns the verb log."""
    log = []
    handlers = []
    for i in range(size):
        kw = dict(handler_kw.get(i, {}))
        if i == fail_at:
            kw["fail_times"] = 1
        if i == clearer:
            kw["clears"] = True
        handlers.append(Scripted("h%d" % i, log, **kw))
    caller, _, _ = pair(
        init_sets=[request_set(h.name, h) for h in handlers],
        config=EngineConfig(scheme=scheme))
    caller.call("answer", "x")
    return log


def test_scheme1_clears_then_undoes_then_redoes():
    log = run_recovery(SCHEME_CLEAR_THEN_UNDO_REDO, 4, fail_at=3, clearer=1)
    assert log == [
        ("todo", "h0"), ("todo", "h1"), ("todo", "h2"), ("fail", "h3"),
        ("declined", "h2"), ("clear", "h1"),
        ("undo", "h0"),
        ("redo", "h0"), ("redo", "h1"), ("redo", "h2"), ("redo", "h3"),
    ]


def test_scheme2_interleaves_clear_attempts_with_undo():
    log = run_recovery(SCHEME_CLEAR_AND_UNDO_THEN_REDO, 4, fail_at=3, clearer=1)
    assert log == [
        ("todo", "h0"), ("todo", "h1"), ("todo", "h2"), ("fail", "h3"),
        ("declined", "h2"), ("undo", "h2"),
        ("clear", "h1"), ("undo", "h1"),
        ("undo", "h0"),  # fault already cleared: no further clear attempts
        ("redo", "h0"), ("redo", "h1"), ("redo", "h2"), ("redo", "h3"),
    ]


@pytest.mark.parametrize("scheme", [SCHEME_CLEAR_THEN_UNDO_REDO,
                                    SCHEME_CLEAR_AND_UNDO_THEN_REDO])
def test_unclearable_faults_undo_everything_and_surface(scheme):
    log = []
    handlers = [Scripted("h%d" % i, log) for i in range(3)]
    handlers[2].fail_times = 1
    caller, _, _ = pair(
        init_sets=[request_set(h.name, h) for h in handlers],
        config=EngineConfig(scheme=scheme, resend_budget=0))
    with pytest.raises(FaultError) as e:
        caller.call("answer", "x")
    assert e.value.fault.handler_name == "h2"
    tail = log[log.index(("fail", "h2")) + 1:]
    if scheme == SCHEME_CLEAR_THEN_UNDO_REDO:
        assert tail == [("declined", "h1"), ("declined", "h0"),
                        ("undo", "h1"), ("undo", "h0")]
    else:
        assert tail == [("declined", "h1"), ("undo", "h1"),
                        ("declined", "h0"), ("undo", "h0")]


def test_first_slot_failure_has_nobody_to_ask():
    log = []
    h0 = Scripted("h0", log, fail_times=1)
    caller, _, _ = pair(init_sets=[request_set("h0", h0)],
                        config=EngineConfig(resend_budget=0))
    with pytest.raises(FaultError):
        caller.call("answer", "x")
    assert log == [("fail", "h0")]


def test_cleared_while_undoing_short_circuits():
    # nothing clears, but h1's undo repairs the fault in passing
    log = []
    handlers = [Scripted("h0", log), Scripted("h1", log, clear_in_undo=True),
                Scripted("h2", log), Scripted("h3", log, fail_times=1)]
    caller, _, _ = pair(init_sets=[request_set(h.name, h) for h in handlers])
    caller.call("answer", "x")
    tail = log[log.index(("fail", "h3")) + 1:]
    assert tail == [
        ("declined", "h2"), ("declined", "h1"), ("declined", "h0"),
        ("undo", "h2"), ("clear-undo", "h1"),
        ("redo", "h1"), ("redo", "h2"), ("redo", "h3"),
    ]
    # h0 was never undone, so it is not redone either


def test_fresh_fault_during_undo_contains_the_original():
    log = []
    handlers = [Scripted("h0", log, fail_in_undo=True), Scripted("h1", log),
                Scripted("h2", log, fail_times=1)]
    caller, _, _ = pair(init_sets=[request_set(h.name, h) for h in handlers],
                        config=EngineConfig(resend_budget=0))
    with pytest.raises(FaultError) as e:
        caller.call("answer", "x")
    f = e.value.fault
    assert f.handler_name == "h0" and "fresh trouble" in f.detail
    assert f.contained is not None and f.contained.handler_name == "h2"
    assert f.chain_depth() == 2


def test_recovered_faults_are_invisible_to_the_application():
    for scheme in (SCHEME_CLEAR_THEN_UNDO_REDO, SCHEME_CLEAR_AND_UNDO_THEN_REDO):
        for size in range(3, 7):
            for fail_at in range(size):
                for clearer in range(fail_at):
                    log = run_recovery(scheme, size, fail_at, clearer)
                    assert ("clear", "h%d" % clearer) in log


# ------------------------------------------------------------ cross channel

class FailIndication(Handler):
    name = "failer"

    def todo(self, m, ctx):
        raise self.fault(ctx, "refused at the door")


def test_indication_fault_reaches_the_caller_with_provenance():
    dispatched = []

    class Spy:
        def answer(self, text):
            dispatched.append(text)
            return text

    caller, _, _ = loopback_pair(
        Spy(),
        accept_sets=[HandlerSet("failer",
                                {Phase.INDICATION: FailIndication()})],
        signatures=SIGS, runtime=DeterministicRuntime(5))
    with pytest.raises(FaultError) as e:
        caller.call("answer", "x")
    f = e.value.fault
    assert f.origin_phase is Phase.INDICATION
    assert f.handler_name == "failer"
    assert dispatched == []  # the implementation never ran


def test_confirmation_fault_with_request_associate_resends_once():
    log = []
    flaky = Scripted("flaky", log, fail_times=1)
    hset = HandlerSet("flaky", {Phase.REQUEST: Scripted("flaky", log),
                                Phase.CONFIRMATION: flaky})
    caller, _, net = pair(init_sets=[hset])
    assert caller.call("answer", "x") == "You said:x"
    # two round trips: the reply that died in confirmation, then the resend
    assert len(net.loopback.frames) == 4
    assert ("fail", "flaky") in log


def test_confirmation_fault_without_request_side_surfaces():
    log = []
    flaky = Scripted("flaky", log, fail_times=1)
    hset = HandlerSet("flaky", {Phase.CONFIRMATION: flaky})
    caller, _, _ = pair(init_sets=[hset])
    with pytest.raises(FaultError) as e:
        caller.call("answer", "x")
    assert e.value.fault.handler_name == "flaky"


def test_resend_budget_bounds_confirmation_retries():
    log = []
    hset = HandlerSet("flaky", {Phase.REQUEST: Scripted("flaky", log),
                                Phase.CONFIRMATION: Scripted("flaky", log,
                                                             fail_times=5)})
    caller, _, _ = pair(init_sets=[hset],
                        config=EngineConfig(resend_budget=2))
    with pytest.raises(FaultError):
        caller.call("answer", "x")
    assert log.count(("fail", "flaky")) == 3  # first try + two resends


def test_lost_response_triggers_redo_resend():
    caller, _, net = pair(config=EngineConfig(confirm_timeout_ms=80))
    net.loopback.fault_drop_nth(2)
    assert caller.call("answer", "x") == "You said:x"
    # delivered frames only; the dropped response never lands
    assert [d for _, d, _ in net.loopback.frames] == ["req", "req", "rsp"]


def test_lost_response_with_no_budget_times_out():
    caller, _, net = pair(config=EngineConfig(confirm_timeout_ms=80,
                                              resend_budget=0))
    net.loopback.fault_drop_nth(2)
    with pytest.raises(FaultError) as e:
        caller.call("answer", "x")
    f = e.value.fault
    assert f.kind is FaultKind.TRANSPORT and f.origin_phase is Phase.CONFIRMATION


# --------------------------------------------------------------- rogue peers

def rogue_caller(acceptor, rt=None):
    rt = rt or DeterministicRuntime(6)
    net = Network(rt=rt)
    net.loopback.register("rogue", acceptor)
    binding = Binding("initiator", Address(Transport.LOOPBACK, "", 0, "rogue"),
                      Address(Transport.LOOPBACK, "", 0, "caller"),
                      signatures=SIGS, runtime=rt, network=net,
                      config=EngineConfig(resend_budget=0))
    return Caller(binding)


def test_reply_for_another_call_is_rejected():
    stranger = CallId(b"\xee" * 16)

    def acceptor(frame):
        return marshal_reply(Reply(stranger, result=TaggedValue.of_text("?")))

    with pytest.raises(FaultError) as e:
        rogue_caller(acceptor).call("answer", "x")
    assert "arrived on call" in e.value.fault.detail


def test_non_carrier_response_is_rejected():
    from channelrpc.marshal import marshal_message
    from channelrpc.message import Message

    def acceptor(frame):
        from channelrpc.marshal import unmarshal_message
        m = unmarshal_message(frame)
        fake = Message(m.return_address, m.target, "surprise",
                       (), m.call_id, phase=Phase.RESPONSE)
        return marshal_message(fake)

    with pytest.raises(FaultError) as e:
        rogue_caller(acceptor).call("answer", "x")
    assert "reply carrier" in e.value.fault.detail


# -------------------------------------------------------------------- config

def test_config_rejects_unknown_scheme():
    with pytest.raises(ValueError):
        EngineConfig(scheme="optimism")
