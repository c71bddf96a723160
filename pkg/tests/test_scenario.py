"""The scripted end-to-end runner and the shipped scenario files."""

import io

import pytest

from channelrpc.scenario import ScenarioError, ScenarioRunner, run_scenario
from channelrpc.templates import bundled_names, load_bundled

BUNDLED = [n for n in bundled_names() if n.endswith(".scn")]


def run_with_trace(text, seed=None):
    out = io.StringIO()
    report = ScenarioRunner(text, seed=seed, trace_out=out).run()
    return report, out.getvalue()


def test_every_bundled_scenario_runs_clean():
    assert BUNDLED, "no scenarios shipped?"
    for name in BUNDLED:
        report = run_scenario(load_bundled(name))
        assert report, name
        assert all(line.startswith("ok: ") for line in report.splitlines()), name


def test_same_seed_means_identical_trace():
    text = load_bundled("secure.scn")
    report_a, trace_a = run_with_trace(text, seed=7)
    report_b, trace_b = run_with_trace(text, seed=7)
    assert report_a == report_b
    assert trace_a == trace_b
    _, trace_c = run_with_trace(text, seed=8)
    assert trace_c != trace_a


def test_scripted_seed_used_unless_overridden():
    assert ScenarioRunner("seed 42\n").seed == 42
    assert ScenarioRunner("seed 42\n", seed=5).seed == 5
    assert ScenarioRunner("call x\n" .replace("call x", "# nothing")).seed == 0


def test_expectations_catch_wrong_results():
    text = ("start-daemon server loopback:///demo\n"
            "call answer hi expect-result='You said:wrong'\n")
    with pytest.raises(ScenarioError) as e:
        run_scenario(text)
    assert e.value.lineno == 2
    assert "expected" in e.value.detail


def test_expect_fault_requires_the_fault():
    text = ("start-daemon server loopback:///demo\n"
            "call answer hi expect-fault=anything\n")
    with pytest.raises(ScenarioError, match="succeeded"):
        run_scenario(text)


def test_fault_expectation_matches_substring():
    text = ("start-daemon server loopback:///demo\n"
            "call fail boom expect-fault='RuntimeError: boom'\n")
    report = run_scenario(text)
    assert "faulted as expected" in report


@pytest.mark.parametrize("text,lineno,fragment", [
    ("bogus-directive\n", 1, "unknown directive"),
    ("start-daemon\n", 1, "start-daemon needs"),
    ("start-daemon toaster loopback:///x\n", 1, "unknown daemon kind"),
    ("call answer hi\n", 1, "no server to call"),
    ("# comment\ninject-fault\n", 2, "inject-fault needs"),
    ("inject-fault warp 3\n", 1, "unknown fault kind"),
    ("relocate-server ghost\n", 1, "relocate-server needs"),
    ("start-daemon server loopback:///demo\n"
     "relocate-server ghost loopback:///y\n", 2, "no server named"),
    ("resend-frame\n", 1, "nothing captured"),
    ("capture-frame\n", 1, "no request frame"),
    ("expect trace-contains\n", 1, "needs a substring"),
    ("start-daemon server loopback:///demo\n"
     "call answer hi\n"
     "expect trace-contains never-in-a-trace\n", 3, "never mentions"),
    ("call 'unclosed\n", 1, "quotation"),
])
def test_errors_carry_line_numbers(text, lineno, fragment):
    with pytest.raises(ScenarioError) as e:
        run_scenario(text)
    assert e.value.lineno == lineno
    assert fragment in e.value.detail


def test_capture_and_resend_round_trip():
    text = ("seed 3\n"
            "start-daemon server loopback:///demo\n"
            "call answer hi expect-result='You said:hi'\n"
            "capture-frame first\n"
            "resend-frame first\n")
    report = run_scenario(text)
    assert "captured a" in report
    assert "resent frame" in report


def test_trace_count_expectation():
    text = ("seed 1\n"
            "start-daemon server loopback:///demo\n"
            "call answer a\n"
            "call answer b\n"
            "expect trace-contains wire-send count=4\n")
    report = run_scenario(text)
    assert "trace contains 'wire-send' (4)" in report
    with pytest.raises(ScenarioError, match="expected 9"):
        run_scenario(text.replace("count=4", "count=9"))
