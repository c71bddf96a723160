"""The command line, exercised as real subprocesses."""

import subprocess
import sys

import pytest


def run_cli(*args, env_extra=None, expect=0):
    import os
    env = dict(os.environ)
    if env_extra:
        env.update(env_extra)
    proc = subprocess.run([sys.executable, "-m", "channelrpc", *args],
                          capture_output=True, text=True, env=env, timeout=60)
    assert proc.returncode == expect, (proc.stdout, proc.stderr)
    return proc


def test_call_prints_the_answer_exactly():
    proc = run_cli("call", "--method", "answer", "--arg", "hello")
    assert proc.stdout == "You said:hello\n"


def test_call_parses_typed_args():
    proc = run_cli("call", "--method", "add", "--arg", "20", "--arg", "22")
    assert proc.stdout == "42\n"


def test_one_cast_prints_nothing():
    proc = run_cli("call", "--method", "note", "--arg", "x", "--one-cast")
    assert proc.stdout == ""


def test_application_fault_exits_nonzero():
    proc = run_cli("call", "--method", "fail", "--arg", "boom", expect=1)
    assert proc.stdout == ""
    assert "fault: application/indication" in proc.stderr
    assert "RuntimeError: boom" in proc.stderr


def test_template_flag_and_env_agree():
    by_flag = run_cli("call", "--method", "answer", "--arg", "hi",
                      "--template", "secure")
    by_env = run_cli("call", "--method", "answer", "--arg", "hi",
                     env_extra={"CHANNELRPC_TEMPLATE": "secure"})
    assert by_flag.stdout == by_env.stdout == "You said:hi\n"


def test_seed_env_gives_identical_traces(tmp_path):
    traces = []
    for n in (1, 2):
        path = tmp_path / ("t%d.log" % n)
        run_cli("call", "--method", "answer", "--arg", "hi",
                "--template", "secure", "--trace", str(path),
                env_extra={"CHANNELRPC_SEED": "5"})
        traces.append(path.read_bytes())
    assert traces[0] == traces[1]
    assert b"wire-send" in traces[0]

    other = tmp_path / "t3.log"
    run_cli("call", "--method", "answer", "--arg", "hi",
            "--template", "secure", "--trace", str(other),
            env_extra={"CHANNELRPC_SEED": "6"})
    assert other.read_bytes() != traces[0]


def test_seed_flag_beats_env(tmp_path):
    a, b = tmp_path / "a.log", tmp_path / "b.log"
    run_cli("call", "--method", "answer", "--arg", "x", "--trace", str(a),
            "--seed", "9", env_extra={"CHANNELRPC_SEED": "5"})
    run_cli("call", "--method", "answer", "--arg", "x", "--trace", str(b),
            "--seed", "9", env_extra={"CHANNELRPC_SEED": "77"})
    assert a.read_bytes() == b.read_bytes()


def test_scenario_subcommand_bundled_and_file(tmp_path):
    proc = run_cli("scenario", "demo")
    assert "ok: " in proc.stdout

    script = tmp_path / "mine.scn"
    script.write_text("seed 2\n"
                      "start-daemon server loopback:///demo\n"
                      "call answer here expect-result='You said:here'\n")
    proc = run_cli("scenario", str(script))
    assert "ok: call answer -> You said:here" in proc.stdout


def test_scenario_errors_report_and_fail():
    proc = subprocess.run(
        [sys.executable, "-m", "channelrpc", "scenario", "no-such-scenario"],
        capture_output=True, text=True, timeout=60)
    assert proc.returncode != 0
    assert proc.stderr.strip()


def test_bad_arguments_exit_with_usage():
    proc = subprocess.run([sys.executable, "-m", "channelrpc", "call"],
                          capture_output=True, text=True, timeout=60)
    assert proc.returncode == 2
    assert "method" in proc.stderr
