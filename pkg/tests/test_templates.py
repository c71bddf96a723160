"""Template text: grammar, canonical form, stack negotiation."""

import pytest
from hypothesis import given
from hypothesis import strategies as st

from channelrpc.services import CATALOG, counterpart_free_names
from channelrpc.templates import (
    ChannelTemplate,
    NegotiationFailed,
    TemplateEntry,
    TemplateError,
    bundled_names,
    format_template,
    load_bundled,
    load_template_text,
    negotiate,
    parse_template,
)

SAMPLE = """
# a full stack
engine scheme=clear_then_undo_redo resend-budget=1
call timestamp required skew-ms=5000
call sequence optional
stream encrypt required ttl-ms=600000
"""


def test_parse_reads_layers_modes_and_params():
    tpl = parse_template(SAMPLE)
    assert tpl.names() == ["timestamp", "sequence", "encrypt"]
    assert [e.layer for e in tpl.entries] == ["call", "call", "stream"]
    assert tpl.entries[0].required and not tpl.entries[1].required
    assert tpl.entries[0].params_dict == {"skew-ms": "5000"}
    assert tpl.engine_dict == {"scheme": "clear_then_undo_redo",
                               "resend-budget": "1"}


def test_blank_lines_and_comments_ignored():
    tpl = parse_template("\n\n# nothing\ncall a required  # trailing\n")
    assert tpl.names() == ["a"]
    assert tpl.entries[0].params == ()


@pytest.mark.parametrize("bad,what", [
    ("widget a required", "unknown directive"),
    ("call a sometimes", "required|optional"),
    ("call a", "need a name"),
    ("call a required skew", "key=value"),
    ("stream s required\ncall a required", "codec bound"),
    ("call a required\ncall a optional", "duplicate"),
    ('call a required x="unclosed', "quot"),
])
def test_parse_errors_carry_line_numbers(bad, what):
    with pytest.raises(TemplateError) as e:
        parse_template(bad)
    assert e.value.lineno >= 1
    assert what.split()[0] in str(e.value)


def test_format_parse_identity():
    tpl = parse_template(SAMPLE)
    assert parse_template(format_template(tpl)) == tpl
    assert format_template(ChannelTemplate()) == ""


# quoting is line-oriented, so values may hold anything except a line break
_value_text = st.text(max_size=8).filter(
    lambda s: s.splitlines() == ([s] if s else []))


@given(st.lists(
    st.tuples(st.sampled_from(["alpha", "beta", "gamma", "delta"]),
              st.booleans(),
              st.dictionaries(st.sampled_from(["k", "key-2"]),
                              _value_text, max_size=2)),
    max_size=4, unique_by=lambda t: t[0]))
def test_format_parse_identity_over_generated_templates(entries):
    tpl = ChannelTemplate(tuple(
        TemplateEntry(name, "call", required, tuple(params.items()))
        for name, required, params in entries))
    assert parse_template(format_template(tpl)) == tpl


@pytest.mark.parametrize("value", ["a\nb", "\r", "x y"])
def test_format_refuses_line_breaking_values(value):
    tpl = ChannelTemplate((
        TemplateEntry("alpha", "call", True, (("k", value),)),))
    with pytest.raises(ValueError, match="span lines"):
        format_template(tpl)


def test_parse_refuses_non_token_names_and_keys():
    with pytest.raises(TemplateError, match="plain token"):
        parse_template("call 'two words' required\n")
    with pytest.raises(TemplateError, match="plain token"):
        parse_template("call alpha required 'odd key'=v\n")


# -------------------------------------------------------------- negotiation

def T(text):
    return parse_template(text)


def test_server_required_entries_always_deploy():
    agreed = negotiate(T(""), T("call timestamp required skew-ms=9"))
    assert agreed.names() == ["timestamp"]
    assert agreed.entries[0].required
    assert agreed.entries[0].params_dict == {"skew-ms": "9"}


def test_server_optional_needs_client_interest():
    server = T("call accounting optional account=x")
    assert negotiate(T(""), server).names() == []
    agreed = negotiate(T("call accounting optional"), server)
    assert agreed.names() == ["accounting"]


def test_server_parameter_values_prevail():
    agreed = negotiate(T("call timestamp required skew-ms=1 extra=keep"),
                       T("call timestamp required skew-ms=9"))
    assert agreed.entries[0].params_dict == {"skew-ms": "9", "extra": "keep"}


def test_client_requirement_missing_on_server_fails():
    with pytest.raises(NegotiationFailed):
        negotiate(T("call sequence required"), T("call timestamp required"))


def test_one_sided_client_extras_survive_when_allowed():
    client = T("call usage-log optional path=/tmp/u.log")
    assert negotiate(client, T(""), counterpart_free=()).names() == []
    agreed = negotiate(client, T(""), counterpart_free={"usage-log"})
    assert agreed.names() == ["usage-log"]


def test_negotiation_is_a_fixed_point():
    server = T("call timestamp required\ncall sequence optional\n"
               "stream encrypt required ttl-ms=100")
    client = T("call sequence optional\ncall usage-log optional")
    free = counterpart_free_names()
    once = negotiate(client, server, free)
    again = negotiate(once, server, free)
    assert once == again


def test_engine_params_merge_server_wins():
    agreed = negotiate(T("engine resend-budget=5 confirm-timeout-ms=7"),
                       T("engine resend-budget=1"))
    assert agreed.engine_dict == {"resend-budget": "1",
                                  "confirm-timeout-ms": "7"}


# ----------------------------------------------------------------- bundled

def test_bundled_templates_parse_and_build():
    tpl_names = [n for n in bundled_names() if n.endswith(".tpl")]
    assert "secure.tpl" in tpl_names and "identity.tpl" in tpl_names
    for name in tpl_names:
        tpl = parse_template(load_bundled(name))
        for e in tpl.entries:
            assert e.name in CATALOG, "bundled %s references %r" % (name, e.name)
            assert CATALOG[e.name].layer == e.layer


def test_load_template_text_prefers_files(tmp_path):
    path = tmp_path / "mine.tpl"
    path.write_text("call timestamp required\n")
    assert load_template_text(str(path)) == "call timestamp required\n"
    assert "timestamp" in load_template_text("stamped")
    with pytest.raises(FileNotFoundError):
        load_template_text("no-such-template")
