"""Channel templates: which objects a binding deploys, in what order.

A template is line-oriented text.  Blank lines and # comments are ignored.

    engine <key>=<value>
    call   <name> required|optional [<key>=<value> ...]
    stream <name> required|optional [<key>=<value> ...]

Entry order is stack order: the first call entry sits closest to the
application, the last stream entry closest to the wire.  All call entries
must come before any stream entry, mirroring where the codec sits.

Negotiation folds a client template against the server's published one and
yields the stack the client must deploy.  The server's required entries and
parameter values always win; client extras survive only when the object
works one-sided (the caller passes a collection of such names).
"""

from __future__ import annotations

import re
import shlex
from dataclasses import dataclass
from importlib import resources
from typing import Dict, Iterable, List, Optional, Tuple

LAYERS = ("call", "stream")

# names and parameter keys must survive unquoted on a single line
_TOKEN_RE = re.compile(r"^[A-Za-z0-9_.-]+$")
# everything str.splitlines treats as a boundary; values cannot contain these
_LINE_BREAKS = "\n\r\x0b\x0c\x1c\x1d\x1e\x85\u2028\u2029"


class TemplateError(ValueError):
    def __init__(self, lineno: int, detail: str):
        super().__init__("template line %d: %s" % (lineno, detail))
        self.lineno = lineno
        self.detail = detail


class NegotiationFailed(Exception):
    pass


@dataclass(frozen=True)
class TemplateEntry:
    name: str
    layer: str
    required: bool
    params: Tuple[Tuple[str, str], ...] = ()

    @property
    def params_dict(self) -> Dict[str, str]:
        return dict(self.params)


@dataclass(frozen=True)
class ChannelTemplate:
    entries: Tuple[TemplateEntry, ...] = ()
    engine_params: Tuple[Tuple[str, str], ...] = ()

    @property
    def engine_dict(self) -> Dict[str, str]:
        return dict(self.engine_params)

    def layer(self, layer: str) -> List[TemplateEntry]:
        return [e for e in self.entries if e.layer == layer]

    def names(self) -> List[str]:
        return [e.name for e in self.entries]


def _parse_kv(tokens: Iterable[str], lineno: int) -> Tuple[Tuple[str, str], ...]:
    out = []
    for tok in tokens:
        key, sep, value = tok.partition("=")
        if not sep or not key:
            raise TemplateError(lineno, "expected key=value, got %r" % tok)
        if not _TOKEN_RE.match(key):
            raise TemplateError(lineno, "parameter key %r is not a plain token"
                                % key)
        out.append((key, value))
    return tuple(out)


def parse_template(text: str) -> ChannelTemplate:
    entries: List[TemplateEntry] = []
    engine: List[Tuple[str, str]] = []
    seen_stream = False
    seen_names = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        try:
            tokens = shlex.split(line, comments=True)
        except ValueError as e:
            raise TemplateError(lineno, str(e)) from None
        if not tokens:
            continue
        head = tokens[0]
        if head == "engine":
            engine.extend(_parse_kv(tokens[1:], lineno))
            continue
        if head not in LAYERS:
            raise TemplateError(lineno, "unknown directive %r" % head)
        if len(tokens) < 3:
            raise TemplateError(
                lineno, "%s entries need a name and required|optional" % head)
        name, mode = tokens[1], tokens[2]
        if mode not in ("required", "optional"):
            raise TemplateError(lineno, "expected required|optional, got %r" % mode)
        if head == "call" and seen_stream:
            raise TemplateError(
                lineno, "call entry %r after a stream entry; the codec "
                        "boundary cannot be crossed" % name)
        if head == "stream":
            seen_stream = True
        if not _TOKEN_RE.match(name):
            raise TemplateError(lineno, "entry name %r is not a plain token"
                                % name)
        if name in seen_names:
            raise TemplateError(lineno, "duplicate entry %r" % name)
        seen_names.add(name)
        entries.append(TemplateEntry(name, head, mode == "required",
                                     _parse_kv(tokens[3:], lineno)))
    return ChannelTemplate(tuple(entries), tuple(engine))


def _quote(value: str) -> str:
    if any(c in _LINE_BREAKS for c in value):
        raise ValueError("template values cannot span lines: %r" % value)
    return shlex.quote(value) if value else "''"


def _token(s: str, what: str) -> str:
    if not _TOKEN_RE.match(s):
        raise ValueError("%s %r is not a plain token" % (what, s))
    return s


def format_template(tpl: ChannelTemplate) -> str:
    """Canonical text form; parse(format(t)) == t."""
    lines = ["engine %s=%s" % (_token(k, "engine key"), _quote(v))
             for k, v in tpl.engine_params]
    for e in tpl.entries:
        parts = [e.layer, _token(e.name, "entry name"),
                 "required" if e.required else "optional"]
        parts += ["%s=%s" % (_token(k, "parameter key"), _quote(v))
                  for k, v in e.params]
        lines.append(" ".join(parts))
    return "\n".join(lines) + ("\n" if lines else "")


def _merged_params(client: Optional[TemplateEntry],
                   server: Optional[TemplateEntry]) -> Tuple[Tuple[str, str], ...]:
    merged: Dict[str, str] = {}
    if client is not None:
        merged.update(client.params)
    if server is not None:
        merged.update(server.params)  # the server's values prevail
    return tuple(merged.items())


def negotiate(client: ChannelTemplate, server: ChannelTemplate,
              counterpart_free: Iterable[str] = ()) -> ChannelTemplate:
    """Agree on the stack a client deploys against a published server stack.

    Per layer: every server-required entry is adopted in the server's order;
    server-optional entries are adopted only when the client asked for them;
    client entries unknown to the server survive only when named in
    counterpart_free, else the layers cannot pair and negotiation fails.
    Running the result against the same server template is a fixed point.
    """
    free = set(counterpart_free)
    out: List[TemplateEntry] = []
    for layer in LAYERS:
        server_entries = {e.name: e for e in server.layer(layer)}
        client_entries = {e.name: e for e in client.layer(layer)}
        for se in server.layer(layer):
            ce = client_entries.get(se.name)
            if se.required or ce is not None:
                required = se.required or (ce is not None and ce.required)
                out.append(TemplateEntry(se.name, layer, required,
                                         _merged_params(ce, se)))
        for ce in client.layer(layer):
            if ce.name in server_entries:
                continue
            if ce.name in free:
                out.append(ce)
            elif ce.required:
                raise NegotiationFailed(
                    "client requires %r but the server does not deploy it"
                    % ce.name)
            # optional and pairwise: silently dropped
    engine: Dict[str, str] = dict(client.engine_params)
    engine.update(server.engine_params)
    return ChannelTemplate(tuple(out), tuple(engine.items()))


def load_bundled(name: str) -> str:
    """Text of a template or scenario shipped inside the package."""
    if not name.endswith((".tpl", ".scn")):
        name += ".tpl"
    ref = resources.files(__package__).joinpath("bundled", name)
    return ref.read_text(encoding="utf-8")


def load_template_text(spec: str) -> str:
    """Template text from a filesystem path or a bundled template name."""
    import os

    if os.path.exists(spec):
        with open(spec, encoding="utf-8") as fh:
            return fh.read()
    try:
        return load_bundled(spec)
    except FileNotFoundError:
        raise FileNotFoundError(
            "no template file %r and no bundled template of that name" % spec
        ) from None


def bundled_names() -> List[str]:
    ref = resources.files(__package__).joinpath("bundled")
    return sorted(p.name for p in ref.iterdir()
                  if p.name.endswith((".tpl", ".scn")))
