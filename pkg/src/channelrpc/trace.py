"""Execution tracing.

One tab-separated line per event:

    seq  time-ms  side  phase  handler  event  call-id  detail

seq is a per-tracer counter, time-ms comes from the runtime clock (so seeded
runs produce byte-identical traces), call-id is hex or "-" for events outside
any call.  Details are flattened to a single line.
"""

from __future__ import annotations

import sys
import threading
from typing import IO, List, Optional

from . import runtime as _runtime
from .message import CallId, Phase

EVENTS = (
    "enter", "todo", "clear", "undo", "redo", "fault", "dispatch", "reply",
    "rebind", "resend", "wire-send", "wire-recv", "wire-drop", "wire-corrupt",
)

_PHASE_NAMES = {
    Phase.REQUEST: "request",
    Phase.INDICATION: "indication",
    Phase.RESPONSE: "response",
    Phase.CONFIRMATION: "confirmation",
}


def _clean(text: str) -> str:
    return text.replace("\t", " ").replace("\n", " ").replace("\r", " ")


class Tracer:
    def __init__(self, out: Optional[IO[str]] = None,
                 rt: Optional[_runtime.Runtime] = None):
        self.out = out
        self.runtime = rt or _runtime.default_runtime()
        self.lines: List[str] = []
        self._lock = threading.Lock()
        self._seq = 0

    def emit(self, side: str, phase: Optional[Phase], handler: str,
             event: str, call_id: Optional[CallId], detail: str = "") -> None:
        phase_name = _PHASE_NAMES.get(phase, "-") if phase else "-"
        cid = call_id.hex if call_id is not None else "-"
        with self._lock:
            self._seq += 1
            line = "\t".join((
                str(self._seq),
                str(self.runtime.now_ms()),
                _clean(side) or "-",
                phase_name,
                _clean(handler) or "-",
                _clean(event),
                cid,
                _clean(detail),
            ))
            self.lines.append(line)
            if self.out is not None:
                self.out.write(line + "\n")
                self.out.flush()

    def text(self) -> str:
        with self._lock:
            return "\n".join(self.lines) + ("\n" if self.lines else "")


class NullTracer(Tracer):
    """Swallows everything; handy default when nobody asked for a trace."""

    def __init__(self):
        super().__init__(out=None, rt=_runtime.SystemRuntime())

    def emit(self, side, phase, handler, event, call_id, detail="") -> None:
        pass


def stderr_tracer(rt: Optional[_runtime.Runtime] = None) -> Tracer:
    return Tracer(out=sys.stderr, rt=rt)
