"""Registry and relocation manager: the two naming daemons.

Both are ordinary services reached over bare bindings (no channel objects),
so they stay reachable even while a secured channel is being repaired.

The registry maps an object name to (address, published template, epoch).
Epochs only move forward: a server re-registers with epoch+1 each time it
moves, so stale registrations can never overwrite fresh ones.

The relocation manager answers one question: where does the object live right
now.  Movers report in; the relocation channel object asks it while clearing
a transport fault."""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Dict, Optional

from . import runtime as _runtime
from .engine import simple_call
from .message import Address, format_address, parse_address
from .stream import Network


@dataclass(frozen=True)
class RegistryRecord:
    name: str
    address: str
    template: str
    epoch: int


class RegistryService:
    """Remote-callable name registry."""

    def __init__(self):
        self._lock = threading.Lock()
        self._records: Dict[str, RegistryRecord] = {}

    def register(self, name: str, address: str, template: str, epoch: int) -> int:
        parse_address(address)  # reject garbage before it poisons lookups
        with self._lock:
            held = self._records.get(name)
            if held is not None and epoch <= held.epoch:
                raise ValueError("epoch %d not above the registered %d"
                                 % (epoch, held.epoch))
            self._records[name] = RegistryRecord(name, address, template, epoch)
            return epoch

    def lookup(self, name: str) -> list:
        with self._lock:
            rec = self._records.get(name)
        if rec is None:
            return ["", "", 0]
        return [rec.address, rec.template, rec.epoch]

    def unregister(self, name: str) -> bool:
        with self._lock:
            return self._records.pop(name, None) is not None


class RelocationManagerService:
    """Remote-callable current-location table."""

    def __init__(self):
        self._lock = threading.Lock()
        self._where: Dict[str, str] = {}

    def report_move(self, name: str, address: str) -> bool:
        parse_address(address)
        with self._lock:
            self._where[name] = address
        return True

    def locate(self, name: str) -> str:
        with self._lock:
            return self._where.get(name, "")


# ------------------------------------------------------------- client side

def registry_register(network: Network, registry: Address, name: str,
                      address: Address, template_text: str, epoch: int,
                      runtime: Optional[_runtime.Runtime] = None) -> int:
    return simple_call(network, registry, "register", name,
                       format_address(address), template_text, epoch,
                       runtime=runtime)


def registry_lookup(network: Network, registry: Address, name: str,
                    runtime: Optional[_runtime.Runtime] = None
                    ) -> Optional[RegistryRecord]:
    got = simple_call(network, registry, "lookup", name, runtime=runtime)
    address, template, epoch = got[0], got[1], got[2]
    if not address:
        return None
    return RegistryRecord(name, address, template, epoch)


def manager_report(network: Network, manager: Address, name: str,
                   address: Address,
                   runtime: Optional[_runtime.Runtime] = None) -> None:
    simple_call(network, manager, "report_move", name,
                format_address(address), runtime=runtime)


def manager_locate(network: Network, manager: Address, name: str,
                   runtime: Optional[_runtime.Runtime] = None
                   ) -> Optional[Address]:
    got = simple_call(network, manager, "locate", name, runtime=runtime)
    return parse_address(got) if got else None
