"""Acceptor-side assembly: hosts a service behind a template stack.

A Server owns the listener, the acceptor binding and the epoch counter.  On
move() it re-listens elsewhere, re-registers under epoch+1 and reports the
move to the relocation manager, so the registry and the manager always agree
with where it actually listens.  The relocation channel object on clients
never writes to either; it only asks."""

from __future__ import annotations

import threading
from typing import Dict, Optional, Union

from . import runtime as _runtime
from .client import build_binding, template_config
from .engine import Endpoint
from .message import Address, MethodSignature
from .naming import manager_report, registry_register
from .stream import Network
from .templates import ChannelTemplate, format_template, parse_template
from .trace import Tracer


class Server:
    def __init__(self, template: Union[str, ChannelTemplate, None],
                 service, address: Address, network: Network,
                 signatures: Optional[Dict[str, MethodSignature]] = None,
                 runtime: Optional[_runtime.Runtime] = None,
                 tracer: Optional[Tracer] = None,
                 registry: Optional[Address] = None,
                 manager: Optional[Address] = None):
        if isinstance(template, str):
            template = parse_template(template)
        self.template = template or ChannelTemplate()
        self.service = service
        self.requested_address = address
        # The identity clients bind by; survives moves even on loopback,
        # where moving necessarily changes the routing object name.
        self.logical_name = address.object_name
        self.network = network
        self.runtime = runtime
        self.registry = registry
        self.manager = manager
        self.epoch = 0
        self._lock = threading.Lock()
        self._closer = None
        self.binding = build_binding(self.template, "acceptor", None, address,
                                     network, signatures=signatures,
                                     runtime=runtime, tracer=tracer,
                                     config=template_config(self.template))
        self.endpoint = Endpoint(self.binding, service)

    @property
    def address(self) -> Address:
        return self.binding.local_address

    @property
    def name(self) -> str:
        return self.logical_name

    def start(self) -> Address:
        with self._lock:
            if self._closer is not None:
                raise RuntimeError("server already started")
            actual, closer = self.network.listen(self.requested_address,
                                                 self.endpoint.accept_frame)
            self._closer = closer
            self.binding.local_address = actual
        self._publish()
        return self.address

    def _publish(self):
        if self.registry is not None:
            self.epoch = registry_register(
                self.network, self.registry, self.name, self.address,
                format_template(self.template), self.epoch + 1,
                runtime=self.runtime)
        if self.manager is not None:
            manager_report(self.network, self.manager, self.name,
                           self.address, runtime=self.runtime)

    def move(self, new_address: Address) -> Address:
        """Stop listening, come back up at new_address, publish the move.
        Existing per-session state (negotiated keys, sequence scoreboard)
        survives; clients rebind through the relocation manager."""
        with self._lock:
            if self._closer is None:
                raise RuntimeError("server not started")
            self._closer()
            actual, closer = self.network.listen(new_address,
                                                 self.endpoint.accept_frame)
            self._closer = closer
            self.binding.local_address = actual
        self._publish()
        return self.address

    def close(self):
        with self._lock:
            if self._closer is not None:
                self._closer()
                self._closer = None


def serve_naming(service, address: Address, network: Network) -> "Server":
    """Host a registry or relocation manager on a bare stack."""
    srv = Server(None, service, address, network)
    srv.start()
    return srv
