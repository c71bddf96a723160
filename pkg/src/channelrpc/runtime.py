"""Clock and identifier sources.

Everything that would normally come from the wall clock or os.urandom is
routed through a Runtime object so a process (or a single test) can switch to
a seeded, repeatable source.  The CLI honours CHANNELRPC_SEED by installing a
DeterministicRuntime as the process default.
"""

from __future__ import annotations

import os
import random
import struct
import threading
import time


class Runtime:
    """Wall-clock time and fresh identifiers. Subclasses decide the source."""

    def now_ms(self) -> int:
        raise NotImplementedError

    def call_id_bytes(self) -> bytes:
        """16 fresh bytes, unique for the life of this process."""
        raise NotImplementedError

    def message_id_bytes(self) -> bytes:
        """8 fresh bytes for fragment grouping."""
        raise NotImplementedError

    def nonce(self, n: int) -> bytes:
        raise NotImplementedError


class SystemRuntime(Runtime):
    def now_ms(self) -> int:
        return int(time.time() * 1000)

    def call_id_bytes(self) -> bytes:
        return os.urandom(16)

    def message_id_bytes(self) -> bytes:
        return os.urandom(8)

    def nonce(self, n: int) -> bytes:
        return os.urandom(n)


# Deterministic time starts at 2020-01-01T00:00:00Z and advances 1 ms per
# query, so stamps are monotonic and distinct without real sleeping.
_DET_EPOCH_MS = 1577836800000


class DeterministicRuntime(Runtime):
    """Seeded source: counters for ids, a stepping clock, seeded nonces."""

    def __init__(self, seed: int):
        self.seed = seed
        self._lock = threading.Lock()
        self._tick = 0
        self._counter = 0
        self._rng = random.Random(seed)

    def now_ms(self) -> int:
        with self._lock:
            self._tick += 1
            return _DET_EPOCH_MS + self._tick

    def call_id_bytes(self) -> bytes:
        with self._lock:
            self._counter += 1
            return struct.pack(">QQ", self.seed & 0xFFFFFFFFFFFFFFFF, self._counter)

    def message_id_bytes(self) -> bytes:
        # Seed in the high half: two seeded parties must never collide.
        with self._lock:
            self._counter += 1
            return struct.pack(">II", self.seed & 0xFFFFFFFF, self._counter)

    def nonce(self, n: int) -> bytes:
        with self._lock:
            return self._rng.randbytes(n)


_default: Runtime = SystemRuntime()


def default_runtime() -> Runtime:
    return _default


def set_default_runtime(rt: Runtime) -> None:
    global _default
    _default = rt
