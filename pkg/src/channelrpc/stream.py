"""Below the marshalling boundary: byte transforms, fragments, transports.

Stream handlers see opaque frames.  Sending folds each handler's on_send over
the data in stack order; receiving applies the inverse transforms in reverse
order, so peer chains pair up outermost-to-innermost.

UDP frames always travel as fragments (even a small frame goes as a single
fragment) because an encrypted frame is opaque and cannot be sniffed apart
from a fragment header.  Fragment header, 15 bytes:

    version 1  0x01
    msg-id  8
    index   2  u16
    count   2  u16
    length  2  u16, payload byte count
"""

from __future__ import annotations

import logging
import socket
import struct
import threading
import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

from . import runtime as _runtime
from .handler import Unclearable
from .message import Address, Fault, FaultError, FaultKind, Phase, Transport

log = logging.getLogger(__name__)

FRAGMENT_VERSION = 0x01
FRAGMENT_HEADER_LEN = 15


class TransportFault(FaultError):
    def __init__(self, detail: str, phase: Phase = Phase.REQUEST):
        super().__init__(Fault(FaultKind.TRANSPORT, phase, "", detail))


class StreamHandler:
    """Byte-level channel object. on_receive must invert on_send."""

    name = "StreamHandler"

    def on_send(self, data: bytes, ctx) -> bytes:
        return data

    def on_receive(self, data: bytes, ctx) -> bytes:
        return data

    def clear(self, data: bytes, f: Fault, ctx) -> bytes:
        raise Unclearable()


def chain_send(handlers, data: bytes, ctx=None) -> bytes:
    for h in handlers:
        data = h.on_send(data, ctx)
    return data


def chain_receive(handlers, data: bytes, ctx=None) -> bytes:
    for h in reversed(handlers):
        data = h.on_receive(data, ctx)
    return data


class StreamStack:
    """A send chain and its receive pairing (the peer's view, reversed)."""

    def __init__(self, send_chain):
        self.send_chain = list(send_chain)
        self.receive_chain = list(reversed(self.send_chain))

    def send(self, data: bytes, ctx=None) -> bytes:
        return chain_send(self.send_chain, data, ctx)

    def receive(self, data: bytes, ctx=None) -> bytes:
        return chain_receive(self.send_chain, data, ctx)


# ------------------------------------------------------------ fragmentation

@dataclass(frozen=True)
class Fragment:
    message_id: bytes
    index: int
    count: int
    payload: bytes

    def __post_init__(self):
        if len(self.message_id) != 8:
            raise ValueError("message-id is 8 bytes")
        if not 0 <= self.index < self.count:
            raise ValueError("index %d not below count %d" % (self.index, self.count))
        if self.count > 0xFFFF or len(self.payload) > 0xFFFF:
            raise ValueError("fragment field overflows u16")


def encode_fragment(f: Fragment) -> bytes:
    return (
        bytes([FRAGMENT_VERSION])
        + f.message_id
        + struct.pack(">HHH", f.index, f.count, len(f.payload))
        + f.payload
    )


def decode_fragment(data: bytes) -> Fragment:
    if len(data) < FRAGMENT_HEADER_LEN:
        raise TransportFault("short fragment: %d bytes" % len(data))
    if data[0] != FRAGMENT_VERSION:
        raise TransportFault("unknown fragment version 0x%02x" % data[0])
    message_id = data[1:9]
    index, count, length = struct.unpack(">HHH", data[9:15])
    payload = data[15 : 15 + length]
    if len(payload) != length:
        raise TransportFault("fragment payload truncated")
    return Fragment(message_id, index, count, payload)


def segment(data: bytes, mtu: int, rt: Optional[_runtime.Runtime] = None) -> List[Fragment]:
    """Split data into fragments whose encoded size never exceeds mtu.

    Zero-length data still yields one fragment so the receiver can tell an
    empty message from silence.
    """
    if mtu <= FRAGMENT_HEADER_LEN:
        raise ValueError("mtu %d leaves no room for payload" % mtu)
    cap = mtu - FRAGMENT_HEADER_LEN
    count = max(1, -(-len(data) // cap))
    if count > 0xFFFF:
        raise ValueError("payload needs %d fragments, limit 65535" % count)
    rt = rt or _runtime.default_runtime()
    mid = rt.message_id_bytes()
    return [
        Fragment(mid, i, count, data[i * cap : (i + 1) * cap]) for i in range(count)
    ]


def reassemble(frags) -> Optional[bytes]:
    """Join one message's fragments, any order, duplicates ignored.
    Returns None while fragments are still missing."""
    frags = list(frags)
    if not frags:
        return None
    mid, count = frags[0].message_id, frags[0].count
    by_index: Dict[int, Fragment] = {}
    for f in frags:
        if f.message_id != mid or f.count != count:
            raise TransportFault("mixed fragments fed to reassemble")
        by_index.setdefault(f.index, f)
    if len(by_index) < count:
        return None
    return b"".join(by_index[i].payload for i in range(count))


class Reassembler:
    """Tracks partially arrived messages, with a deadline per message-id."""

    def __init__(self, timeout_ms: int = 2000):
        self.timeout_ms = timeout_ms
        self._lock = threading.Lock()
        self._partial: Dict[bytes, Tuple[Dict[int, Fragment], float]] = {}

    def add(self, f: Fragment) -> Optional[bytes]:
        now = time.monotonic()
        with self._lock:
            self._sweep(now)
            by_index, born = self._partial.setdefault(f.message_id, ({}, now))
            by_index.setdefault(f.index, f)
            if len(by_index) >= f.count:
                del self._partial[f.message_id]
                return b"".join(by_index[i].payload for i in range(f.count))
            return None

    def _sweep(self, now: float) -> None:
        dead = [
            mid
            for mid, (_, born) in self._partial.items()
            if (now - born) * 1000 > self.timeout_ms
        ]
        for mid in dead:
            log.warning("reassembly timeout, dropping partial message %s", mid.hex())
            del self._partial[mid]


# ---------------------------------------------------------------- loopback

class LoopbackNetwork:
    """In-process transport with fault injection and frame capture.

    Endpoints register an acceptor callable by object name.  An exchange runs
    the acceptor synchronously in the calling thread, which keeps scenarios
    and seeded traces fully deterministic.  Injected faults: drop-nth frame,
    corrupt byte k of the next frame, delay the next frame, refuse the next
    connection.
    """

    def __init__(self, tracer=None):
        self.tracer = tracer
        self._lock = threading.Lock()
        self._endpoints: Dict[str, Callable[[bytes], Optional[bytes]]] = {}
        self.frames: List[Tuple[str, str, bytes]] = []  # (endpoint, direction, bytes)
        self._frame_no = 0
        self._drop_at: Optional[int] = None
        self._corrupt_next: Optional[int] = None
        self._delay_next_ms = 0
        self._refuse_next = 0

    def register(self, name: str, acceptor: Callable[[bytes], Optional[bytes]]):
        with self._lock:
            self._endpoints[name] = acceptor

    def unregister(self, name: str):
        with self._lock:
            self._endpoints.pop(name, None)

    # fault injection ------------------------------------------------------

    def fault_drop_nth(self, n: int):
        """Drop the nth frame from now (1 = the very next frame)."""
        with self._lock:
            self._drop_at = self._frame_no + n

    def fault_corrupt_next(self, byte_index: int):
        with self._lock:
            self._corrupt_next = byte_index

    def fault_delay_next(self, ms: int):
        with self._lock:
            self._delay_next_ms = ms

    def fault_refuse_next(self, count: int = 1):
        with self._lock:
            self._refuse_next = count

    def _trace(self, event: str, detail: str):
        if self.tracer is not None:
            self.tracer.emit("net", None, "-", event, None, detail)

    def _pass_frame(self, name: str, direction: str, data: bytes,
                    timeout_ms: int) -> Optional[bytes]:
        """Apply injected faults and record the frame. None means dropped."""
        with self._lock:
            self._frame_no += 1
            dropped = self._drop_at == self._frame_no
            if dropped:
                self._drop_at = None
            corrupt = self._corrupt_next
            self._corrupt_next = None
            delay = self._delay_next_ms
            self._delay_next_ms = 0
        if dropped:
            self._trace("wire-drop", "%s frame to %s" % (direction, name))
            return None
        if delay:
            if delay >= timeout_ms:
                self._trace("wire-drop", "delayed past deadline to %s" % name)
                return None
            time.sleep(delay / 1000.0)
        if corrupt is not None and corrupt < len(data):
            data = data[:corrupt] + bytes([data[corrupt] ^ 0xFF]) + data[corrupt + 1:]
            self._trace("wire-corrupt", "byte %d to %s" % (corrupt, name))
        with self._lock:
            self.frames.append((name, direction, data))
        return data

    def inject(self, object_name: str, frame: bytes) -> Optional[bytes]:
        """Deliver a raw frame straight to an endpoint, off the books: no
        counters, no capture.  This is the attacker's doorway in tests."""
        with self._lock:
            acceptor = self._endpoints.get(object_name)
        if acceptor is None:
            raise TransportFault("connect-failed: loopback endpoint %r"
                                 % object_name)
        return acceptor(frame)

    def exchange(self, addr: Address, frame: bytes, one_cast: bool,
                 timeout_ms: int) -> Optional[bytes]:
        with self._lock:
            if self._refuse_next > 0:
                self._refuse_next -= 1
                refuse = True
            else:
                refuse = False
            acceptor = self._endpoints.get(addr.object_name)
        if refuse or acceptor is None:
            raise TransportFault(
                "connect-failed: loopback endpoint %r" % addr.object_name
            )
        data = self._pass_frame(addr.object_name, "req", frame, timeout_ms)
        if data is None:
            return None if not one_cast else None
        response = acceptor(data)
        if one_cast or response is None:
            return None
        return self._pass_frame(addr.object_name, "rsp", response, timeout_ms)


# ------------------------------------------------------------------- tcp

def _read_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise TransportFault("connection closed mid-frame")
        buf += chunk
    return bytes(buf)


def _read_frame(sock: socket.socket) -> bytes:
    (length,) = struct.unpack(">I", _read_exact(sock, 4))
    return _read_exact(sock, length)


def _write_frame(sock: socket.socket, data: bytes) -> None:
    sock.sendall(struct.pack(">I", len(data)) + data)


class TcpListener:
    def __init__(self, host: str, port: int,
                 acceptor: Callable[[bytes], Optional[bytes]]):
        self.acceptor = acceptor
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind((host or "127.0.0.1", port))
        self._sock.listen(16)
        self.host, self.port = self._sock.getsockname()
        self._closing = False
        self._thread = threading.Thread(target=self._loop, daemon=True)
        self._thread.start()

    def _loop(self):
        while True:
            try:
                conn, _ = self._sock.accept()
            except OSError:
                return
            threading.Thread(target=self._serve_one, args=(conn,),
                             daemon=True).start()

    def _serve_one(self, conn: socket.socket):
        # One connection carries one call: frame in, optional frame out.
        try:
            with conn:
                frame = _read_frame(conn)
                response = self.acceptor(frame)
                if response is not None:
                    _write_frame(conn, response)
        except Exception:
            if not self._closing:
                log.exception("tcp listener worker failed")

    def close(self):
        self._closing = True
        try:
            self._sock.close()
        except OSError:
            pass


def tcp_exchange(addr: Address, frame: bytes, one_cast: bool,
                 timeout_ms: int) -> Optional[bytes]:
    try:
        sock = socket.create_connection((addr.host, addr.port),
                                        timeout=timeout_ms / 1000.0)
    except OSError as e:
        raise TransportFault("connect-failed: %s" % e) from None
    try:
        with sock:
            _write_frame(sock, frame)
            if one_cast:
                return None
            sock.settimeout(timeout_ms / 1000.0)
            try:
                return _read_frame(sock)
            except socket.timeout:
                return None
    except TransportFault:
        raise
    except OSError as e:
        raise TransportFault("send-failed: %s" % e) from None


# ------------------------------------------------------------------- udp

class UdpListener:
    def __init__(self, host: str, port: int,
                 acceptor: Callable[[bytes], Optional[bytes]],
                 mtu: int = 1400, reassembly_timeout_ms: int = 2000):
        self.acceptor = acceptor
        self.mtu = mtu
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self._sock.bind((host or "127.0.0.1", port))
        self.host, self.port = self._sock.getsockname()
        self._reassembler = Reassembler(reassembly_timeout_ms)
        self._closing = False
        self._thread = threading.Thread(target=self._loop, daemon=True)
        self._thread.start()

    def _loop(self):
        while True:
            try:
                datagram, peer = self._sock.recvfrom(65535)
            except OSError:
                return
            try:
                frame = self._reassembler.add(decode_fragment(datagram))
            except TransportFault as e:
                log.warning("bad datagram from %s: %s", peer, e)
                continue
            if frame is None:
                continue
            threading.Thread(target=self._respond, args=(frame, peer),
                             daemon=True).start()

    def _respond(self, frame: bytes, peer):
        try:
            response = self.acceptor(frame)
            if response is not None:
                for frag in segment(response, self.mtu):
                    self._sock.sendto(encode_fragment(frag), peer)
        except Exception:
            if not self._closing:
                log.exception("udp listener worker failed")

    def close(self):
        self._closing = True
        try:
            self._sock.close()
        except OSError:
            pass


def udp_exchange(addr: Address, frame: bytes, one_cast: bool,
                 timeout_ms: int, mtu: int = 1400,
                 rt: Optional[_runtime.Runtime] = None) -> Optional[bytes]:
    sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    try:
        with sock:
            try:
                for frag in segment(frame, mtu, rt):
                    sock.sendto(encode_fragment(frag), (addr.host, addr.port))
            except OSError as e:
                raise TransportFault("send-failed: %s" % e) from None
            if one_cast:
                return None
            reasm = Reassembler(timeout_ms)
            deadline = time.monotonic() + timeout_ms / 1000.0
            while True:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    return None
                sock.settimeout(remaining)
                try:
                    datagram, _ = sock.recvfrom(65535)
                except socket.timeout:
                    return None
                whole = reasm.add(decode_fragment(datagram))
                if whole is not None:
                    return whole
    except TransportFault:
        raise


# ---------------------------------------------------------------- network

class Network:
    """Routes exchanges and listeners to the transport an Address names."""

    def __init__(self, loopback: Optional[LoopbackNetwork] = None,
                 udp_mtu: int = 1400,
                 rt: Optional[_runtime.Runtime] = None,
                 tracer=None):
        self.loopback = loopback or LoopbackNetwork(tracer=tracer)
        self.udp_mtu = udp_mtu
        self.runtime = rt

    def exchange(self, addr: Address, frame: bytes, one_cast: bool,
                 timeout_ms: int) -> Optional[bytes]:
        """Send a frame, and for two-way calls wait for the response frame.
        Returns None on timeout; raises TransportFault on connect failure."""
        if addr.transport == Transport.LOOPBACK:
            return self.loopback.exchange(addr, frame, one_cast, timeout_ms)
        if addr.transport == Transport.TCP:
            return tcp_exchange(addr, frame, one_cast, timeout_ms)
        return udp_exchange(addr, frame, one_cast, timeout_ms,
                            mtu=self.udp_mtu, rt=self.runtime)

    def listen(self, addr: Address, acceptor: Callable[[bytes], Optional[bytes]]):
        """Start accepting frames at addr. Returns (actual address, closer)."""
        if addr.transport == Transport.LOOPBACK:
            self.loopback.register(addr.object_name, acceptor)
            return addr, lambda: self.loopback.unregister(addr.object_name)
        if addr.transport == Transport.TCP:
            listener = TcpListener(addr.host, addr.port, acceptor)
            actual = Address(Transport.TCP, listener.host, listener.port,
                             addr.object_name)
            return actual, listener.close
        listener = UdpListener(addr.host, addr.port, acceptor, mtu=self.udp_mtu)
        actual = Address(Transport.UDP, listener.host, listener.port,
                         addr.object_name)
        return actual, listener.close
