"""Pairwise epidemic anti-entropy over duplex byte channels.

Both peers exchange summary vectors, request what they lack, then stream
the requested messages oldest-first while concurrently receiving. The
same session code runs over real sockets between daemons and over
in-memory channels inside tests and the simulator's cross-check mode.
"""

from __future__ import annotations

import random
import socket
import struct
import threading
from dataclasses import dataclass, field
from typing import Optional, Union

from oppweb.message import DecodeError, decode, encode_canonical
from oppweb.store import CacheStore, InsertResult, SummaryVector, VectorEntry

PROTOCOL_VERSION = 1
MAX_FRAME = 64 * 2**20  # decoder refuses anything larger

FRAME_HELLO = 1
FRAME_VECTOR = 2
FRAME_REQUEST = 3
FRAME_DATA = 4
FRAME_BYE = 5


class FrameError(ValueError):
    """Input bytes are not a well-formed protocol frame."""


class ChannelClosed(ConnectionError):
    """The underlying byte channel went away mid-session."""


# -- frames ------------------------------------------------------------------


@dataclass(frozen=True)
class Hello:
    version: int
    node_id: str


@dataclass(frozen=True)
class Vector:
    vector: SummaryVector


@dataclass(frozen=True)
class Request:
    ids: tuple[str, ...]


@dataclass(frozen=True)
class Data:
    message_bytes: bytes


@dataclass(frozen=True)
class Bye:
    pass


Frame = Union[Hello, Vector, Request, Data, Bye]


def _id_to_raw(message_id: str) -> bytes:
    raw = bytes.fromhex(message_id)
    if len(raw) != 32:
        raise FrameError(f"message id must be 32 bytes, got {len(raw)}")
    return raw


def encode_frame(frame: Frame) -> bytes:
    if isinstance(frame, Hello):
        node = frame.node_id.encode("utf-8")
        body = bytes([frame.version]) + struct.pack(">I", len(node)) + node
        ftype = FRAME_HELLO
    elif isinstance(frame, Vector):
        parts = [struct.pack(">I", len(frame.vector.entries))]
        for entry in frame.vector.entries:
            parts.append(_id_to_raw(entry.message_id))
            parts.append(struct.pack(">Q", entry.size))
        body = b"".join(parts)
        ftype = FRAME_VECTOR
    elif isinstance(frame, Request):
        body = struct.pack(">I", len(frame.ids)) + b"".join(
            _id_to_raw(i) for i in frame.ids
        )
        ftype = FRAME_REQUEST
    elif isinstance(frame, Data):
        body = frame.message_bytes
        ftype = FRAME_DATA
    elif isinstance(frame, Bye):
        body = b""
        ftype = FRAME_BYE
    else:
        raise FrameError(f"cannot encode {type(frame).__name__}")
    if len(body) > MAX_FRAME:
        raise FrameError(f"frame body of {len(body)} bytes exceeds bound")
    return bytes([ftype]) + struct.pack(">I", len(body)) + body


def decode_frame(data: bytes) -> Frame:
    """Parse one complete frame (header plus body); structured errors only."""
    if len(data) < 5:
        raise FrameError("short frame header")
    ftype = data[0]
    (length,) = struct.unpack(">I", data[1:5])
    if length > MAX_FRAME:
        raise FrameError(f"frame length {length} exceeds bound")
    body = data[5:]
    if len(body) != length:
        raise FrameError(f"frame length {length} disagrees with body {len(body)}")
    return _decode_body(ftype, body)


def _decode_body(ftype: int, body: bytes) -> Frame:
    if ftype == FRAME_HELLO:
        if len(body) < 5:
            raise FrameError("short HELLO")
        version = body[0]
        (n,) = struct.unpack(">I", body[1:5])
        if len(body) != 5 + n:
            raise FrameError("HELLO length mismatch")
        try:
            node_id = body[5:].decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FrameError(f"HELLO node id not UTF-8: {exc}") from exc
        return Hello(version, node_id)
    if ftype == FRAME_VECTOR:
        if len(body) < 4:
            raise FrameError("short VECTOR")
        (count,) = struct.unpack(">I", body[:4])
        if len(body) != 4 + count * 40:
            raise FrameError("VECTOR length mismatch")
        entries = []
        for i in range(count):
            off = 4 + i * 40
            mid = body[off : off + 32].hex()
            (size,) = struct.unpack(">Q", body[off + 32 : off + 40])
            entries.append(VectorEntry(mid, size))
        try:
            return Vector(SummaryVector(tuple(entries)))
        except ValueError as exc:
            raise FrameError(str(exc)) from exc
    if ftype == FRAME_REQUEST:
        if len(body) < 4:
            raise FrameError("short REQUEST")
        (count,) = struct.unpack(">I", body[:4])
        if len(body) != 4 + count * 32:
            raise FrameError("REQUEST length mismatch")
        ids = tuple(
            body[4 + i * 32 : 36 + i * 32].hex() for i in range(count)
        )
        return Request(ids)
    if ftype == FRAME_DATA:
        return Data(body)
    if ftype == FRAME_BYE:
        if body:
            raise FrameError("BYE carries no body")
        return Bye()
    raise FrameError(f"unknown frame type {ftype}")


# -- channels -----------------------------------------------------------------


class MemoryChannel:
    """One endpoint of an in-memory duplex byte pipe.

    An optional send budget models a contact that breaks after so many
    bytes: the overflowing send is truncated and the pipe closes, exactly
    like a radio link dropping mid-frame.
    """

    def __init__(self):
        self._peer: Optional["MemoryChannel"] = None
        self._buf = bytearray()
        self._cond = threading.Condition()
        self._closed = False
        self.send_budget: Optional[int] = None
        self.bytes_sent = 0
        self.sent_log = bytearray()  # everything that made it onto the wire

    @classmethod
    def pair(cls) -> tuple["MemoryChannel", "MemoryChannel"]:
        a, b = cls(), cls()
        a._peer, b._peer = b, a
        return a, b

    def send(self, data: bytes) -> None:
        peer = self._peer
        assert peer is not None
        with self._cond:
            if self._closed:
                raise ChannelClosed("send on closed channel")
        cut = False
        if self.send_budget is not None:
            remaining = self.send_budget - self.bytes_sent
            if len(data) >= remaining:
                data = data[:remaining]
                cut = True
        self.bytes_sent += len(data)
        self.sent_log.extend(data)
        with peer._cond:
            peer._buf.extend(data)
            peer._cond.notify_all()
        if cut:
            self.close()
            raise ChannelClosed("send budget exhausted")

    def recv(self, max_bytes: int) -> bytes:
        with self._cond:
            while not self._buf and not self._closed:
                self._cond.wait()
            if not self._buf:
                return b""
            chunk = bytes(self._buf[:max_bytes])
            del self._buf[:max_bytes]
            return chunk

    def close(self) -> None:
        for side in (self, self._peer):
            if side is None:
                continue
            with side._cond:
                side._closed = True
                side._cond.notify_all()


class SocketChannel:
    """Thin adapter giving sockets the channel send/recv surface."""

    def __init__(self, sock: socket.socket):
        self._sock = sock

    def send(self, data: bytes) -> None:
        try:
            self._sock.sendall(data)
        except OSError as exc:
            raise ChannelClosed(str(exc)) from exc

    def recv(self, max_bytes: int) -> bytes:
        try:
            return self._sock.recv(max_bytes)
        except OSError as exc:
            raise ChannelClosed(str(exc)) from exc

    def close(self) -> None:
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()


class _Counting:
    """Byte counters around any channel, for the session report."""

    def __init__(self, channel):
        self.channel = channel
        self.sent = 0
        self.received = 0
        self._send_lock = threading.Lock()

    def send(self, data: bytes) -> None:
        with self._send_lock:
            self.channel.send(data)
            self.sent += len(data)

    def recv_exact(self, n: int) -> bytes:
        chunks = []
        got = 0
        while got < n:
            chunk = self.channel.recv(n - got)
            if not chunk:
                raise ChannelClosed(f"channel closed {got}/{n} bytes into a read")
            chunks.append(chunk)
            got += len(chunk)
        self.received += n
        return b"".join(chunks)

    def read_frame(self) -> Frame:
        header = self.recv_exact(5)
        ftype = header[0]
        (length,) = struct.unpack(">I", header[1:5])
        if length > MAX_FRAME:
            raise FrameError(f"frame length {length} exceeds bound")
        body = self.recv_exact(length) if length else b""
        return _decode_body(ftype, body)


# -- session -------------------------------------------------------------------


@dataclass
class SessionReport:
    peer_node_id: str = ""
    sent_ids: list[str] = field(default_factory=list)
    received_ids: list[str] = field(default_factory=list)
    bytes_sent: int = 0
    bytes_received: int = 0
    duplicate_data: int = 0
    rejected: int = 0
    aborted: bool = False
    reason: str = ""

    def summary(self) -> str:
        state = "aborted" if self.aborted else "done"
        line = (
            f"session with {self.peer_node_id or '<unknown>'}: {state}, "
            f"sent {len(self.sent_ids)} ({self.bytes_sent} B), "
            f"received {len(self.received_ids)} ({self.bytes_received} B)"
        )
        if self.reason:
            line += f" [{self.reason}]"
        return line


def run_session(
    channel,
    store: CacheStore,
    now: int,
    node_id: str = "",
    transfer_order: str = "oldest",
) -> SessionReport:
    """Run one symmetric anti-entropy session over *channel*.

    Both peers end holding the union of their live message sets if the
    channel stays open long enough. A channel failure at any byte offset
    leaves the local cache valid; the partially received message is simply
    discarded when its digest cannot be verified.
    """
    if transfer_order not in ("oldest", "random"):
        raise ValueError(f"unknown transfer order {transfer_order!r}")
    chan = _Counting(channel)
    report = SessionReport()
    try:
        chan.send(encode_frame(Hello(PROTOCOL_VERSION, node_id)))
        hello = chan.read_frame()
        if not isinstance(hello, Hello):
            raise FrameError(f"expected HELLO, got {type(hello).__name__}")
        report.peer_node_id = hello.node_id
        if hello.version != PROTOCOL_VERSION:
            report.aborted = True
            report.reason = f"version-mismatch (peer {hello.version})"
            try:
                chan.send(encode_frame(Bye()))
            except ChannelClosed:
                pass
            return report

        local_vector = store.summary_vector()
        chan.send(encode_frame(Vector(local_vector)))
        vector = chan.read_frame()
        if not isinstance(vector, Vector):
            raise FrameError(f"expected VECTOR, got {type(vector).__name__}")

        held = local_vector.ids()
        wants = tuple(
            e.message_id for e in vector.vector.entries if e.message_id not in held
        )
        chan.send(encode_frame(Request(wants)))
        request = chan.read_frame()
        if not isinstance(request, Request):
            raise FrameError(f"expected REQUEST, got {type(request).__name__}")

        sender = threading.Thread(
            target=_send_requested,
            args=(chan, store, request.ids, now, transfer_order, report),
            daemon=True,
        )
        sender.start()
        try:
            _receive_until_bye(chan, store, set(wants), now, report)
        finally:
            sender.join()
    except (ChannelClosed, FrameError, DecodeError) as exc:
        report.aborted = True
        report.reason = report.reason or str(exc)
    finally:
        report.bytes_sent = chan.sent
        report.bytes_received = chan.received
    return report


def _send_requested(
    chan: _Counting,
    store: CacheStore,
    requested: tuple[str, ...],
    now: int,
    transfer_order: str,
    report: SessionReport,
) -> None:
    to_send = []
    for mid in dict.fromkeys(requested):  # de-duplicate, preserve order
        try:
            msg = store.get(mid)
        except KeyError:
            continue
        if msg.created_at + msg.ttl_seconds < now:
            continue  # never ship expired content
        to_send.append(msg)
    if transfer_order == "oldest":
        to_send.sort(key=lambda m: (m.created_at, m.id))
    else:
        random.Random().shuffle(to_send)
    try:
        for msg in to_send:
            chan.send(encode_frame(Data(encode_canonical(msg))))
            report.sent_ids.append(msg.id)
        chan.send(encode_frame(Bye()))
    except ChannelClosed:
        report.aborted = True
        report.reason = report.reason or "channel closed while sending"


def _receive_until_bye(
    chan: _Counting,
    store: CacheStore,
    wanted: set[str],
    now: int,
    report: SessionReport,
) -> None:
    seen: set[str] = set()
    while True:
        frame = chan.read_frame()
        if isinstance(frame, Bye):
            break
        if not isinstance(frame, Data):
            raise FrameError(f"unexpected {type(frame).__name__} during transfer")
        msg = decode(frame.message_bytes)
        if msg.id in seen:
            report.duplicate_data += 1
            continue
        seen.add(msg.id)
        if msg.id not in wanted:
            report.duplicate_data += 1  # unsolicited or repeated across phases
            continue
        result = store.insert(msg, now)
        if result is InsertResult.NEW:
            report.received_ids.append(msg.id)
        elif result in (InsertResult.REJECTED_EXPIRED, InsertResult.REJECTED_INVALID):
            report.rejected += 1


def dial(host: str, port: int, store: CacheStore, now: int, node_id: str = "") -> SessionReport:
    """One anti-entropy session against a listening peer."""
    sock = socket.create_connection((host, port), timeout=30)
    channel = SocketChannel(sock)
    try:
        return run_session(channel, store, now, node_id=node_id)
    finally:
        channel.close()
