"""Content-addressed message cache: the node's locally consistent state.

The cache is a pure function of the set of live messages it holds, so any
two nodes that end up with the same message set have identical state
digests regardless of arrival order. Mutations are serialized through a
single writer lock; subscribers see every mutation exactly once, in commit
order.
"""

from __future__ import annotations

import enum
import hashlib
import os
import queue
import threading
from dataclasses import dataclass
from typing import Callable, Optional

from oppweb.message import (
    DecodeError,
    Message,
    decode,
    encode_canonical,
    is_expired,
)


class InsertResult(enum.Enum):
    NEW = "new"
    DUPLICATE = "duplicate"
    REJECTED_EXPIRED = "rejected-expired"
    REJECTED_INVALID = "rejected-invalid"


class EventKind(enum.Enum):
    INSERTED = "inserted"
    REMOVED_EXPIRED = "removed-expired"
    REMOVED_EXPLICIT = "removed-explicit"


@dataclass(frozen=True)
class CacheEvent:
    kind: EventKind
    message_id: str
    service: str


@dataclass(frozen=True)
class VectorEntry:
    message_id: str
    size: int


@dataclass(frozen=True)
class SummaryVector:
    """Compact listing of held message ids and encoded sizes, sorted by id."""

    entries: tuple[VectorEntry, ...]

    def __post_init__(self):
        ids = [e.message_id for e in self.entries]
        if ids != sorted(ids) or len(set(ids)) != len(ids):
            raise ValueError("summary vector entries must be sorted and unique")

    def ids(self) -> set[str]:
        return {e.message_id for e in self.entries}


@dataclass(frozen=True)
class RenderedView:
    """Sanitized HTML fragment produced for one message (or one service)."""

    html: str
    source: str  # "script" | "fallback"
    ref: str  # message id, or service name for appSummary views
    kind: str  # "summary" | "presentation" | "appSummary"
    wall_ms: float = 0.0
    output_bytes: int = 0


class NotFound(KeyError):
    pass


class Subscription:
    """Per-subscriber event queue; drained via get()/drain()."""

    def __init__(self, store: "CacheStore", maxsize: int):
        self._store = store
        self.queue: queue.Queue = queue.Queue(maxsize=maxsize)
        self.dropped = False

    def get(self, timeout: Optional[float] = None) -> Optional[CacheEvent]:
        try:
            return self.queue.get(timeout=timeout)
        except queue.Empty:
            return None

    def drain(self) -> list[CacheEvent]:
        events = []
        while True:
            try:
                events.append(self.queue.get_nowait())
            except queue.Empty:
                return events

    def close(self) -> None:
        self._store.unsubscribe(self)


class CacheStore:
    """Message cache with per-service indices and optional disk persistence.

    With root=None the store is purely in-memory. With a directory root,
    each live message is one file named by its id, containing the canonical
    encoding; rendered views live in a sibling directory.
    """

    def __init__(self, root: Optional[str] = None, capacity_bytes: Optional[int] = None):
        self._lock = threading.RLock()
        self._messages: dict[str, Message] = {}
        self._by_service: dict[str, list[str]] = {}
        self._views: dict[tuple[str, str], RenderedView] = {}
        self._blobs: dict[tuple[str, str], bytes] = {}
        self._sizes: dict[str, int] = {}
        self._subscribers: list[Subscription] = []
        self._total_bytes = 0
        self.capacity_bytes = capacity_bytes
        self.root = root
        if root is not None:
            os.makedirs(self._msg_dir, exist_ok=True)
            os.makedirs(self._view_dir, exist_ok=True)

    # -- paths -------------------------------------------------------------

    @property
    def _msg_dir(self) -> str:
        assert self.root is not None
        return os.path.join(self.root, "messages")

    @property
    def _view_dir(self) -> str:
        assert self.root is not None
        return os.path.join(self.root, "views")

    def _msg_path(self, message_id: str) -> str:
        return os.path.join(self._msg_dir, message_id + ".owm")

    # -- mutations -----------------------------------------------------------

    def insert(
        self, msg: Message, now: int, expected_id: Optional[str] = None
    ) -> InsertResult:
        """Add one message. *expected_id*, when the caller got the id from
        elsewhere (a request, a filename), is re-verified against the
        recomputed content digest."""
        with self._lock:
            mid = msg.id
            if expected_id is not None and expected_id != mid:
                return InsertResult.REJECTED_INVALID
            if is_expired(msg, now):
                return InsertResult.REJECTED_EXPIRED
            if mid in self._messages:
                return InsertResult.DUPLICATE
            encoded = encode_canonical(msg)
            if self.root is not None:
                self._write_msg_file(mid, encoded)
            self._messages[mid] = msg
            self._sizes[mid] = len(encoded)
            self._total_bytes += len(encoded)
            order = self._by_service.setdefault(msg.service, [])
            order.append(mid)
            order.sort(key=lambda i: (self._messages[i].created_at, i))
            self._emit(CacheEvent(EventKind.INSERTED, mid, msg.service))
            if self.capacity_bytes is not None:
                self._evict_to_capacity()
            return InsertResult.NEW

    def _write_msg_file(self, mid: str, encoded: bytes) -> None:
        path = self._msg_path(mid)
        tmp = path + ".tmp"
        try:
            with open(tmp, "wb") as fh:
                fh.write(encoded)
            os.replace(tmp, path)
        except OSError:
            try:
                os.unlink(tmp)
            except OSError:
                pass
            raise

    def _evict_to_capacity(self) -> None:
        assert self.capacity_bytes is not None
        while self._total_bytes > self.capacity_bytes and self._messages:
            oldest = min(
                self._messages.values(), key=lambda m: (m.created_at, m.id)
            )
            self._remove(oldest.id, EventKind.REMOVED_EXPLICIT)

    def _remove(self, mid: str, kind: EventKind) -> None:
        msg = self._messages.pop(mid)
        self._total_bytes -= self._sizes.pop(mid, 0)
        order = self._by_service.get(msg.service, [])
        if mid in order:
            order.remove(mid)
        if not order:
            self._by_service.pop(msg.service, None)
        for key in [k for k in self._views if k[0] == mid]:
            del self._views[key]
        for key in [k for k in self._blobs if k[0] == mid]:
            del self._blobs[key]
        if self.root is not None:
            for path in (self._msg_path(mid),):
                try:
                    os.unlink(path)
                except OSError:
                    pass
        self._emit(CacheEvent(kind, mid, msg.service))

    def remove(self, mid: str) -> None:
        """Operator-initiated removal (CLI use); expiry handles the rest."""
        with self._lock:
            if mid not in self._messages:
                raise NotFound(mid)
            self._remove(mid, EventKind.REMOVED_EXPLICIT)

    def expire_sweep(self, now: int) -> list[str]:
        with self._lock:
            doomed = sorted(
                mid for mid, m in self._messages.items() if is_expired(m, now)
            )
            for mid in doomed:
                self._remove(mid, EventKind.REMOVED_EXPIRED)
            return doomed

    # -- reads ---------------------------------------------------------------

    def get(self, mid: str) -> Message:
        with self._lock:
            try:
                return self._messages[mid]
            except KeyError:
                raise NotFound(mid) from None

    def __contains__(self, mid: str) -> bool:
        with self._lock:
            return mid in self._messages

    def __len__(self) -> int:
        with self._lock:
            return len(self._messages)

    def ids(self) -> list[str]:
        with self._lock:
            return sorted(self._messages)

    def list_service(self, service: str) -> list[str]:
        """Live ids for one service, created_at ascending, id tie-break."""
        with self._lock:
            return list(self._by_service.get(service, []))

    def services(self) -> dict[str, int]:
        with self._lock:
            return {name: len(ids) for name, ids in sorted(self._by_service.items())}

    def encoded_size(self, mid: str) -> int:
        with self._lock:
            try:
                return self._sizes[mid]
            except KeyError:
                raise NotFound(mid) from None

    def summary_vector(self) -> SummaryVector:
        with self._lock:
            entries = tuple(
                VectorEntry(mid, self._sizes[mid]) for mid in sorted(self._messages)
            )
            return SummaryVector(entries)

    def state_digest(self) -> str:
        """Digest of the concatenated sorted live ids; equal digests mean
        equal message sets."""
        with self._lock:
            joined = "".join(sorted(self._messages)).encode("ascii")
            return hashlib.sha256(joined).hexdigest()

    def snapshot(self, service: Optional[str] = None) -> list[Message]:
        with self._lock:
            if service is None:
                return [self._messages[m] for m in sorted(self._messages)]
            return [self._messages[m] for m in self._by_service.get(service, [])]

    # -- rendered views and derived blobs -------------------------------------

    def put_view(self, view: RenderedView) -> None:
        with self._lock:
            self._views[(view.ref, view.kind)] = view
            if self.root is not None:
                path = os.path.join(self._view_dir, f"{view.ref}.{view.kind}.html")
                with open(path, "w", encoding="utf-8") as fh:
                    fh.write(view.html)

    def get_view(self, ref: str, kind: str) -> Optional[RenderedView]:
        with self._lock:
            return self._views.get((ref, kind))

    def put_blob(self, mid: str, name: str, data: bytes) -> None:
        """Derived binary kept beside views (thumbnails and the like)."""
        with self._lock:
            self._blobs[(mid, name)] = data
            if self.root is not None:
                path = os.path.join(self._view_dir, f"{mid}.{name}")
                with open(path, "wb") as fh:
                    fh.write(data)

    def get_blob(self, mid: str, name: str) -> Optional[bytes]:
        with self._lock:
            return self._blobs.get((mid, name))

    # -- events ----------------------------------------------------------------

    def subscribe(self, maxsize: int = 0) -> Subscription:
        sub = Subscription(self, maxsize)
        with self._lock:
            self._subscribers.append(sub)
        return sub

    def unsubscribe(self, sub: Subscription) -> None:
        with self._lock:
            if sub in self._subscribers:
                self._subscribers.remove(sub)

    def _emit(self, event: CacheEvent) -> None:
        for sub in list(self._subscribers):
            try:
                sub.queue.put_nowait(event)
            except queue.Full:
                # Slow consumer: drop it with a terminal marker so the
                # reader can tell silence from disconnection.
                sub.dropped = True
                self._subscribers.remove(sub)

    # -- persistence -------------------------------------------------------------

    def persist(self) -> None:
        """Messages are written through on insert; nothing buffered."""
        return None

    @classmethod
    def recover(
        cls,
        root: str,
        now: int,
        capacity_bytes: Optional[int] = None,
        on_discard: Optional[Callable[[str, str], None]] = None,
    ) -> "CacheStore":
        """Rebuild a store from disk, discarding undecodable or mismatched
        files (their content digest is re-verified against the filename)."""
        store = cls(root, capacity_bytes=capacity_bytes)
        msg_dir = store._msg_dir
        entries = sorted(os.listdir(msg_dir))
        for entry in entries:
            if entry.endswith(".tmp"):
                try:
                    os.unlink(os.path.join(msg_dir, entry))
                except OSError:
                    pass
        for entry in entries:
            path = os.path.join(msg_dir, entry)
            if not entry.endswith(".owm"):
                continue
            claimed = entry[: -len(".owm")]
            with open(path, "rb") as fh:
                data = fh.read()
            try:
                msg = decode(data)
            except DecodeError as exc:
                os.unlink(path)
                if on_discard:
                    on_discard(claimed, f"undecodable: {exc}")
                continue
            if msg.id != claimed:
                os.unlink(path)
                if on_discard:
                    on_discard(claimed, "content digest mismatch")
                continue
            store.insert(msg, now)
        store.expire_sweep(now)
        return store
