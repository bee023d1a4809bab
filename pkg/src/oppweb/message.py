"""Self-contained message model: canonical encoding, ids, signing, expiry.

A message bundles payload blobs with key-value metadata, including the
transformation scripts that know how to render it. The canonical encoding
is a length-prefixed binary with metadata sorted by key, so two messages
with equal logical content always produce identical bytes; the content id
is the SHA-256 of everything except the trailing signature field.
"""

from __future__ import annotations

import dataclasses
import enum
import hashlib
import json
import struct
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Mapping, Optional, Union

from oppweb.keys import Identity, KeyRecord

MAGIC = b"OWM1"
VERSION = 1
MAX_FIELD = 2**31 - 1
MAX_U64 = 2**64 - 1

# Script metadata keys, in the order views are derived from them.
TRANSFORM_KEYS = ("appSummary", "summary", "presentation", "new", "reply")

KNOWN_CONTENT_TYPES = ("audio", "video", "image", "text", "app", "other")

# Keys the node itself interprets; applications may add arbitrary others.
RESERVED_KEYS = frozenset(TRANSFORM_KEYS) | {
    "contentType",
    "description",
    "service",
    "system",
    "icon",
}

_TAG_TEXT = 0
_TAG_BYTES = 1
_TAG_REF = 2


class EncodeError(ValueError):
    """A message cannot be represented in the wire format."""


class DecodeError(ValueError):
    """Input bytes are not a well-formed message."""


@dataclass(frozen=True)
class MetaValue:
    """Metadata value: inline text, inline bytes, or a payload reference."""

    kind: str  # "text" | "bytes" | "ref"
    value: Union[str, bytes]

    def __post_init__(self):
        if self.kind not in ("text", "bytes", "ref"):
            raise ValueError(f"bad MetaValue kind {self.kind!r}")
        if self.kind == "bytes":
            if not isinstance(self.value, bytes):
                raise ValueError("bytes MetaValue needs a bytes value")
        elif not isinstance(self.value, str):
            raise ValueError(f"{self.kind} MetaValue needs a str value")

    @classmethod
    def text(cls, value: str) -> "MetaValue":
        return cls("text", value)

    @classmethod
    def binary(cls, value: bytes) -> "MetaValue":
        return cls("bytes", value)

    @classmethod
    def ref(cls, payload_name: str) -> "MetaValue":
        return cls("ref", payload_name)


MetaLike = Union[str, bytes, MetaValue]


def _coerce_meta(value: MetaLike) -> MetaValue:
    if isinstance(value, MetaValue):
        return value
    if isinstance(value, str):
        return MetaValue.text(value)
    if isinstance(value, bytes):
        return MetaValue.binary(value)
    raise ValueError(f"cannot use {type(value).__name__} as metadata value")


@dataclass(frozen=True)
class Message:
    """One immutable self-contained unit of content plus rendering logic."""

    service: str
    originator: str
    created_at: int
    ttl_seconds: int
    metadata: tuple[tuple[str, MetaValue], ...] = ()
    payload: tuple[tuple[str, bytes], ...] = ()
    signature: Optional[bytes] = None

    def __init__(
        self,
        service: str,
        originator: str,
        created_at: int,
        ttl_seconds: int,
        metadata: Union[Mapping[str, MetaLike], Iterable[tuple[str, MetaLike]]] = (),
        payload: Iterable[tuple[str, bytes]] = (),
        signature: Optional[bytes] = None,
    ):
        if isinstance(metadata, Mapping):
            items = list(metadata.items())
        else:
            items = list(metadata)
        entries = sorted(((k, _coerce_meta(v)) for k, v in items), key=lambda kv: kv[0])
        for (a, _), (b, _) in zip(entries, entries[1:]):
            if a == b:
                raise ValueError(f"duplicate metadata key {a!r}")
        pay = tuple((name, bytes(data)) for name, data in payload)
        names = [name for name, _ in pay]
        if len(set(names)) != len(names):
            raise ValueError("duplicate payload name")
        if not (0 <= created_at <= MAX_U64 and 0 <= ttl_seconds <= MAX_U64):
            raise ValueError("created_at/ttl_seconds out of range")
        object.__setattr__(self, "service", service)
        object.__setattr__(self, "originator", originator)
        object.__setattr__(self, "created_at", int(created_at))
        object.__setattr__(self, "ttl_seconds", int(ttl_seconds))
        object.__setattr__(self, "metadata", tuple(entries))
        object.__setattr__(self, "payload", pay)
        object.__setattr__(self, "signature", signature)
        declared = self.meta("service")
        if declared is not None and not (
            declared.kind == "text" and declared.value == service
        ):
            raise ValueError("`service` metadata key disagrees with service field")
        for name in self._ref_targets():
            if name not in names:
                raise ValueError(f"metadata ref to unknown payload {name!r}")

    def _ref_targets(self) -> list[str]:
        return [mv.value for _, mv in self.metadata if mv.kind == "ref"]

    # -- accessors -------------------------------------------------------

    @cached_property
    def id(self) -> str:
        return compute_id(self)

    def meta(self, key: str) -> Optional[MetaValue]:
        for k, v in self.metadata:
            if k == key:
                return v
        return None

    def meta_resolved(self, key: str) -> Union[str, bytes, None]:
        """Metadata value with payload references resolved to bytes."""
        mv = self.meta(key)
        if mv is None:
            return None
        if mv.kind == "ref":
            return self.payload_bytes(mv.value)
        return mv.value

    def payload_bytes(self, name: str) -> Optional[bytes]:
        for n, data in self.payload:
            if n == name:
                return data
        return None

    def script(self, kind: str) -> Optional[str]:
        """Transformation script source stored under *kind*, if any."""
        if kind not in TRANSFORM_KEYS:
            raise ValueError(f"unknown transformation kind {kind!r}")
        mv = self.meta(kind)
        if mv is not None and mv.kind == "text" and mv.value:
            return mv.value
        return None

    def scripts(self) -> dict[str, str]:
        return {k: s for k in TRANSFORM_KEYS if (s := self.script(k)) is not None}

    def content_type(self) -> Optional[str]:
        mv = self.meta("contentType")
        if mv is not None and mv.kind == "text":
            return mv.value
        return None

    def with_signature(self, signature: Optional[bytes]) -> "Message":
        return dataclasses.replace(self, signature=signature)

    def __repr__(self):
        return (
            f"Message(service={self.service!r}, id={self.id[:12]}..., "
            f"created_at={self.created_at}, meta={len(self.metadata)}, "
            f"payload={len(self.payload)})"
        )


@dataclass(frozen=True)
class TransformationScript:
    """A sandboxed program of one of the five transformation kinds."""

    kind: str
    source: str

    def __post_init__(self):
        if self.kind not in TRANSFORM_KEYS:
            raise ValueError(f"unknown transformation kind {self.kind!r}")
        if not self.source:
            raise ValueError("empty transformation source")


# -- wire format -----------------------------------------------------------


def _lp(data: bytes) -> bytes:
    if len(data) > MAX_FIELD:
        raise EncodeError(f"field of {len(data)} bytes exceeds wire limit")
    return struct.pack(">I", len(data)) + data


def _meta_tag(mv: MetaValue) -> int:
    return {"text": _TAG_TEXT, "bytes": _TAG_BYTES, "ref": _TAG_REF}[mv.kind]


def canonical_body(msg: Message) -> bytes:
    """The signed and hashed region: everything except id and signature."""
    parts = [
        MAGIC,
        bytes([VERSION]),
        _lp(msg.service.encode("utf-8")),
        _lp(msg.originator.encode("utf-8")),
        struct.pack(">Q", msg.created_at),
        struct.pack(">Q", msg.ttl_seconds),
        struct.pack(">I", len(msg.metadata)),
    ]
    # Constructor already sorts metadata by key; keep the wire order tied
    # to the canonical sort rather than trusting in-memory order.
    for key, mv in sorted(msg.metadata, key=lambda kv: kv[0]):
        raw = mv.value.encode("utf-8") if isinstance(mv.value, str) else mv.value
        parts.append(_lp(key.encode("utf-8")))
        parts.append(bytes([_meta_tag(mv)]))
        parts.append(_lp(raw))
    parts.append(struct.pack(">I", len(msg.payload)))
    for name, data in msg.payload:
        parts.append(_lp(name.encode("utf-8")))
        parts.append(_lp(data))
    return b"".join(parts)


def encode_canonical(msg: Message) -> bytes:
    """Full wire encoding: canonical body plus the detached signature slot."""
    return canonical_body(msg) + _lp(msg.signature or b"")


def compute_id(msg: Message) -> str:
    return hashlib.sha256(canonical_body(msg)).hexdigest()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise DecodeError(
                f"truncated input: wanted {n} bytes at offset {self.pos}"
            )
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u8(self) -> int:
        return self.take(1)[0]

    def u32(self) -> int:
        return struct.unpack(">I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack(">Q", self.take(8))[0]

    def lp(self) -> bytes:
        n = self.u32()
        if n > MAX_FIELD:
            raise DecodeError(f"length {n} exceeds wire limit")
        return self.take(n)

    def lp_str(self) -> str:
        raw = self.lp()
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DecodeError(f"invalid UTF-8 at offset {self.pos}: {exc}") from exc

    def done(self) -> bool:
        return self.pos == len(self.data)


def decode(data: bytes) -> Message:
    """Parse wire bytes back into a Message; never crashes on bad input."""
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise DecodeError("bad magic")
    version = r.u8()
    if version != VERSION:
        raise DecodeError(f"unsupported version {version}")
    service = r.lp_str()
    originator = r.lp_str()
    created_at = r.u64()
    ttl_seconds = r.u64()
    meta_count = r.u32()
    if meta_count > len(data):  # cheap upper bound before looping
        raise DecodeError(f"implausible metadata count {meta_count}")
    metadata = []
    prev_key = None
    for _ in range(meta_count):
        key = r.lp_str()
        tag = r.u8()
        raw = r.lp()
        if prev_key is not None and key <= prev_key:
            raise DecodeError("metadata keys not strictly sorted")
        prev_key = key
        if tag == _TAG_TEXT or tag == _TAG_REF:
            try:
                text = raw.decode("utf-8")
            except UnicodeDecodeError as exc:
                raise DecodeError(f"invalid UTF-8 metadata value: {exc}") from exc
            mv = MetaValue("text" if tag == _TAG_TEXT else "ref", text)
        elif tag == _TAG_BYTES:
            mv = MetaValue.binary(raw)
        else:
            raise DecodeError(f"unknown metadata tag {tag}")
        metadata.append((key, mv))
    payload_count = r.u32()
    if payload_count > len(data):
        raise DecodeError(f"implausible payload count {payload_count}")
    payload = []
    seen_names = set()
    for _ in range(payload_count):
        name = r.lp_str()
        blob = r.lp()
        if name in seen_names:
            raise DecodeError(f"duplicate payload name {name!r}")
        seen_names.add(name)
        payload.append((name, blob))
    signature = r.lp()
    if not r.done():
        raise DecodeError(f"{len(data) - r.pos} trailing bytes")
    try:
        return Message(
            service=service,
            originator=originator,
            created_at=created_at,
            ttl_seconds=ttl_seconds,
            metadata=metadata,
            payload=payload,
            signature=signature or None,
        )
    except ValueError as exc:
        raise DecodeError(str(exc)) from exc


# -- signing ---------------------------------------------------------------


class VerifyResult(enum.Enum):
    VERIFIED = "verified"
    UNKNOWN_ORIGINATOR = "unknown-originator"
    BAD_SIGNATURE = "bad-signature"


def sign_message(msg: Message, identity: Identity) -> Message:
    """Return a copy signed by *identity* (which must be the originator)."""
    if msg.originator != identity.fingerprint:
        raise ValueError("identity fingerprint does not match message originator")
    return msg.with_signature(identity.sign(canonical_body(msg)))


def verify_message(msg: Message, keys: Iterable[KeyRecord]) -> VerifyResult:
    record = None
    for rec in keys:
        if rec.fingerprint == msg.originator:
            record = rec
            break
    if record is None:
        return VerifyResult.UNKNOWN_ORIGINATOR
    if not msg.signature:
        return VerifyResult.BAD_SIGNATURE
    if record.verify(canonical_body(msg), msg.signature):
        return VerifyResult.VERIFIED
    return VerifyResult.BAD_SIGNATURE


def is_expired(msg: Message, now: int) -> bool:
    """A message stays valid through created_at + ttl_seconds inclusive."""
    return now > msg.created_at + msg.ttl_seconds


# -- validation ------------------------------------------------------------


def validate_metadata(msg: Message) -> list[str]:
    """Advisory warnings about metadata the node will handle by fallback.

    Never rejects: unknown application keys are always permitted.
    """
    warnings = []
    reserved_lower = {k.lower(): k for k in RESERVED_KEYS}
    for key, mv in msg.metadata:
        canonical = reserved_lower.get(key.lower())
        if canonical is not None and key != canonical:
            warnings.append(
                f"unknown reserved-namespace key {key!r} (did you mean {canonical!r}?)"
            )
        if key in TRANSFORM_KEYS:
            if mv.kind != "text":
                warnings.append(f"transformation key {key!r} must hold script text")
            elif not mv.value.strip():
                warnings.append(f"transformation key {key!r} holds an empty script")
    if msg.script("summary") is None:
        warnings.append("no summary script; fallback rendering will apply")
    ct = msg.content_type()
    if ct is not None and ct not in KNOWN_CONTENT_TYPES:
        warnings.append(f"unknown contentType {ct!r}, treated as other")
    return warnings


def describe(msg: Message) -> str:
    """Human-readable JSON document for debugging; not canonical."""

    def meta_repr(mv: MetaValue):
        if mv.kind == "bytes":
            assert isinstance(mv.value, bytes)
            preview = mv.value[:32].hex()
            return {"kind": "bytes", "size": len(mv.value), "hex_prefix": preview}
        if mv.kind == "ref":
            return {"kind": "ref", "payload": mv.value}
        text = mv.value
        assert isinstance(text, str)
        if len(text) > 200:
            return {"kind": "text", "size": len(text), "preview": text[:200]}
        return {"kind": "text", "value": text}

    doc = {
        "id": msg.id,
        "service": msg.service,
        "originator": msg.originator,
        "created_at": msg.created_at,
        "ttl_seconds": msg.ttl_seconds,
        "signed": bool(msg.signature),
        "metadata": {k: meta_repr(v) for k, v in msg.metadata},
        "payload": [
            {"name": name, "size": len(data), "sha256": hashlib.sha256(data).hexdigest()}
            for name, data in msg.payload
        ],
        "encoded_size": len(encode_canonical(msg)),
    }
    return json.dumps(doc, indent=2, sort_keys=False)
