"""Key distribution over the message fabric itself.

Verification keys travel as ordinary messages under the "keys" service,
so the same store-carry-forward path that moves content also moves the
material needed to check its signatures.
"""

from __future__ import annotations

from typing import Optional

from oppweb.keys import Identity, KeyRecord, fingerprint_of
from oppweb.message import Message, sign_message
from oppweb.store import CacheStore

KEYS_SERVICE = "keys"

# Key records outlive content by default; a 90-minute key would strand
# every signature check after the first sweep.
KEY_RECORD_TTL = 365 * 24 * 3600


def wrap_key_record(identity: Identity, now: int, ttl_seconds: int = KEY_RECORD_TTL) -> Message:
    """Package an identity's public half as a self-signed "keys" message."""
    msg = Message(
        service=KEYS_SERVICE,
        originator=identity.fingerprint,
        created_at=now,
        ttl_seconds=ttl_seconds,
        metadata={
            "contentType": "other",
            "description": f"public key {identity.fingerprint[:16]}",
            "algorithm": identity.algorithm,
            "fingerprint": identity.fingerprint,
        },
        payload=[("public.key", identity.public_key)],
    )
    return sign_message(msg, identity)


def extract_key_record(msg: Message) -> Optional[KeyRecord]:
    if msg.service != KEYS_SERVICE:
        return None
    public_key = msg.payload_bytes("public.key")
    if public_key is None:
        return None
    algorithm = msg.meta_resolved("algorithm")
    if not isinstance(algorithm, str):
        algorithm = "ed25519"
    claimed = msg.meta_resolved("fingerprint")
    if claimed != fingerprint_of(public_key):
        return None  # record lies about its own key
    try:
        return KeyRecord(
            fingerprint=fingerprint_of(public_key),
            public_key=public_key,
            algorithm=algorithm,
        )
    except ValueError:
        return None


def known_keys(store: CacheStore) -> list[KeyRecord]:
    records = []
    for mid in store.list_service(KEYS_SERVICE):
        record = extract_key_record(store.get(mid))
        if record is not None:
            records.append(record)
    return records
