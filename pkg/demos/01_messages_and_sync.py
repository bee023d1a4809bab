"""Messages, content addressing, signing, and a pairwise sync session.

Walks the core machinery end to end without any network or daemon:
build self-contained messages, inspect their canonical encoding, sign
and verify them, then reconcile two caches over an in-memory channel.

Run from the repository root:  python3 demos/01_messages_and_sync.py
"""

import threading

from oppweb.keys import Identity
from oppweb.message import (
    Message,
    decode,
    describe,
    encode_canonical,
    sign_message,
    verify_message,
)
from oppweb.store import CacheStore
from oppweb.sync import MemoryChannel, run_session

# -- 1. a message is data plus metadata, addressed by its content ------------

alice = Identity.generate()
note = Message(
    service="board",
    originator=alice.fingerprint,
    created_at=1_700_000_000,
    ttl_seconds=5400,
    metadata={"tag": "demo", "contentType": "text", "description": "hello"},
    payload=[("body.txt", b"The well at km 3 has water again.")],
)
print("message id:", note.id)
print("encoded size:", len(encode_canonical(note)), "bytes")

# The id is derived from the canonical bytes: reordering metadata in the
# constructor changes nothing, flipping one payload byte changes everything.
reordered = Message(
    service="board",
    originator=alice.fingerprint,
    created_at=1_700_000_000,
    ttl_seconds=5400,
    metadata={"description": "hello", "contentType": "text", "tag": "demo"},
    payload=[("body.txt", b"The well at km 3 has water again.")],
)
assert reordered.id == note.id

# -- 2. signatures travel inside the encoding ---------------------------------

signed = sign_message(note, alice)
again = decode(encode_canonical(signed))
print("verify:", verify_message(again, [alice.key_record()]).value)
print()
print(describe(signed))

# -- 3. two caches reconcile to their union over any byte channel -------------

left, right = CacheStore(), CacheStore()
left.insert(signed, now=1_700_000_000)
other = sign_message(
    Message(
        service="board",
        originator=alice.fingerprint,
        created_at=1_700_000_100,
        ttl_seconds=5400,
        metadata={"tag": "demo", "contentType": "text"},
        payload=[("body.txt", b"Road north is open.")],
    ),
    alice,
)
right.insert(other, now=1_700_000_100)

chan_l, chan_r = MemoryChannel.pair()
peer = threading.Thread(
    target=run_session, args=(chan_l, left, 1_700_000_200), kwargs={"node_id": "left"}
)
peer.start()
report = run_session(chan_r, right, 1_700_000_200, node_id="right")
peer.join()
chan_l.close()

print()
print("session:", report.summary())
print("digests equal:", left.state_digest() == right.state_digest())
