"""Message model: canonical encoding, ids, signing, expiry, validation."""

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oppweb.keys import Identity, KeyRecord, fingerprint_of
from oppweb.message import (
    DecodeError,
    EncodeError,
    Message,
    MetaValue,
    VerifyResult,
    compute_id,
    decode,
    describe,
    encode_canonical,
    is_expired,
    sign_message,
    validate_metadata,
    verify_message,
)

# Recorded once from the implementation; regression pin for the wire format.
GOLDEN_ID = "c6555b4bab6737da2ebb3eb76c5d8b0336d476089e9c885d36679bf1b95fda28"


def golden_message() -> Message:
    return Message(
        service="board",
        originator="ab" * 32,
        created_at=1_700_000_000,
        ttl_seconds=5400,
        metadata={
            "contentType": "text",
            "description": "golden fixture",
            "tag": "news",
            "icon": MetaValue.ref("icon.png"),
        },
        payload=[
            ("body.txt", b"hello opportunistic web"),
            ("icon.png", b"\x89PNG-not-really"),
        ],
    )


def test_golden_digest_frozen():
    assert compute_id(golden_message()) == GOLDEN_ID
    assert golden_message().id == GOLDEN_ID


def test_empty_message_roundtrip():
    m = Message(service="t", originator="x", created_at=0, ttl_seconds=1)
    data = encode_canonical(m)
    assert data[:4] == b"OWM1"
    assert data[4] == 1
    assert decode(data) == m


def test_metadata_insertion_order_is_canonicalized():
    a = Message("s", "o", 5, 10, metadata=[("b", "2"), ("a", "1")])
    b = Message("s", "o", 5, 10, metadata=[("a", "1"), ("b", "2")])
    assert encode_canonical(a) == encode_canonical(b)
    assert a.id == b.id
    assert a == b


def test_random_key_permutations_byte_identical():
    rng = random.Random(7)
    items = [(f"k{i:02d}", f"v{i}") for i in range(12)]
    reference = encode_canonical(Message("s", "o", 1, 2, metadata=items))
    for _ in range(25):
        shuffled = items[:]
        rng.shuffle(shuffled)
        assert encode_canonical(Message("s", "o", 1, 2, metadata=shuffled)) == reference


def test_payload_flip_changes_id():
    base = golden_message()
    flipped = Message(
        service=base.service,
        originator=base.originator,
        created_at=base.created_at,
        ttl_seconds=base.ttl_seconds,
        metadata=base.metadata,
        payload=[("body.txt", b"hello opportunistic wEb"), base.payload[1]],
    )
    assert flipped.id != base.id


def test_payload_order_is_significant():
    a = Message("s", "o", 0, 1, payload=[("a", b"1"), ("b", b"2")])
    b = Message("s", "o", 0, 1, payload=[("b", b"2"), ("a", b"1")])
    assert a.id != b.id


meta_values = st.one_of(
    st.text(max_size=40).map(MetaValue.text),
    st.binary(max_size=40).map(MetaValue.binary),
)
messages = st.builds(
    Message,
    service=st.text(max_size=20),
    originator=st.text(max_size=20),
    created_at=st.integers(min_value=0, max_value=2**40),
    ttl_seconds=st.integers(min_value=0, max_value=2**40),
    metadata=st.dictionaries(
        st.text(max_size=12).filter(lambda k: k != "service"), meta_values, max_size=6
    ),
    payload=st.lists(
        st.tuples(st.text(max_size=12), st.binary(max_size=60)),
        max_size=4,
        unique_by=lambda p: p[0],
    ),
    signature=st.one_of(st.none(), st.binary(min_size=1, max_size=64)),
)


@given(messages)
@settings(max_examples=1000, deadline=None)
def test_roundtrip_property(msg):
    assert decode(encode_canonical(msg)) == msg


@given(messages, messages)
@settings(max_examples=200, deadline=None)
def test_distinct_bodies_distinct_ids(a, b):
    body_a = (a.service, a.originator, a.created_at, a.ttl_seconds, a.metadata, a.payload)
    body_b = (b.service, b.originator, b.created_at, b.ttl_seconds, b.metadata, b.payload)
    if body_a != body_b:
        assert a.id != b.id
    else:
        assert a.id == b.id


def test_id_collision_stability_at_scale():
    rng = random.Random(42)
    ids = set()
    count = 100_000
    for i in range(count):
        m = Message(
            service=f"s{rng.randrange(4)}",
            originator=f"o{rng.randrange(100)}",
            created_at=rng.randrange(2**32),
            ttl_seconds=rng.randrange(2**20),
            metadata={"n": str(i)},
            payload=[("b", rng.randbytes(8))],
        )
        ids.add(m.id)
    assert len(ids) == count


def test_oversize_field_rejected():
    class FakeBytes(bytes):
        def __len__(self):
            return 2**31

    m = Message("s", "o", 0, 1)
    object.__setattr__(m, "payload", (("big", FakeBytes()),))
    with pytest.raises(EncodeError):
        encode_canonical(m)


# -- constructor invariants ---------------------------------------------------


def test_duplicate_metadata_key_rejected():
    with pytest.raises(ValueError):
        Message("s", "o", 0, 1, metadata=[("k", "1"), ("k", "2")])


def test_duplicate_payload_name_rejected():
    with pytest.raises(ValueError):
        Message("s", "o", 0, 1, payload=[("p", b"1"), ("p", b"2")])


def test_service_metadata_must_match_field():
    with pytest.raises(ValueError):
        Message("s", "o", 0, 1, metadata={"service": "other"})
    Message("s", "o", 0, 1, metadata={"service": "s"})  # agreeing is fine


def test_ref_must_resolve():
    with pytest.raises(ValueError):
        Message("s", "o", 0, 1, metadata={"icon": MetaValue.ref("missing")})


# -- signing --------------------------------------------------------------------


def test_sign_then_verify():
    ident = Identity.generate()
    m = Message("s", ident.fingerprint, 0, 100)
    signed = sign_message(m, ident)
    assert verify_message(signed, [ident.key_record()]) is VerifyResult.VERIFIED


_PROP_IDENT = Identity.generate()


@given(messages)
@settings(max_examples=150, deadline=None)
def test_sign_verify_property_holds_for_all_messages(msg):
    as_mine = Message(
        service=msg.service,
        originator=_PROP_IDENT.fingerprint,
        created_at=msg.created_at,
        ttl_seconds=msg.ttl_seconds,
        metadata=msg.metadata,
        payload=msg.payload,
    )
    signed = sign_message(as_mine, _PROP_IDENT)
    assert verify_message(signed, [_PROP_IDENT.key_record()]) is VerifyResult.VERIFIED


def test_verify_empty_keyset():
    ident = Identity.generate()
    signed = sign_message(Message("s", ident.fingerprint, 0, 100), ident)
    assert verify_message(signed, []) is VerifyResult.UNKNOWN_ORIGINATOR


def test_verify_after_mutation_is_bad_signature():
    ident = Identity.generate()
    signed = sign_message(
        Message("s", ident.fingerprint, 0, 100, metadata={"description": "a"}), ident
    )
    tampered = Message(
        service=signed.service,
        originator=signed.originator,
        created_at=signed.created_at,
        ttl_seconds=signed.ttl_seconds,
        metadata={"description": "b"},
        signature=signed.signature,
    )
    assert verify_message(tampered, [ident.key_record()]) is VerifyResult.BAD_SIGNATURE


def test_unsigned_with_known_key_is_bad_signature():
    ident = Identity.generate()
    m = Message("s", ident.fingerprint, 0, 100)
    assert verify_message(m, [ident.key_record()]) is VerifyResult.BAD_SIGNATURE


def test_signature_survives_roundtrip_and_id_ignores_it():
    ident = Identity.generate()
    m = Message("s", ident.fingerprint, 0, 100)
    signed = sign_message(m, ident)
    again = decode(encode_canonical(signed))
    assert again.signature == signed.signature
    assert again.id == m.id
    assert verify_message(again, [ident.key_record()]) is VerifyResult.VERIFIED


def test_key_record_fingerprint_checked():
    ident = Identity.generate()
    with pytest.raises(ValueError):
        KeyRecord(fingerprint="00" * 32, public_key=ident.public_key)
    rec = KeyRecord(
        fingerprint=fingerprint_of(ident.public_key), public_key=ident.public_key
    )
    assert rec.algorithm == "ed25519"


# -- expiry ------------------------------------------------------------------


def test_expiry_boundary_inclusive():
    m = Message("s", "o", 0, 5400)
    assert not is_expired(m, 5400)
    assert is_expired(m, 5401)


def test_zero_ttl_expires_immediately_after_creation():
    m = Message("s", "o", 100, 0)
    assert not is_expired(m, 100)
    assert is_expired(m, 101)


# -- validation -----------------------------------------------------------------


def make_scripted(content_type="image"):
    meta = {k: f"emit('x')  # {k}" for k in ("appSummary", "summary", "presentation", "new", "reply")}
    meta["contentType"] = content_type
    return Message("s", "o", 0, 1, metadata=meta)


def test_validate_fully_scripted_no_warnings():
    assert validate_metadata(make_scripted("image")) == []


def test_validate_missing_summary():
    m = Message("s", "o", 0, 1, metadata={"contentType": "image"})
    warnings = validate_metadata(m)
    assert any("no summary script" in w for w in warnings)


def test_validate_unknown_content_type():
    warnings = validate_metadata(make_scripted("hologram"))
    assert any("unknown contentType" in w and "other" in w for w in warnings)


def test_validate_reserved_case_variant():
    m = Message("s", "o", 0, 1, metadata={"contenttype": "image"})
    warnings = validate_metadata(m)
    assert any("reserved-namespace" in w for w in warnings)


def test_validate_never_rejects_unknown_keys():
    m = Message("s", "o", 0, 1, metadata={"x-custom": "anything"})
    warnings = validate_metadata(m)
    assert all("x-custom" not in w for w in warnings)


# -- decode robustness ------------------------------------------------------------


def test_decode_fuzz_never_crashes():
    rng = random.Random(1234)
    base = encode_canonical(golden_message())
    rejected = 0
    for _ in range(2000):
        data = bytearray(base)
        for _ in range(rng.randrange(1, 6)):
            op = rng.randrange(3)
            if op == 0 and data:
                data[rng.randrange(len(data))] = rng.randrange(256)
            elif op == 1 and data:
                del data[rng.randrange(len(data))]
            else:
                data.insert(rng.randrange(len(data) + 1), rng.randrange(256))
        try:
            decode(bytes(data))
        except DecodeError:
            rejected += 1
    assert rejected > 0  # sanity: mutations are actually being rejected


def test_decode_truncations_all_structured():
    data = encode_canonical(golden_message())
    for cut in range(len(data)):
        with pytest.raises(DecodeError):
            decode(data[:cut])


def test_decode_trailing_garbage():
    with pytest.raises(DecodeError):
        decode(encode_canonical(golden_message()) + b"\x00")


def test_describe_is_textual():
    text = describe(golden_message())
    assert GOLDEN_ID in text
    assert "body.txt" in text
