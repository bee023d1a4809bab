"""Store-carry-forward web node toolkit.

Self-contained messages carry both application data and the scripts that
render it; nodes spread them epidemically during pairwise contacts and
serve them to browsers through a sandboxed transformation pipeline.
"""

from oppweb.message import (
    DecodeError,
    EncodeError,
    Message,
    MetaValue,
    VerifyResult,
    compute_id,
    decode,
    encode_canonical,
    is_expired,
    sign_message,
    verify_message,
)
from oppweb.keys import Identity, KeyRecord
from oppweb.store import CacheStore, InsertResult

__all__ = [
    "CacheStore",
    "DecodeError",
    "EncodeError",
    "Identity",
    "InsertResult",
    "KeyRecord",
    "Message",
    "MetaValue",
    "VerifyResult",
    "compute_id",
    "decode",
    "encode_canonical",
    "is_expired",
    "sign_message",
    "verify_message",
]
