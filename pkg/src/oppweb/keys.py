"""Signing identities and public-key records.

The signature scheme is a pluggable slot; Ed25519 is the default and the
only algorithm registered out of the box. Key records are themselves
distributed as ordinary messages under the "keys" service, so peers learn
verification keys through the same dissemination path as content.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

DEFAULT_ALGORITHM = "ed25519"


def fingerprint_of(public_key: bytes) -> str:
    """Hex digest identifying a public key (and thus an originator)."""
    return hashlib.sha256(public_key).hexdigest()


@dataclass(frozen=True)
class KeyRecord:
    """A verification key as it travels through the network."""

    fingerprint: str
    public_key: bytes
    algorithm: str = DEFAULT_ALGORITHM

    def __post_init__(self):
        if self.fingerprint != fingerprint_of(self.public_key):
            raise ValueError("fingerprint does not match public key digest")

    def verify(self, body: bytes, signature: bytes) -> bool:
        impl = _ALGORITHMS.get(self.algorithm)
        if impl is None:
            return False
        return impl.verify(self.public_key, body, signature)


@dataclass(frozen=True)
class Identity:
    """A private signing key plus its derived fingerprint."""

    private_key: bytes
    public_key: bytes
    algorithm: str = DEFAULT_ALGORITHM

    @property
    def fingerprint(self) -> str:
        return fingerprint_of(self.public_key)

    @classmethod
    def generate(cls, algorithm: str = DEFAULT_ALGORITHM) -> "Identity":
        impl = _require(algorithm)
        private_key, public_key = impl.generate()
        return cls(private_key=private_key, public_key=public_key, algorithm=algorithm)

    @classmethod
    def from_private_bytes(cls, private_key: bytes, algorithm: str = DEFAULT_ALGORITHM) -> "Identity":
        public_key = _require(algorithm).public_from_private(private_key)
        return cls(private_key=private_key, public_key=public_key, algorithm=algorithm)

    def sign(self, body: bytes) -> bytes:
        return _require(self.algorithm).sign(self.private_key, body)

    def key_record(self) -> KeyRecord:
        return KeyRecord(
            fingerprint=self.fingerprint,
            public_key=self.public_key,
            algorithm=self.algorithm,
        )

    # -- key file persistence ------------------------------------------------

    def save(self, path: str) -> None:
        data = (
            f"algorithm = {self.algorithm}\n"
            f"private = {self.private_key.hex()}\n"
            f"public = {self.public_key.hex()}\n"
        )
        tmp = path + ".tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write(data)
        os.replace(tmp, path)
        try:
            os.chmod(path, 0o600)
        except OSError:
            pass

    @classmethod
    def load(cls, path: str) -> "Identity":
        fields = {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line or line.startswith("#") or "=" not in line:
                    continue
                key, _, value = line.partition("=")
                fields[key.strip()] = value.strip()
        try:
            return cls(
                private_key=bytes.fromhex(fields["private"]),
                public_key=bytes.fromhex(fields["public"]),
                algorithm=fields.get("algorithm", DEFAULT_ALGORITHM),
            )
        except (KeyError, ValueError) as exc:
            raise ValueError(f"malformed identity file {path!r}: {exc}") from exc


class _Ed25519:
    @staticmethod
    def generate() -> tuple[bytes, bytes]:
        key = Ed25519PrivateKey.generate()
        return key.private_bytes_raw(), key.public_key().public_bytes_raw()

    @staticmethod
    def public_from_private(private_key: bytes) -> bytes:
        key = Ed25519PrivateKey.from_private_bytes(private_key)
        return key.public_key().public_bytes_raw()

    @staticmethod
    def sign(private_key: bytes, body: bytes) -> bytes:
        return Ed25519PrivateKey.from_private_bytes(private_key).sign(body)

    @staticmethod
    def verify(public_key: bytes, body: bytes, signature: bytes) -> bool:
        try:
            Ed25519PublicKey.from_public_bytes(public_key).verify(signature, body)
            return True
        except (InvalidSignature, ValueError):
            return False


_ALGORITHMS: dict[str, type] = {DEFAULT_ALGORITHM: _Ed25519}


def register_algorithm(name: str, impl: type) -> None:
    """Install another signature scheme (generate/sign/verify statics)."""
    _ALGORITHMS[name] = impl


def _require(name: str):
    impl = _ALGORITHMS.get(name)
    if impl is None:
        raise ValueError(f"unknown signature algorithm {name!r}")
    return impl
