"""Cryptographic primitives: signing, authenticated encryption, pseudonyms.

Thin wrappers over the ``cryptography`` package (Ed25519, AES-GCM) plus
stdlib HMAC for keyed pseudonyms. All key material can be derived from a
seeded RNG so that complete runs are reproducible; production entry
points seed from ``secrets`` instead.
"""

from __future__ import annotations

import hashlib
import hmac
import random
import secrets

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .errors import IntegrityError

GENESIS_HASH = "0" * 64

AEAD_NONCE_LEN = 12
AEAD_KEY_LEN = 32


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


class DeterministicRng:
    """Seeded source for key material, nonces and identifiers.

    Not a CSPRNG; determinism is the point. Use ``DeterministicRng.system()``
    when reproducibility is not required.
    """

    def __init__(self, seed: int | str | bytes):
        self._rng = random.Random(seed)

    @classmethod
    def system(cls) -> "DeterministicRng":
        return cls(secrets.token_bytes(32))

    def bytes(self, n: int) -> bytes:
        return self._rng.getrandbits(8 * n).to_bytes(n, "big") if n else b""

    def hex(self, n: int = 16) -> str:
        """n random bytes rendered as 2n hex chars."""
        return self.bytes(n).hex()

    def fork(self, label: str) -> "DeterministicRng":
        """Independent child stream; stable for a given (seed, label)."""
        return DeterministicRng(self.bytes(16) + label.encode("utf-8"))

    def randint(self, a: int, b: int) -> int:
        return self._rng.randint(a, b)

    def choice(self, seq):
        return self._rng.choice(seq)

    def shuffle(self, seq) -> None:
        self._rng.shuffle(seq)


class SigningKey:
    """Ed25519 signing key with a hex-encoded public identity."""

    def __init__(self, private_bytes: bytes):
        if len(private_bytes) != 32:
            raise ValueError("ed25519 private keys are 32 bytes")
        self._key = Ed25519PrivateKey.from_private_bytes(private_bytes)
        self.verify_key_hex = (
            self._key.public_key().public_bytes_raw().hex()
        )

    @classmethod
    def generate(cls, rng: DeterministicRng) -> "SigningKey":
        return cls(rng.bytes(32))

    @classmethod
    def derive(cls, secret: bytes, label: str) -> "SigningKey":
        """Deterministic sub-key: HMAC(secret, label) as the private seed."""
        seed = hmac.new(secret, label.encode("utf-8"), hashlib.sha256).digest()
        return cls(seed)

    def sign_hex(self, message: bytes) -> str:
        return self._key.sign(message).hex()


def verify_signature(verify_key_hex: str, message: bytes, signature_hex: str) -> bool:
    try:
        key = Ed25519PublicKey.from_public_bytes(bytes.fromhex(verify_key_hex))
        key.verify(bytes.fromhex(signature_hex), message)
        return True
    except (InvalidSignature, ValueError):
        return False


def aead_encrypt(key: bytes, nonce: bytes, plaintext: bytes, aad: bytes = b"") -> bytes:
    """AES-256-GCM; any post-hoc ciphertext mutation fails decryption."""
    return AESGCM(key).encrypt(nonce, plaintext, aad)


def aead_decrypt(key: bytes, nonce: bytes, ciphertext: bytes, aad: bytes = b"") -> bytes:
    try:
        return AESGCM(key).decrypt(nonce, ciphertext, aad)
    except InvalidTag as exc:
        raise IntegrityError("authenticated decryption failed") from exc


def keyed_pseudonym(epoch_key: bytes, value: str) -> str:
    """Deterministic per-epoch pseudonym; unrelated across distinct keys."""
    digest = hmac.new(epoch_key, value.encode("utf-8"), hashlib.sha256).hexdigest()
    return "p-" + digest[:12]


def chain_hash(prev_hash_hex: str, body: bytes) -> str:
    """Hash-chain step: H(prev_hash_bytes || body)."""
    return sha256_hex(bytes.fromhex(prev_hash_hex) + body)
