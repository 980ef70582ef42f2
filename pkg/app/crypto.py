import hashlib
import hmac
from dataclasses import dataclass
from typing import Protocol

import numpy as np
from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from app.exceptions import VolumeDecryptionError

NONCE_SIZE = 12


class Signer(Protocol):
    """Контракт подписи для CA и control plane."""
    name: str

    def sign(self, data: bytes) -> bytes: ...

    def verify(self, data: bytes, signature: bytes) -> bool: ...


class HmacSigner:
    """Тестовая схема на HMAC-SHA256. Годится для симуляции, не для защиты."""
    name = "hmac-sha256"

    def __init__(self, key: bytes):
        self._key = key

    def sign(self, data: bytes) -> bytes:
        return hmac.new(self._key, data, hashlib.sha256).digest()

    def verify(self, data: bytes, signature: bytes) -> bool:
        return hmac.compare_digest(self.sign(data), signature)


class Ed25519Signer:
    name = "ed25519"

    def __init__(self, private_key: Ed25519PrivateKey):
        self._private = private_key
        self._public = private_key.public_key()

    def sign(self, data: bytes) -> bytes:
        return self._private.sign(data)

    def verify(self, data: bytes, signature: bytes) -> bool:
        try:
            self._public.verify(signature, data)
            return True
        except InvalidSignature:
            return False


def _public_raw(public_key: Ed25519PublicKey) -> bytes:
    return public_key.public_bytes(
        encoding=serialization.Encoding.Raw,
        format=serialization.PublicFormat.Raw,
    )


def fingerprint(public_bytes: bytes) -> bytes:
    return hashlib.sha256(public_bytes).digest()


@dataclass(frozen=True)
class KeyPair:
    private_key: Ed25519PrivateKey
    public_bytes: bytes

    @property
    def fingerprint(self) -> bytes:
        return fingerprint(self.public_bytes)

    def prove(self, nonce: bytes) -> bytes:
        """Доказательство владения ключом для CSR."""
        return self.private_key.sign(nonce)


def generate_keypair(rng: np.random.Generator) -> KeyPair:
    private = Ed25519PrivateKey.from_private_bytes(rng.bytes(32))
    return KeyPair(private_key=private, public_bytes=_public_raw(private.public_key()))


def verify_proof(public_bytes: bytes, nonce: bytes, proof: bytes) -> bool:
    try:
        Ed25519PublicKey.from_public_bytes(public_bytes).verify(proof, nonce)
        return True
    except (InvalidSignature, ValueError):
        return False


def make_signer(scheme: str, rng: np.random.Generator) -> Signer:
    if scheme == "hmac":
        return HmacSigner(rng.bytes(32))
    if scheme == "ed25519":
        return Ed25519Signer(Ed25519PrivateKey.from_private_bytes(rng.bytes(32)))
    raise ValueError(f"неизвестная схема подписи: {scheme}")


def new_volume_key(rng: np.random.Generator) -> bytes:
    return rng.bytes(32)


def seal(key: bytes, plaintext: bytes, aad: bytes, rng: np.random.Generator) -> bytes:
    """AES-GCM: nonce || ciphertext+tag."""
    nonce = rng.bytes(NONCE_SIZE)
    return nonce + AESGCM(key).encrypt(nonce, plaintext, aad)


def unseal(key: bytes, blob: bytes, aad: bytes) -> bytes:
    try:
        return AESGCM(key).decrypt(blob[:NONCE_SIZE], blob[NONCE_SIZE:], aad)
    except (InvalidTag, ValueError) as e:
        raise VolumeDecryptionError("не удалось расшифровать blob") from e
