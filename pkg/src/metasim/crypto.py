"""Cryptographic primitives and the three-leg X3DH handshake.

All functions are pure. The concrete algorithms come from a provider:

``default``
    X25519 + Ed25519 + ChaCha20-Poly1305 + HKDF-SHA256 (``cryptography``).
``test``
    Standard-library only: a 256-bit safe-prime group for DH and Schnorr
    signatures, HMAC-SHA256 counter-mode AEAD, RFC 5869 HKDF. Small enough
    that tests can recompute every value with ``pow`` and ``hmac``.

The active provider is taken from ``METASIM_PROVIDER`` (``test`` or
``default``) unless overridden with :func:`use_provider`.
"""

from __future__ import annotations

import contextlib
import contextvars
import hashlib
import hmac
import os
from dataclasses import dataclass
from typing import Iterator, Sequence

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey
from cryptography.hazmat.primitives.asymmetric.x25519 import X25519PrivateKey, X25519PublicKey
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from .encoding import U64, encode
from .errors import CryptoError

SEED_LEN = 32
HASH_LEN = 32
KEY_LEN = 32
NONCE_LEN = 12
X3DH_INFO = b"metaverse-x3dh-v1"
MSG_INFO = b"metaverse-msg-v1"


@dataclass(frozen=True)
class KeyPair:
    private_key: bytes
    public_key: bytes

    def __repr__(self) -> str:
        # keep private material out of logs and tracebacks
        return f"KeyPair(public_key={self.public_key.hex()[:16]}...)"


def digest(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def hkdf_sha256(ikm: bytes, info: bytes, length: int, salt: bytes = b"") -> bytes:
    """RFC 5869 HKDF with SHA-256, written against ``hmac`` only."""
    prk = hmac.new(salt or bytes(HASH_LEN), ikm, hashlib.sha256).digest()
    out = b""
    block = b""
    counter = 1
    while len(out) < length:
        block = hmac.new(prk, block + info + bytes([counter]), hashlib.sha256).digest()
        out += block
        counter += 1
    return out[:length]


class DefaultProvider:
    name = "default"
    public_len = 64  # x25519 half || ed25519 half
    signature_len = 64

    @staticmethod
    def _halves(seed: bytes) -> tuple[bytes, bytes]:
        wide = hashlib.sha512(b"metasim-keypair" + seed).digest()
        return wide[:32], wide[32:]

    def keypair(self, seed: bytes) -> KeyPair:
        dh_secret, sig_secret = self._halves(seed)
        dh_pub = X25519PrivateKey.from_private_bytes(dh_secret).public_key().public_bytes_raw()
        sig_pub = Ed25519PrivateKey.from_private_bytes(sig_secret).public_key().public_bytes_raw()
        return KeyPair(private_key=bytes(seed), public_key=dh_pub + sig_pub)

    def valid_public(self, public: bytes) -> bool:
        return len(public) == self.public_len and any(public[:32])

    def dh(self, private: bytes, public: bytes) -> bytes:
        if not self.valid_public(public):
            raise CryptoError("bad-public-key")
        dh_secret, _ = self._halves(private)
        try:
            return X25519PrivateKey.from_private_bytes(dh_secret).exchange(
                X25519PublicKey.from_public_bytes(public[:32])
            )
        except ValueError:
            # low-order point: all-zero shared secret
            raise CryptoError("bad-public-key") from None

    def sign(self, private: bytes, message: bytes) -> bytes:
        _, sig_secret = self._halves(private)
        return Ed25519PrivateKey.from_private_bytes(sig_secret).sign(message)

    def verify(self, public: bytes, message: bytes, signature: bytes) -> bool:
        if len(public) != self.public_len or len(signature) != self.signature_len:
            return False
        try:
            Ed25519PublicKey.from_public_bytes(public[32:]).verify(signature, message)
        except (InvalidSignature, ValueError):
            return False
        return True

    def hkdf(self, ikm: bytes, info: bytes, length: int) -> bytes:
        return HKDF(algorithm=hashes.SHA256(), length=length, salt=bytes(HASH_LEN), info=info).derive(ikm)

    def seal(self, key: bytes, nonce: bytes, plaintext: bytes, aad: bytes) -> bytes:
        return ChaCha20Poly1305(key).encrypt(nonce, plaintext, aad)

    def open(self, key: bytes, nonce: bytes, ciphertext: bytes, aad: bytes) -> bytes:
        try:
            return ChaCha20Poly1305(key).decrypt(nonce, ciphertext, aad)
        except InvalidTag:
            raise CryptoError("aead-auth-fail") from None


# 256-bit safe prime p = 2q + 1; 4 generates the order-q subgroup.
TEST_P = 0xC2E2323A3459D8DE38C10F7DBE48EF9C28831A6DCDA2C215888F1E32AF6C13E3
TEST_Q = (TEST_P - 1) // 2
TEST_G = 4


class TestProvider:
    """Deterministic toy provider. Not secure; for oracle tests and vectors."""

    __test__ = False  # not a pytest class
    name = "test"
    public_len = 32
    signature_len = 64
    tag_len = 16

    @staticmethod
    def _scalar(private: bytes) -> int:
        return int.from_bytes(private, "big")

    @staticmethod
    def _element(value: int) -> bytes:
        return value.to_bytes(32, "big")

    @staticmethod
    def _hash_to_scalar(*parts: bytes) -> int:
        return int.from_bytes(digest(encode(*parts)), "big") % TEST_Q

    def keypair(self, seed: bytes) -> KeyPair:
        x = int.from_bytes(digest(b"metasim-test-key" + seed), "big") % (TEST_Q - 1) + 1
        return KeyPair(private_key=self._element(x), public_key=self._element(pow(TEST_G, x, TEST_P)))

    def valid_public(self, public: bytes) -> bool:
        if len(public) != self.public_len:
            return False
        y = int.from_bytes(public, "big")
        return 1 < y < TEST_P and pow(y, TEST_Q, TEST_P) == 1

    def dh(self, private: bytes, public: bytes) -> bytes:
        if not self.valid_public(public):
            raise CryptoError("bad-public-key")
        return self._element(pow(int.from_bytes(public, "big"), self._scalar(private), TEST_P))

    def sign(self, private: bytes, message: bytes) -> bytes:
        x = self._scalar(private)
        pub = self._element(pow(TEST_G, x, TEST_P))
        k = self._hash_to_scalar(b"nonce", private, message) or 1
        r = self._element(pow(TEST_G, k, TEST_P))
        e = self._hash_to_scalar(r, pub, message)
        s = (k + e * x) % TEST_Q
        return e.to_bytes(32, "big") + s.to_bytes(32, "big")

    def verify(self, public: bytes, message: bytes, signature: bytes) -> bool:
        if len(signature) != self.signature_len or not self.valid_public(public):
            return False
        e = int.from_bytes(signature[:32], "big")
        s = int.from_bytes(signature[32:], "big")
        if e >= TEST_Q or s >= TEST_Q:
            return False
        y = int.from_bytes(public, "big")
        r = pow(TEST_G, s, TEST_P) * pow(y, TEST_Q - e, TEST_P) % TEST_P
        return self._hash_to_scalar(self._element(r), public, message) == e

    def hkdf(self, ikm: bytes, info: bytes, length: int) -> bytes:
        return hkdf_sha256(ikm, info, length)

    def _keystream(self, key: bytes, nonce: bytes, length: int) -> bytes:
        enc_key = hmac.new(key, b"enc", hashlib.sha256).digest()
        blocks = (length + HASH_LEN - 1) // HASH_LEN
        stream = b"".join(
            hmac.new(enc_key, nonce + i.to_bytes(4, "big"), hashlib.sha256).digest() for i in range(blocks)
        )
        return stream[:length]

    def _tag(self, key: bytes, nonce: bytes, body: bytes, aad: bytes) -> bytes:
        mac_key = hmac.new(key, b"mac", hashlib.sha256).digest()
        return hmac.new(mac_key, encode(nonce, aad, body), hashlib.sha256).digest()[: self.tag_len]

    def seal(self, key: bytes, nonce: bytes, plaintext: bytes, aad: bytes) -> bytes:
        body = bytes(a ^ b for a, b in zip(plaintext, self._keystream(key, nonce, len(plaintext))))
        return body + self._tag(key, nonce, body, aad)

    def open(self, key: bytes, nonce: bytes, ciphertext: bytes, aad: bytes) -> bytes:
        if len(ciphertext) < self.tag_len:
            raise CryptoError("aead-auth-fail")
        body, tag = ciphertext[: -self.tag_len], ciphertext[-self.tag_len:]
        if not hmac.compare_digest(tag, self._tag(key, nonce, body, aad)):
            raise CryptoError("aead-auth-fail")
        return bytes(a ^ b for a, b in zip(body, self._keystream(key, nonce, len(body))))


PROVIDERS = {"default": DefaultProvider(), "test": TestProvider()}

_active: contextvars.ContextVar = contextvars.ContextVar("metasim_provider", default=None)


def get_provider(name: str | None = None):
    if name is None:
        current = _active.get()
        if current is not None:
            return current
        name = os.environ.get("METASIM_PROVIDER", "default")
    try:
        return PROVIDERS[name]
    except KeyError:
        raise CryptoError("unknown-provider", name) from None


@contextlib.contextmanager
def use_provider(name: str) -> Iterator[object]:
    token = _active.set(get_provider(name))
    try:
        yield _active.get()
    finally:
        _active.reset(token)


def generate_keypair(seed: bytes) -> KeyPair:
    if not isinstance(seed, (bytes, bytearray)) or len(seed) != SEED_LEN:
        raise CryptoError("bad-seed", f"need {SEED_LEN} bytes")
    return get_provider().keypair(bytes(seed))


def valid_public_key(public: bytes) -> bool:
    return get_provider().valid_public(public)


def dh(my_private: bytes, peer_public: bytes) -> bytes:
    return get_provider().dh(my_private, peer_public)


def sign(private: bytes, message: bytes) -> bytes:
    return get_provider().sign(private, message)


def verify(public: bytes, message: bytes, signature: bytes) -> bool:
    return get_provider().verify(public, message, signature)


def kdf(inputs: Sequence[bytes], info: bytes, out_len: int) -> bytes:
    """HKDF-SHA256 over the canonical encoding of ``inputs``.

    Length prefixes make the input list unambiguous, so ``[b"ab", b"c"]`` and
    ``[b"a", b"bc"]`` derive different keys.
    """
    if not inputs:
        raise CryptoError("kdf-empty")
    if not 0 < out_len <= 255 * HASH_LEN:
        raise CryptoError("kdf-length", str(out_len))
    return get_provider().hkdf(encode(*inputs), info, out_len)


def counter_nonce(counter: int) -> bytes:
    """12-byte AEAD nonce: four zero bytes then the big-endian counter."""
    return bytes(4) + U64.pack(counter)


def _check_aead_args(key: bytes, nonce: bytes) -> None:
    if len(key) != KEY_LEN:
        raise CryptoError("bad-key-length")
    if len(nonce) != NONCE_LEN:
        raise CryptoError("bad-nonce-length")


def aead_seal(key: bytes, nonce: bytes, plaintext: bytes, aad: bytes) -> bytes:
    _check_aead_args(key, nonce)
    return get_provider().seal(key, nonce, plaintext, aad)


def aead_open(key: bytes, nonce: bytes, ciphertext: bytes, aad: bytes) -> bytes:
    _check_aead_args(key, nonce)
    return get_provider().open(key, nonce, ciphertext, aad)


def x3dh_initiator(
    my_identity: KeyPair,
    my_ephemeral: KeyPair,
    peer_identity_pub: bytes,
    peer_signed_prekey_pub: bytes,
) -> bytes:
    """Session secret from the requester's side.

    Legs, in order: DH(IK_a, SPK_b), DH(EK_a, IK_b), DH(EK_a, SPK_b).
    """
    legs = [
        dh(my_identity.private_key, peer_signed_prekey_pub),
        dh(my_ephemeral.private_key, peer_identity_pub),
        dh(my_ephemeral.private_key, peer_signed_prekey_pub),
    ]
    return kdf(legs, X3DH_INFO, KEY_LEN)


def x3dh_responder(
    my_identity: KeyPair,
    my_signed_prekey: KeyPair,
    peer_identity_pub: bytes,
    peer_ephemeral_pub: bytes,
) -> bytes:
    """Mirror of :func:`x3dh_initiator`; legs transposed to the same order."""
    legs = [
        dh(my_signed_prekey.private_key, peer_identity_pub),
        dh(my_identity.private_key, peer_ephemeral_pub),
        dh(my_signed_prekey.private_key, peer_ephemeral_pub),
    ]
    return kdf(legs, X3DH_INFO, KEY_LEN)
