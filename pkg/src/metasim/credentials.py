"""Addresses, predicate claims and attestation certificates."""

from __future__ import annotations

from dataclasses import dataclass

from . import crypto
from .encoding import as_int, as_str, decode_fields, encode
from .errors import LedgerError, WalletError

ADDRESS_HEX_LEN = 64

# Closed predicate vocabulary. Claims name a predicate, never a raw attribute.
PREDICATES: set[str] = {"age_over_18", "world_member", "kyc_verified"}


def register_predicate(name: str) -> None:
    if not name or not name.replace("_", "").isalnum():
        raise WalletError("unknown-predicate", name)
    PREDICATES.add(name)


def wallet_address(root_public_key: bytes) -> str:
    """Lowercase hex SHA-256 of the wallet's root public key."""
    return crypto.digest(b"metasim-address" + root_public_key).hex()


def short_id(nft_id: str) -> str:
    return nft_id[:8]


@dataclass(frozen=True)
class Claim:
    predicate: str
    subject_nft: str


@dataclass(frozen=True)
class AttestationCertificate:
    claim: Claim
    issuer_id: str
    issued_at: int
    signature: bytes

    @staticmethod
    def signing_bytes(claim: Claim, issuer_id: str, issued_at: int) -> bytes:
        return encode(b"metasim-cert-v1", claim.predicate, claim.subject_nft, issuer_id, issued_at)

    def signed_message(self) -> bytes:
        return self.signing_bytes(self.claim, self.issuer_id, self.issued_at)

    def to_bytes(self) -> bytes:
        return encode(self.claim.predicate, self.claim.subject_nft, self.issuer_id, self.issued_at, self.signature)

    @classmethod
    def from_bytes(cls, data: bytes) -> "AttestationCertificate":
        predicate, subject, issuer, issued_at, signature = decode_fields(data, expected=5)
        return cls(
            claim=Claim(as_str(predicate), as_str(subject)),
            issuer_id=as_str(issuer),
            issued_at=as_int(issued_at),
            signature=signature,
        )

    def fingerprint(self) -> bytes:
        return crypto.digest(self.to_bytes())


def verify_certificate(cert: AttestationCertificate, ledger) -> bool:
    """Check the issuer signature against the issuer key pinned at ``issued_at``.

    Later key rotations by the issuer do not affect the result.
    """
    if cert.claim.predicate not in PREDICATES:
        return False
    try:
        record = ledger.fetch_key_record(cert.issuer_id, at=cert.issued_at)
    except LedgerError:
        return False
    return crypto.verify(record.identity_pub, cert.signed_message(), cert.signature)
