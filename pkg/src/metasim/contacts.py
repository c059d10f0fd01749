"""Avatar recognition: contact exchange, endorsements, impersonation checks.

Recognition decisions are made from the proven NFT only. Appearance is
consulted for one thing: noticing that a stranger looks exactly like a
saved contact, which is what an impersonator would try.
"""

from __future__ import annotations

import enum
import random
from dataclasses import dataclass, field
from typing import Mapping

from . import crypto
from .credentials import short_id
from .encoding import as_int, as_optional_str, as_str, decode_fields, decode_list, encode
from .errors import ContactError, LedgerError


class Verdict(str, enum.Enum):
    KNOWN = "known"
    UNKNOWN = "unknown"
    IMPERSONATION_WARNING = "IMPERSONATION_WARNING"


def appearance_bytes(appearance: Mapping[str, str]) -> bytes:
    return encode([encode(k, v) for k, v in sorted(appearance.items())])


def _decode_appearance(raw: bytes) -> dict[str, str]:
    (items,) = decode_fields(raw, expected=1)
    out = {}
    for item in decode_list(items):
        k, v = decode_fields(item, expected=2)
        out[as_str(k)] = as_str(v)
    return out


@dataclass
class AvatarProfile:
    nft_id: str
    display_name: str
    appearance: dict[str, str] = field(default_factory=dict)
    voice_tag: str = ""

    def to_bytes(self) -> bytes:
        return encode(self.nft_id, self.display_name, appearance_bytes(self.appearance), self.voice_tag)

    @classmethod
    def from_bytes(cls, data: bytes) -> "AvatarProfile":
        nft, name, appearance, voice = decode_fields(data, expected=4)
        return cls(as_str(nft), as_str(name), _decode_appearance(appearance), as_str(voice))


@dataclass(frozen=True)
class BindingProof:
    """Signature over a verifier nonce by the key the ledger binds to ``nft_id``."""

    nft_id: str
    nonce: int
    signature: bytes

    def to_bytes(self) -> bytes:
        return encode(self.nft_id, self.nonce, self.signature)


def binding_message(nft_id: str, nonce: int) -> bytes:
    return encode(b"metasim-nft-binding-v1", nft_id, nonce)


def prove_binding(wallet, nonce: int) -> BindingProof:
    nft_id = wallet.nft_id or ""
    return BindingProof(nft_id, nonce, wallet.sign(binding_message(nft_id, nonce)))


def verify_binding(proof: BindingProof, nonce: int, ledger) -> bool:
    if proof.nonce != nonce:
        return False
    try:
        key = ledger.owner_key(proof.nft_id)
    except LedgerError:
        return False
    return crypto.verify(key.identity_pub, binding_message(proof.nft_id, nonce), proof.signature)


def endorsement_message(subject_nft: str, book_owner_nft: str, endorser_nft: str) -> bytes:
    return encode(b"metasim-endorse-v1", subject_nft, book_owner_nft, endorser_nft)


@dataclass(frozen=True)
class Endorsement:
    endorser_nft: str
    signature: bytes


@dataclass
class ContactEntry:
    nft_id: str
    saved_label: str | None
    first_met: int
    appearance: dict[str, str] = field(default_factory=dict)
    endorsements: list[Endorsement] = field(default_factory=list)

    @property
    def label(self) -> str:
        return self.saved_label or short_id(self.nft_id)

    def verified_endorsements(self, book_owner_nft: str, ledger) -> list[Endorsement]:
        good = []
        for e in self.endorsements:
            try:
                key = ledger.owner_key(e.endorser_nft)
            except LedgerError:
                continue
            if crypto.verify(key.identity_pub, endorsement_message(self.nft_id, book_owner_nft, e.endorser_nft), e.signature):
                good.append(e)
        return good

    def to_bytes(self) -> bytes:
        return encode(
            self.nft_id,
            self.saved_label,
            self.first_met,
            appearance_bytes(self.appearance),
            [encode(e.endorser_nft, e.signature) for e in self.endorsements],
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "ContactEntry":
        nft, label, first_met, appearance, endorsements = decode_fields(data, expected=5)
        parsed = []
        for raw in decode_list(endorsements):
            endorser, sig = decode_fields(raw, expected=2)
            parsed.append(Endorsement(as_str(endorser), sig))
        return cls(as_str(nft), as_optional_str(label), as_int(first_met), _decode_appearance(appearance), parsed)


class ContactBook:
    def __init__(self) -> None:
        self.entries: dict[str, ContactEntry] = {}

    def __contains__(self, nft_id: object) -> bool:
        return nft_id in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def get(self, nft_id: str) -> ContactEntry | None:
        return self.entries.get(nft_id)

    def to_bytes(self) -> bytes:
        return encode([e.to_bytes() for _, e in sorted(self.entries.items())])

    @classmethod
    def from_bytes(cls, data: bytes) -> "ContactBook":
        book = cls()
        (items,) = decode_fields(data, expected=1)
        for raw in decode_list(items):
            entry = ContactEntry.from_bytes(raw)
            book.entries[entry.nft_id] = entry
        return book


def exchange_contacts(a_wallet, b_wallet, ledger, rng: random.Random | None = None, now: int = 0):
    """Mutually verify NFT bindings and save each other as contacts.

    Each side challenges the other with a fresh nonce. Repeating an exchange
    leaves existing entries (label, first_met) untouched.
    """
    rng = rng or random.SystemRandom()
    nonce_for_b, nonce_for_a = rng.getrandbits(64), rng.getrandbits(64)
    proof_b = prove_binding(b_wallet, nonce_for_b)
    proof_a = prove_binding(a_wallet, nonce_for_a)
    if not (verify_binding(proof_b, nonce_for_b, ledger) and verify_binding(proof_a, nonce_for_a, ledger)):
        raise ContactError("binding-proof-failed")
    return _save(a_wallet, b_wallet, now), _save(b_wallet, a_wallet, now)


def _save(owner, other, now: int) -> ContactEntry:
    entry = owner.contacts.get(other.nft_id)
    if entry is None:
        avatar = other.avatar
        entry = ContactEntry(
            nft_id=other.nft_id,
            saved_label=avatar.display_name if avatar else None,
            first_met=now,
            appearance=dict(avatar.appearance) if avatar else {},
        )
        owner.contacts.entries[other.nft_id] = entry
    return entry


def endorse_contact(endorser_wallet, subject_nft: str, target_wallet) -> ContactEntry:
    """Endorser vouches for ``subject_nft`` inside the target's contact book.

    Only annotates an entry the target already has; never creates one.
    """
    target_nft = target_wallet.nft_id
    book = endorser_wallet.contacts
    if subject_nft not in book or target_nft not in book:
        raise ContactError("not-mutual-contact")
    entry = target_wallet.contacts.get(subject_nft)
    if entry is None:
        raise ContactError("not-mutual-contact", "target has no entry for subject")
    endorser_nft = endorser_wallet.nft_id
    sig = endorser_wallet.sign(endorsement_message(subject_nft, target_nft, endorser_nft))
    entry.endorsements = [e for e in entry.endorsements if e.endorser_nft != endorser_nft]
    entry.endorsements.append(Endorsement(endorser_nft, sig))
    return entry


@dataclass(frozen=True)
class RecognitionResult:
    verdict: Verdict
    label: str | None = None


def recognize_avatar(
    observer_book: ContactBook,
    encountered: AvatarProfile,
    proof: BindingProof | None,
    nonce: int,
    ledger,
) -> RecognitionResult:
    proven = (
        proof is not None
        and proof.nft_id == encountered.nft_id
        and verify_binding(proof, nonce, ledger)
    )
    if proven:
        entry = observer_book.get(encountered.nft_id)
        if entry is not None:
            return RecognitionResult(Verdict.KNOWN, entry.label)
    # an empty map carries no appearance to copy
    look_alike = bool(encountered.appearance) and any(
        e.appearance == encountered.appearance for e in observer_book.entries.values()
    )
    label = short_id(encountered.nft_id) if proven else None
    if look_alike:
        return RecognitionResult(Verdict.IMPERSONATION_WARNING, label)
    return RecognitionResult(Verdict.UNKNOWN, label)
