"""Simulated append-only SSI registry.

The ledger holds three kinds of entries: public-key records, identity NFT
mints and attestation records. Indices are derived from the log and can
always be rebuilt by replaying it, which is how :meth:`Ledger.loads` works.
There is no consensus layer; appends go through a single writer lock.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Iterable

from . import crypto
from .credentials import AttestationCertificate, wallet_address
from .encoding import as_str, decode_fields, encode
from .errors import EncodingError, LedgerError

KIND_KEY = "key"
KIND_MINT = "mint"
KIND_ATTEST = "attest"
KINDS = (KIND_KEY, KIND_MINT, KIND_ATTEST)


@dataclass(frozen=True)
class IdentityNft:
    nft_id: str
    owner: str
    minted_at: int


@dataclass(frozen=True)
class KeyRecord:
    owner: str
    identity_pub: bytes
    published_at: int
    proof: bytes
    rotation_proof: bytes = b""


@dataclass(frozen=True)
class AttestationRecord:
    cert: AttestationCertificate
    issuer: str
    subject_nft: str
    published_at: int


@dataclass(frozen=True)
class LedgerEntry:
    seq: int
    kind: str
    payload: bytes

    def to_line(self) -> str:
        return f"{self.seq}|{self.kind}|{self.payload.hex()}"


def key_record_message(wallet: str, identity_pub: bytes) -> bytes:
    return encode(b"metasim-key-record-v1", wallet, identity_pub)


def rotation_message(wallet: str, new_pub: bytes, previous_seq: int) -> bytes:
    return encode(b"metasim-key-rotation-v1", wallet, new_pub, previous_seq)


def nft_id_for(owner: str, seq: int) -> str:
    return crypto.digest(encode(b"metasim-nft", owner, seq)).hex()


class Ledger:
    def __init__(self) -> None:
        self._lock = threading.RLock()
        self._entries: list[LedgerEntry] = []
        self._keys: dict[str, list[KeyRecord]] = {}
        self._nfts: dict[str, IdentityNft] = {}
        self._nft_by_owner: dict[str, str] = {}
        self._attestations: dict[str, list[AttestationRecord]] = {}

    @property
    def head(self) -> int:
        """Sequence number of the newest entry; 0 for an empty ledger."""
        with self._lock:
            return self._entries[-1].seq if self._entries else 0

    @property
    def entries(self) -> tuple[LedgerEntry, ...]:
        with self._lock:
            return tuple(self._entries)

    def _append(self, kind: str, payload: bytes) -> int:
        seq = self.head + 1
        self._entries.append(LedgerEntry(seq, kind, payload))
        return seq

    # -- writes ---------------------------------------------------------

    def publish_key_record(
        self, wallet: str, identity_pub: bytes, proof: bytes, rotation_proof: bytes = b""
    ) -> int:
        """Append a self-attested public key for ``wallet``.

        The first record must be the wallet's root key (the address is its
        hash). Later records rotate the key and additionally need
        ``rotation_proof``: a signature by the currently published key.
        """
        with self._lock:
            if not crypto.verify(identity_pub, key_record_message(wallet, identity_pub), proof):
                raise LedgerError("bad-self-attestation")
            history = self._keys.get(wallet)
            if not history:
                if wallet_address(identity_pub) != wallet:
                    raise LedgerError("bad-self-attestation", "address is not the hash of the root key")
            else:
                previous = history[-1]
                message = rotation_message(wallet, identity_pub, previous.published_at)
                if not crypto.verify(previous.identity_pub, message, rotation_proof):
                    raise LedgerError("bad-rotation-proof")
            seq = self._append(KIND_KEY, encode(wallet, identity_pub, proof, rotation_proof))
            self._keys.setdefault(wallet, []).append(KeyRecord(wallet, identity_pub, seq, proof, rotation_proof))
            return seq

    def mint_identity_nft(self, wallet: str) -> IdentityNft:
        with self._lock:
            if wallet not in self._keys:
                raise LedgerError("unknown-wallet")
            if wallet in self._nft_by_owner:
                raise LedgerError("nft-exists")
            seq = self.head + 1
            nft = IdentityNft(nft_id_for(wallet, seq), wallet, seq)
            self._append(KIND_MINT, encode(nft.nft_id, wallet))
            self._nfts[nft.nft_id] = nft
            self._nft_by_owner[wallet] = nft.nft_id
            return nft

    def transfer_identity_nft(self, nft_id: str, new_owner: str):
        # Uniform rejection: does not reveal whether nft_id exists.
        raise LedgerError("soulbound-transfer-forbidden")

    def publish_attestation(self, cert: AttestationCertificate) -> int:
        """Publish a holder's certificate; the issuer's current key must verify it."""
        with self._lock:
            issuer_key = self._keys.get(cert.issuer_id)
            if (
                not issuer_key
                or cert.issued_at > self.head
                or not crypto.verify(issuer_key[-1].identity_pub, cert.signed_message(), cert.signature)
            ):
                raise LedgerError("bad-issuer-signature")
            subject = cert.claim.subject_nft
            if subject not in self._nfts:
                raise LedgerError("unknown-subject-nft")
            seq = self._append(KIND_ATTEST, encode(cert.to_bytes()))
            record = AttestationRecord(cert, cert.issuer_id, subject, seq)
            self._attestations.setdefault(subject, []).append(record)
            return seq

    # -- reads ----------------------------------------------------------

    def fetch_key_record(self, wallet: str, at: int | None = None) -> KeyRecord:
        """Latest key record for ``wallet``, optionally as of sequence ``at``."""
        with self._lock:
            history = self._keys.get(wallet, [])
            if at is not None:
                history = [r for r in history if r.published_at <= at]
            if not history:
                raise LedgerError("not-found", f"key record for {wallet}")
            return history[-1]

    def key_history(self, wallet: str) -> list[KeyRecord]:
        with self._lock:
            return list(self._keys.get(wallet, []))

    def resolve_nft(self, nft_id: str) -> IdentityNft:
        with self._lock:
            try:
                return self._nfts[nft_id]
            except KeyError:
                raise LedgerError("not-found", f"nft {nft_id}") from None

    def nft_of(self, wallet: str) -> IdentityNft:
        with self._lock:
            try:
                return self._nfts[self._nft_by_owner[wallet]]
            except KeyError:
                raise LedgerError("not-found", f"nft for {wallet}") from None

    def owner_key(self, nft_id: str) -> KeyRecord:
        """Current identity key of whoever holds ``nft_id``."""
        return self.fetch_key_record(self.resolve_nft(nft_id).owner)

    def fetch_attestations(self, nft_id: str) -> list[AttestationRecord]:
        with self._lock:
            if nft_id not in self._nfts:
                raise LedgerError("not-found", f"nft {nft_id}")
            return list(self._attestations.get(nft_id, []))

    def identity_nfts(self) -> list[IdentityNft]:
        with self._lock:
            return list(self._nfts.values())

    # -- persistence ----------------------------------------------------

    def index_bytes(self) -> bytes:
        """Canonical encoding of every derived index, for replay comparison."""
        with self._lock:
            keys = [
                encode(w, [encode(r.identity_pub, r.published_at, r.proof, r.rotation_proof) for r in recs])
                for w, recs in sorted(self._keys.items())
            ]
            nfts = [encode(n.nft_id, n.owner, n.minted_at) for _, n in sorted(self._nfts.items())]
            owners = [encode(w, n) for w, n in sorted(self._nft_by_owner.items())]
            attests = [
                encode(n, [encode(r.cert.to_bytes(), r.published_at) for r in recs])
                for n, recs in sorted(self._attestations.items())
            ]
            return encode(self.head, keys, nfts, owners, attests)

    def dumps(self) -> str:
        with self._lock:
            return "".join(e.to_line() + "\n" for e in self._entries)

    @classmethod
    def loads(cls, text: str) -> "Ledger":
        return cls.replay(_parse_lines(text.splitlines()))

    @classmethod
    def replay(cls, entries: Iterable[LedgerEntry]) -> "Ledger":
        """Rebuild a ledger by re-applying (and re-validating) every entry."""
        ledger = cls()
        for entry in entries:
            if entry.seq != ledger.head + 1:
                raise LedgerError("corrupt-log", f"sequence gap at {entry.seq}")
            try:
                ledger._apply(entry)
            except (EncodingError, LedgerError) as exc:
                if exc.code == "corrupt-log":
                    raise
                raise LedgerError("corrupt-log", f"seq {entry.seq}: {exc.code}") from None
        return ledger

    def _apply(self, entry: LedgerEntry) -> None:
        if entry.kind == KIND_KEY:
            wallet, pub, proof, rotation = decode_fields(entry.payload, expected=4)
            self.publish_key_record(as_str(wallet), pub, proof, rotation)
        elif entry.kind == KIND_MINT:
            nft_id, owner = decode_fields(entry.payload, expected=2)
            nft = self.mint_identity_nft(as_str(owner))
            if nft.nft_id != as_str(nft_id):
                raise LedgerError("corrupt-log", f"nft id mismatch at {entry.seq}")
        elif entry.kind == KIND_ATTEST:
            (blob,) = decode_fields(entry.payload, expected=1)
            self.publish_attestation(AttestationCertificate.from_bytes(blob))
        else:
            raise LedgerError("corrupt-log", f"unknown kind {entry.kind!r}")


def _parse_lines(lines: Iterable[str]) -> list[LedgerEntry]:
    entries = []
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        parts = line.split("|")
        if len(parts) != 3 or parts[1] not in KINDS:
            raise LedgerError("corrupt-log", f"line {lineno}")
        try:
            entries.append(LedgerEntry(int(parts[0]), parts[1], bytes.fromhex(parts[2])))
        except ValueError:
            raise LedgerError("corrupt-log", f"line {lineno}") from None
    return entries
