"""Holder/issuer agent: key custody, prekey bundles, credentials, presentations."""

from __future__ import annotations

import random
from dataclasses import dataclass

from . import crypto
from .contacts import AvatarProfile, ContactBook
from .credentials import PREDICATES, AttestationCertificate, Claim, verify_certificate, wallet_address
from .encoding import as_int, as_str, decode_fields, decode_list, encode
from .errors import CryptoError, EncodingError, LedgerError, WalletError
from .ledger import IdentityNft, Ledger, key_record_message, rotation_message

MAX_PREKEYS = 100


@dataclass(frozen=True)
class PrekeyEntry:
    prekey_id: int
    prekey_pub: bytes
    signature: bytes


def prekey_message(prekey_id: int, prekey_pub: bytes, owner_nft: str) -> bytes:
    return encode(b"metasim-prekey-v1", prekey_id, prekey_pub, owner_nft)


@dataclass(frozen=True)
class SignedPrekeyBundle:
    owner_nft: str
    entries: tuple[PrekeyEntry, ...]

    def entry_valid(self, entry: PrekeyEntry, identity_pub: bytes) -> bool:
        return crypto.verify(identity_pub, prekey_message(entry.prekey_id, entry.prekey_pub, self.owner_nft), entry.signature)

    def to_bytes(self) -> bytes:
        return encode(self.owner_nft, [encode(e.prekey_id, e.prekey_pub, e.signature) for e in self.entries])

    @classmethod
    def from_bytes(cls, data: bytes) -> "SignedPrekeyBundle":
        owner, entries = decode_fields(data, expected=2)
        parsed = []
        for raw in decode_list(entries):
            pid, pub, sig = decode_fields(raw, expected=3)
            parsed.append(PrekeyEntry(as_int(pid), pub, sig))
        return cls(as_str(owner), tuple(parsed))


@dataclass(frozen=True)
class Presentation:
    cert: AttestationCertificate
    holder_nft: str
    nonce: int
    holder_signature: bytes

    @staticmethod
    def signing_bytes(cert: AttestationCertificate, holder_nft: str, nonce: int) -> bytes:
        return encode(b"metasim-presentation-v1", cert.fingerprint(), holder_nft, nonce)

    def to_bytes(self) -> bytes:
        return encode(self.cert.to_bytes(), self.holder_nft, self.nonce, self.holder_signature)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Presentation":
        cert, holder, nonce, sig = decode_fields(data, expected=4)
        return cls(AttestationCertificate.from_bytes(cert), as_str(holder), as_int(nonce), sig)


@dataclass(frozen=True)
class PresentationCheck:
    ok: bool
    reason: str = "ok"

    def __bool__(self) -> bool:
        return self.ok


class Wallet:
    """A single user's (or trusted party's) agent.

    Not thread-safe: one wallet belongs to one actor at a time.
    """

    def __init__(self, seed: bytes):
        self.identity_keypair = crypto.generate_keypair(seed)
        self.address = wallet_address(self.identity_keypair.public_key)
        self._seed = bytes(seed)
        self.nft: IdentityNft | None = None
        self.held_certs: list[AttestationCertificate] = []
        self.prekeys: dict[int, crypto.KeyPair] = {}
        self._next_prekey_id = 1
        self.contacts = ContactBook()
        self.avatar: AvatarProfile | None = None

    def __repr__(self) -> str:
        return f"Wallet({self.address[:12]}...)"

    @property
    def nft_id(self) -> str | None:
        return self.nft.nft_id if self.nft else None

    def sign(self, message: bytes) -> bytes:
        return crypto.sign(self.identity_keypair.private_key, message)

    def publish_key(self, ledger: Ledger) -> int:
        pub = self.identity_keypair.public_key
        return ledger.publish_key_record(self.address, pub, self.sign(key_record_message(self.address, pub)))

    def mint(self, ledger: Ledger) -> IdentityNft:
        self.nft = ledger.mint_identity_nft(self.address)
        return self.nft

    def register(self, ledger: Ledger) -> IdentityNft:
        """Publish the root key and mint the identity NFT in one go."""
        self.publish_key(ledger)
        return self.mint(ledger)

    def rotate_key(self, new_seed: bytes, ledger: Ledger) -> int:
        new = crypto.generate_keypair(new_seed)
        previous = ledger.fetch_key_record(self.address)
        proof = crypto.sign(new.private_key, key_record_message(self.address, new.public_key))
        authorization = self.sign(rotation_message(self.address, new.public_key, previous.published_at))
        seq = ledger.publish_key_record(self.address, new.public_key, proof, authorization)
        self.identity_keypair = new
        return seq

    def add_cert(self, cert: AttestationCertificate) -> None:
        if cert not in self.held_certs:
            self.held_certs.append(cert)

    def certs_for(self, predicate: str) -> list[AttestationCertificate]:
        return [c for c in self.held_certs if c.claim.predicate == predicate and c.claim.subject_nft == self.nft_id]

    def public_view(self) -> dict:
        """Everything about this wallet that may leave the device."""
        return {
            "address": self.address,
            "identity_pub": self.identity_keypair.public_key.hex(),
            "nft_id": self.nft_id,
            "certs": [c.to_bytes().hex() for c in self.held_certs],
            "prekeys": {str(i): kp.public_key.hex() for i, kp in sorted(self.prekeys.items())},
        }

    def secret_material(self) -> list[bytes]:
        """All private byte strings held; used by leak audits."""
        return [self._seed, self.identity_keypair.private_key, *(kp.private_key for kp in self.prekeys.values())]


def create_wallet(seed: bytes) -> Wallet:
    try:
        return Wallet(seed)
    except CryptoError as exc:
        raise WalletError(exc.code, exc.detail) from None


def create_prekey_bundle(wallet: Wallet, n: int) -> SignedPrekeyBundle:
    if wallet.nft is None:
        raise WalletError("no-identity-nft")
    if not isinstance(n, int) or isinstance(n, bool) or not 1 <= n <= MAX_PREKEYS:
        raise WalletError("bad-count", repr(n))
    entries = []
    for _ in range(n):
        pid = wallet._next_prekey_id
        wallet._next_prekey_id += 1
        seed = crypto.kdf([wallet._seed, pid.to_bytes(8, "big")], b"metasim-prekey-seed", crypto.SEED_LEN)
        kp = crypto.generate_keypair(seed)
        wallet.prekeys[pid] = kp
        entries.append(PrekeyEntry(pid, kp.public_key, wallet.sign(prekey_message(pid, kp.public_key, wallet.nft.nft_id))))
    return SignedPrekeyBundle(wallet.nft.nft_id, tuple(entries))


def issue_attestation(issuer_wallet: Wallet, claim: Claim, ledger: Ledger) -> AttestationCertificate:
    """Sign ``claim`` as a trusted party. The certificate goes to the holder."""
    if claim.predicate not in PREDICATES:
        raise WalletError("unknown-predicate", claim.predicate)
    try:
        record = ledger.fetch_key_record(issuer_wallet.address)
    except LedgerError:
        raise WalletError("issuer-not-published") from None
    if record.identity_pub != issuer_wallet.identity_keypair.public_key:
        raise WalletError("issuer-key-stale")
    issued_at = ledger.head
    signature = issuer_wallet.sign(AttestationCertificate.signing_bytes(claim, issuer_wallet.address, issued_at))
    return AttestationCertificate(claim, issuer_wallet.address, issued_at, signature)


def make_presentation(holder_wallet: Wallet, cert: AttestationCertificate, nonce: int) -> Presentation:
    if holder_wallet.nft is None or cert.claim.subject_nft != holder_wallet.nft.nft_id:
        raise WalletError("nft-mismatch")
    holder = holder_wallet.nft.nft_id
    return Presentation(cert, holder, nonce, holder_wallet.sign(Presentation.signing_bytes(cert, holder, nonce)))


def verify_presentation(p: Presentation, ledger, expected_nonce: int) -> PresentationCheck:
    if p.nonce != expected_nonce:
        return PresentationCheck(False, "nonce-mismatch")
    if p.holder_nft != p.cert.claim.subject_nft:
        return PresentationCheck(False, "nft-mismatch")
    if not verify_certificate(p.cert, ledger):
        return PresentationCheck(False, "bad-cert-sig")
    try:
        holder_key = ledger.owner_key(p.holder_nft)
    except LedgerError:
        return PresentationCheck(False, "bad-holder-sig")
    if not crypto.verify(holder_key.identity_pub, Presentation.signing_bytes(p.cert, p.holder_nft, p.nonce), p.holder_signature):
        return PresentationCheck(False, "bad-holder-sig")
    return PresentationCheck(True)


class PresentationVerifier:
    """Issues single-use 64-bit challenges and checks presentations against them."""

    def __init__(self, rng: random.Random | None = None):
        self._rng = rng or random.SystemRandom()
        self._outstanding: set[int] = set()

    def challenge(self) -> int:
        while True:
            nonce = self._rng.getrandbits(64)
            if nonce not in self._outstanding:
                self._outstanding.add(nonce)
                return nonce

    def verify(self, p: Presentation, ledger) -> PresentationCheck:
        if p.nonce not in self._outstanding:
            return PresentationCheck(False, "nonce-mismatch")
        # one attempt per nonce, pass or fail
        self._outstanding.discard(p.nonce)
        return verify_presentation(p, ledger, p.nonce)


def decode_presentation(blob: bytes) -> Presentation | None:
    try:
        return Presentation.from_bytes(blob)
    except EncodingError:
        return None

