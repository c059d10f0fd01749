"""World admission: open access by NFT recognition, restricted by attested claim.

The world issues a nonce, the wallet signs it with the key the ledger binds
to its NFT, and for restricted worlds also attaches a presentation of a
certificate for the world's required predicate.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Collection

from . import crypto
from .encoding import as_int, as_str, decode_fields, encode
from .errors import EncodingError, LedgerError
from .wallet import Presentation, Wallet, make_presentation, verify_presentation
from .world import RESTRICTED, VirtualWorld, VisitorRecord

ACCEPTED = "accepted"
REJECTED = "rejected"

REASONS = (
    "ok",
    "no-nft",
    "stale-challenge",
    "bad-signature",
    "missing-claim",
    "untrusted-issuer",
    "bad-presentation",
)


@dataclass(frozen=True)
class Challenge:
    nonce: int
    world_id: str
    issued_at: int

    def to_bytes(self) -> bytes:
        return encode(self.nonce, self.world_id, self.issued_at)


@dataclass(frozen=True)
class AuthResponse:
    nft_id: str
    world_id: str
    nonce: int
    signature: bytes
    presentation: bytes = b""

    def to_bytes(self) -> bytes:
        return encode(self.nft_id, self.world_id, self.nonce, self.signature, self.presentation)

    @classmethod
    def from_bytes(cls, data: bytes) -> "AuthResponse":
        nft, world, nonce, sig, pres = decode_fields(data, expected=5)
        return cls(as_str(nft), as_str(world), as_int(nonce), sig, pres)


@dataclass(frozen=True)
class AuthResult:
    outcome: str
    reason: str
    recognized_returning: bool = False
    session_id: str | None = None

    @property
    def accepted(self) -> bool:
        return self.outcome == ACCEPTED

    def to_bytes(self) -> bytes:
        return encode(self.outcome, self.reason, self.recognized_returning, self.session_id)


def _reject(reason: str) -> AuthResult:
    return AuthResult(REJECTED, reason)


def auth_message(world_id: str, nonce: int, nft_id: str) -> bytes:
    return encode(b"metasim-auth-v1", world_id, nonce, nft_id)


def issue_challenge(world: VirtualWorld, requester_nft: str | None) -> Challenge:
    while True:
        nonce = world.rng.getrandbits(64)
        if nonce not in world.outstanding:
            break
    world.outstanding[nonce] = (requester_nft, world.clock)
    return Challenge(nonce, world.world_id, world.clock)


def respond(
    wallet: Wallet,
    challenge: Challenge,
    required_predicate: str | None = None,
    trusted_issuers: Collection[str] = (),
) -> AuthResponse:
    """Wallet side: sign the challenge and, if asked, present a credential."""
    nft_id = wallet.nft_id or ""
    signature = wallet.sign(auth_message(challenge.world_id, challenge.nonce, nft_id))
    presentation = b""
    if required_predicate is not None and wallet.nft is not None:
        certs = sorted(wallet.certs_for(required_predicate), key=lambda c: c.issuer_id not in trusted_issuers)
        if certs:
            presentation = make_presentation(wallet, certs[0], challenge.nonce).to_bytes()
    return AuthResponse(nft_id, challenge.world_id, challenge.nonce, signature, presentation)


def check_response(world: VirtualWorld, response: AuthResponse, ledger) -> AuthResult:
    """World side. Consumes the challenge whatever the outcome."""
    pending = world.outstanding.pop(response.nonce, None)
    if not response.nft_id:
        return _reject("no-nft")
    if pending is None or response.world_id != world.world_id:
        return _reject("stale-challenge")
    expected_nft, _ = pending
    if expected_nft is not None and expected_nft != response.nft_id:
        return _reject("stale-challenge")
    try:
        key = ledger.owner_key(response.nft_id)
    except LedgerError:
        return _reject("no-nft")
    if not crypto.verify(key.identity_pub, auth_message(world.world_id, response.nonce, response.nft_id), response.signature):
        return _reject("bad-signature")

    if world.access_policy == RESTRICTED:
        reason = _check_claim(world, response, ledger)
        if reason != "ok":
            return _reject(reason)
    return _admit(world, response)


def _check_claim(world: VirtualWorld, response: AuthResponse, ledger) -> str:
    if not response.presentation:
        return "missing-claim"
    try:
        p = Presentation.from_bytes(response.presentation)
    except EncodingError:
        return "bad-presentation"
    if p.cert.claim.predicate != world.required_predicate:
        return "missing-claim"
    if p.cert.issuer_id not in world.trusted_issuers:
        return "untrusted-issuer"
    if p.holder_nft != response.nft_id or not verify_presentation(p, ledger, response.nonce):
        return "bad-presentation"
    return "ok"


def _admit(world: VirtualWorld, response: AuthResponse) -> AuthResult:
    nft = response.nft_id
    record = world.visitors.get(nft)
    returning = record is not None
    if record is None:
        world.visitors[nft] = VisitorRecord(first_seen=world.clock, visit_count=1)
    else:
        record.visit_count += 1
    session = crypto.digest(encode(b"metasim-session", world.world_id, nft, response.nonce)).hex()[:16]
    return AuthResult(ACCEPTED, "ok", recognized_returning=returning, session_id=session)


def authenticate_open(world: VirtualWorld, wallet: Wallet, challenge: Challenge, ledger) -> AuthResult:
    return check_response(world, respond(wallet, challenge), ledger)


def authenticate_restricted(
    world: VirtualWorld, wallet: Wallet, challenge: Challenge, required_predicate: str, ledger
) -> AuthResult:
    if world.access_policy != RESTRICTED or world.required_predicate != required_predicate:
        raise ValueError(f"world {world.world_id} does not require {required_predicate!r}")
    response = respond(wallet, challenge, required_predicate, world.trusted_issuers)
    return check_response(world, response, ledger)
