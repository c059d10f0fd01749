"""End-to-end encrypted channels negotiated from ledger-anchored identities.

No key server sits in the middle. The requester reads the receiver's
identity key and attestations from the ledger, picks the first prekey in the
receiver's published bundle that checks out, runs X3DH and sends one signed
request. The receiver re-checks the requester's certificate against the
trusted party's ledger key before answering with the mirrored X3DH.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Collection

from . import crypto
from .credentials import AttestationCertificate, verify_certificate
from .encoding import U64_MAX, as_int, as_str, decode_fields, encode
from .errors import ChannelError, CryptoError, EncodingError, LedgerError
from .wallet import SignedPrekeyBundle, Wallet


class PrekeyDirectory:
    """Public, untrusted store of prekey bundles keyed by owner NFT.

    Bundles are self-authenticating, so the directory needs no trust; readers
    verify every entry against the ledger.
    """

    def __init__(self) -> None:
        self._bundles: dict[str, bytes] = {}

    def publish(self, bundle: SignedPrekeyBundle) -> None:
        self._bundles[bundle.owner_nft] = bundle.to_bytes()

    def fetch(self, owner_nft: str) -> SignedPrekeyBundle:
        try:
            return SignedPrekeyBundle.from_bytes(self._bundles[owner_nft])
        except KeyError:
            raise ChannelError("ledger-miss", f"no bundle for {owner_nft}") from None


@dataclass(frozen=True)
class ChannelRequest:
    requester_nft: str
    tp_id: str
    cert: AttestationCertificate
    requester_ephemeral_pub: bytes
    chosen_prekey_id: int
    requester_signature: bytes

    def to_bytes(self) -> bytes:
        return encode(
            self.requester_nft,
            self.tp_id,
            self.cert.to_bytes(),
            self.requester_ephemeral_pub,
            self.chosen_prekey_id,
            self.requester_signature,
        )


def request_message(
    requester_nft: str, tp_id: str, cert_blob: bytes, ephemeral_pub: bytes, prekey_id: int, receiver_nft: str
) -> bytes:
    # receiver_nft is signed but not sent: a request cannot be redirected
    return encode(b"metasim-channel-request-v1", requester_nft, tp_id, cert_blob, ephemeral_pub, prekey_id, receiver_nft)


@dataclass
class ChannelState:
    own_nft: str
    peer_nft: str
    session_key: bytes = field(repr=False)
    send_counter: int = 0
    recv_counter: int = 0
    established_at: int = 0


@dataclass(frozen=True)
class Envelope:
    sender_nft: str
    counter: int
    ciphertext: bytes

    @property
    def aad(self) -> bytes:
        return encode(self.sender_nft, self.counter)

    def to_bytes(self) -> bytes:
        return encode(self.sender_nft, self.counter, self.ciphertext)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Envelope":
        sender, counter, ct = decode_fields(data, expected=3)
        return cls(as_str(sender), as_int(counter), ct)


def _cert_ok(
    cert: AttestationCertificate, subject_nft: str, tp_id: str, ledger, trusted_issuers: Collection[str] | None
) -> bool:
    if cert.issuer_id != tp_id or cert.claim.subject_nft != subject_nft:
        return False
    if trusted_issuers is not None and tp_id not in trusted_issuers:
        return False
    return verify_certificate(cert, ledger)


def _receiver_attested(receiver_nft: str, tp_id: str, ledger, trusted_issuers: Collection[str] | None) -> bool:
    accepted = {tp_id} | set(trusted_issuers or ())
    try:
        records = ledger.fetch_attestations(receiver_nft)
    except LedgerError:
        return False
    return any(r.issuer in accepted and verify_certificate(r.cert, ledger) for r in records)


def request_channel(
    requester_wallet: Wallet,
    receiver_nft: str,
    ledger,
    directory: PrekeyDirectory,
    *,
    tp_id: str | None = None,
    trusted_issuers: Collection[str] | None = None,
    rng: random.Random | None = None,
    now: int = 0,
) -> tuple[ChannelRequest, ChannelState]:
    own_nft = requester_wallet.nft_id
    certs = [
        c for c in requester_wallet.held_certs
        if c.claim.subject_nft == own_nft and (tp_id is None or c.issuer_id == tp_id)
    ]
    if own_nft is None or not certs:
        raise ChannelError("cert-invalid", "no certificate held")
    cert = certs[0]
    tp_id = cert.issuer_id

    try:
        receiver_key = ledger.owner_key(receiver_nft)
        ledger.fetch_key_record(tp_id)
    except LedgerError as exc:
        raise ChannelError("ledger-miss", exc.detail) from None

    if not _cert_ok(cert, own_nft, tp_id, ledger, trusted_issuers):
        raise ChannelError("cert-invalid")

    bundle = directory.fetch(receiver_nft)
    chosen = None
    if bundle.owner_nft == receiver_nft and _receiver_attested(receiver_nft, tp_id, ledger, trusted_issuers):
        for entry in bundle.entries:
            if bundle.entry_valid(entry, receiver_key.identity_pub) and crypto.valid_public_key(entry.prekey_pub):
                chosen = entry
                break
    if chosen is None:
        raise ChannelError("no-valid-prekey")

    rng = rng or random.SystemRandom()
    ephemeral = crypto.generate_keypair(rng.getrandbits(256).to_bytes(32, "big"))
    session_key = crypto.x3dh_initiator(
        requester_wallet.identity_keypair, ephemeral, receiver_key.identity_pub, chosen.prekey_pub
    )
    cert_blob = cert.to_bytes()
    signature = requester_wallet.sign(
        request_message(own_nft, tp_id, cert_blob, ephemeral.public_key, chosen.prekey_id, receiver_nft)
    )
    request = ChannelRequest(own_nft, tp_id, cert, ephemeral.public_key, chosen.prekey_id, signature)
    return request, ChannelState(own_nft, receiver_nft, session_key, established_at=now)


def accept_channel(
    receiver_wallet: Wallet,
    request: ChannelRequest | bytes,
    ledger,
    *,
    trusted_issuers: Collection[str] | None = None,
    now: int = 0,
) -> ChannelState:
    """Answer a channel request, given either the object or its wire bytes.

    Checks run in a fixed order (certificate, request signature, prekey) so
    that tampering with any field fails with one predictable code.
    """
    wire = request.to_bytes() if isinstance(request, ChannelRequest) else request
    try:
        fields = decode_fields(wire, expected=6)
        requester_nft, tp_id = as_str(fields[0]), as_str(fields[1])
        cert_blob, ephemeral_pub, prekey_id, signature = fields[2], fields[3], as_int(fields[4]), fields[5]
    except EncodingError as exc:
        raise ChannelError("malformed-request", exc.code) from None

    try:
        cert = AttestationCertificate.from_bytes(cert_blob)
    except EncodingError:
        raise ChannelError("cert-invalid", "undecodable certificate") from None
    if not _cert_ok(cert, requester_nft, tp_id, ledger, trusted_issuers):
        raise ChannelError("cert-invalid")

    try:
        requester_key = ledger.owner_key(requester_nft)
    except LedgerError as exc:
        raise ChannelError("ledger-miss", exc.detail) from None
    own_nft = receiver_wallet.nft_id or ""
    message = request_message(requester_nft, tp_id, cert_blob, ephemeral_pub, prekey_id, own_nft)
    if not crypto.verify(requester_key.identity_pub, message, signature):
        raise ChannelError("bad-request-signature")

    prekey = receiver_wallet.prekeys.get(prekey_id)
    if prekey is None:
        raise ChannelError("unknown-prekey", str(prekey_id))
    try:
        session_key = crypto.x3dh_responder(
            receiver_wallet.identity_keypair, prekey, requester_key.identity_pub, ephemeral_pub
        )
    except CryptoError as exc:
        raise ChannelError(exc.code) from None
    return ChannelState(own_nft, requester_nft, session_key, established_at=now)


def message_key(session_key: bytes, sender_nft: str, counter: int) -> bytes:
    # sender in the derivation keeps the two directions from sharing (key, nonce)
    return crypto.kdf([session_key, sender_nft.encode(), counter.to_bytes(8, "big")], crypto.MSG_INFO, crypto.KEY_LEN)


def send_message(state: ChannelState, plaintext: bytes) -> Envelope:
    if state.send_counter >= U64_MAX:
        raise ChannelError("counter-exhausted")
    state.send_counter += 1
    counter = state.send_counter
    env = Envelope(state.own_nft, counter, b"")
    ct = crypto.aead_seal(message_key(state.session_key, state.own_nft, counter), crypto.counter_nonce(counter), plaintext, env.aad)
    return Envelope(state.own_nft, counter, ct)


def receive_message(state: ChannelState, env: Envelope) -> bytes:
    if env.sender_nft != state.peer_nft:
        raise ChannelError("wrong-channel")
    if env.counter <= state.recv_counter:
        raise ChannelError("replay", str(env.counter))
    key = message_key(state.session_key, env.sender_nft, env.counter)
    try:
        plaintext = crypto.aead_open(key, crypto.counter_nonce(env.counter), env.ciphertext, env.aad)
    except CryptoError as exc:
        raise ChannelError(exc.code) from None
    state.recv_counter = env.counter
    return plaintext
