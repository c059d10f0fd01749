import dataclasses
import random

import pytest

from metasim.credentials import AttestationCertificate, Claim, register_predicate, verify_certificate
from metasim.errors import WalletError
from metasim.wallet import (
    PrekeyEntry,
    Presentation,
    PresentationVerifier,
    SignedPrekeyBundle,
    create_prekey_bundle,
    create_wallet,
    decode_presentation,
    issue_attestation,
    make_presentation,
    verify_presentation,
)

from conftest import seed_of


def test_create_wallet_bad_seed():
    with pytest.raises(WalletError, match="bad-seed"):
        create_wallet(b"short")


def test_public_view_has_no_private_bytes(society):
    w = society.user("a", prekeys=5)
    view = repr(w.public_view()) + repr(w)
    for secret in w.secret_material():
        assert secret.hex() not in view
    assert len(w.secret_material()) == 2 + 5


def test_prekey_bundle_validity(society):
    w = society.user("a", prekeys=0)
    bundle = create_prekey_bundle(w, 4)
    assert [e.prekey_id for e in bundle.entries] == [1, 2, 3, 4]
    assert all(bundle.entry_valid(e, w.identity_keypair.public_key) for e in bundle.entries)
    assert SignedPrekeyBundle.from_bytes(bundle.to_bytes()) == bundle
    # ids keep increasing across bundles
    assert create_prekey_bundle(w, 1).entries[0].prekey_id == 5


def test_prekey_bundle_tamper_sweep(society):
    w = society.user("a")
    bundle = create_prekey_bundle(w, 3)
    pub = w.identity_keypair.public_key
    for idx, entry in enumerate(bundle.entries):
        for name in ("prekey_pub", "signature"):
            raw = bytearray(getattr(entry, name))
            for i in range(len(raw)):
                raw[i] ^= 0x01
                bad = dataclasses.replace(entry, **{name: bytes(raw)})
                assert not bundle.entry_valid(bad, pub), (idx, name, i)
                raw[i] ^= 0x01
        assert not bundle.entry_valid(dataclasses.replace(entry, prekey_id=entry.prekey_id + 10), pub)
    # an entry lifted into someone else's bundle does not verify
    other = SignedPrekeyBundle("someone-else", bundle.entries)
    assert not any(other.entry_valid(e, pub) for e in bundle.entries)


def test_prekey_bundle_errors(society):
    w = create_wallet(seed_of("x"))
    with pytest.raises(WalletError, match="no-identity-nft"):
        create_prekey_bundle(w, 1)
    w.register(society.ledger)
    for n in (0, 101, -1, True, 2.0):
        with pytest.raises(WalletError, match="bad-count"):
            create_prekey_bundle(w, n)
    assert len(create_prekey_bundle(w, 100).entries) == 100


def test_prekeys_are_deterministic_per_seed(society):
    a = society.user("a")
    b = create_wallet(seed_of("a"))
    b.nft = a.nft
    assert create_prekey_bundle(a, 2).entries[0].prekey_pub == create_prekey_bundle(b, 2).entries[0].prekey_pub


def test_issue_attestation_errors(society):
    a = society.user("a", cert=None)
    with pytest.raises(WalletError, match="unknown-predicate"):
        issue_attestation(society.tp, Claim("birthdate=1990", a.nft_id), society.ledger)
    stranger = create_wallet(seed_of("stranger"))
    with pytest.raises(WalletError, match="issuer-not-published"):
        issue_attestation(stranger, Claim("age_over_18", a.nft_id), society.ledger)
    tp_clone = create_wallet(seed_of("tp"))
    society.tp.rotate_key(seed_of("tp2"), society.ledger)
    with pytest.raises(WalletError, match="issuer-key-stale"):
        issue_attestation(tp_clone, Claim("age_over_18", a.nft_id), society.ledger)


def test_register_predicate():
    register_predicate("guild_officer_test")
    with pytest.raises(WalletError, match="unknown-predicate"):
        register_predicate("bad name!")


def test_cert_survives_issuer_rotation(society):
    a = society.user("a")
    cert = a.held_certs[0]
    society.tp.rotate_key(seed_of("tp-rotated"), society.ledger)
    assert verify_certificate(cert, society.ledger)
    # a cert claiming a pre-rotation issue time but signed with the new key is not valid
    forged = dataclasses.replace(cert, signature=society.tp.sign(cert.signed_message()))
    assert not verify_certificate(forged, society.ledger)


def test_cert_roundtrip(society):
    cert = society.user("a").held_certs[0]
    assert AttestationCertificate.from_bytes(cert.to_bytes()) == cert


def test_presentation_reasons(society):
    a, b = society.user("a"), society.user("b")
    cert = a.held_certs[0]
    p = make_presentation(a, cert, 77)
    assert verify_presentation(p, society.ledger, 77)
    assert verify_presentation(p, society.ledger, 78).reason == "nonce-mismatch"
    assert verify_presentation(dataclasses.replace(p, holder_nft=b.nft_id), society.ledger, 77).reason == "nft-mismatch"
    bad_cert = dataclasses.replace(cert, issued_at=cert.issued_at - 1)
    assert verify_presentation(dataclasses.replace(p, cert=bad_cert), society.ledger, 77).reason == "bad-cert-sig"
    assert verify_presentation(dataclasses.replace(p, holder_signature=b.sign(b"x")), society.ledger, 77).reason == "bad-holder-sig"
    with pytest.raises(WalletError, match="nft-mismatch"):
        make_presentation(b, cert, 77)


def test_cross_holder_replay_rejected(society):
    """b copies a's certificate and signs a presentation itself."""
    a, b = society.user("a"), society.user("b")
    cert = a.held_certs[0]
    stolen = Presentation(cert, a.nft_id, 5, b.sign(Presentation.signing_bytes(cert, a.nft_id, 5)))
    assert verify_presentation(stolen, society.ledger, 5).reason == "bad-holder-sig"
    # same cert presented under b's own NFT
    own = Presentation(cert, b.nft_id, 5, b.sign(Presentation.signing_bytes(cert, b.nft_id, 5)))
    assert verify_presentation(own, society.ledger, 5).reason == "nft-mismatch"


def test_presentation_reveals_only_predicate(society):
    a = society.user("a")
    p = make_presentation(a, a.held_certs[0], 1)
    assert {f.name for f in dataclasses.fields(p)} == {"cert", "holder_nft", "nonce", "holder_signature"}
    assert {f.name for f in dataclasses.fields(p.cert)} == {"claim", "issuer_id", "issued_at", "signature"}
    assert {f.name for f in dataclasses.fields(p.cert.claim)} == {"predicate", "subject_nft"}
    assert decode_presentation(p.to_bytes()) == p
    assert decode_presentation(b"\x00garbage") is None


def test_verifier_nonces_are_single_use(society):
    a = society.user("a")
    v = PresentationVerifier(random.Random(3))
    nonce = v.challenge()
    p = make_presentation(a, a.held_certs[0], nonce)
    assert v.verify(p, society.ledger)
    assert v.verify(p, society.ledger).reason == "nonce-mismatch"
    assert v.verify(make_presentation(a, a.held_certs[0], nonce + 1), society.ledger).reason == "nonce-mismatch"


def test_verifier_nonce_burned_on_failure(society):
    a, b = society.user("a"), society.user("b")
    v = PresentationVerifier(random.Random(4))
    nonce = v.challenge()
    bad = dataclasses.replace(make_presentation(a, a.held_certs[0], nonce), holder_signature=b.sign(b"x"))
    assert not v.verify(bad, society.ledger)
    assert v.verify(make_presentation(a, a.held_certs[0], nonce), society.ledger).reason == "nonce-mismatch"


def test_prekey_entry_is_plain_data():
    e = PrekeyEntry(1, b"p", b"s")
    assert dataclasses.astuple(e) == (1, b"p", b"s")
