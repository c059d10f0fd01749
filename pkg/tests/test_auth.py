import dataclasses
import random

import pytest

from metasim.auth import (
    AuthResponse,
    authenticate_open,
    authenticate_restricted,
    check_response,
    issue_challenge,
    respond,
)
from metasim.credentials import Claim
from metasim.wallet import create_wallet, issue_attestation

from conftest import seed_of
from metasim.world import VirtualWorld


def open_world(name="plaza", seed=0):
    return VirtualWorld(name, rng=random.Random(seed))


def gallery(tp, seed=0):
    return VirtualWorld("gallery", "restricted", "age_over_18", frozenset({tp.address}), rng=random.Random(seed))


def test_open_world_recognizes_returning_visitor(society):
    a = society.user("a", cert=None)
    world = open_world()
    first = authenticate_open(world, a, issue_challenge(world, a.nft_id), society.ledger)
    second = authenticate_open(world, a, issue_challenge(world, a.nft_id), society.ledger)
    assert (first.accepted, first.recognized_returning) == (True, False)
    assert (second.accepted, second.recognized_returning) == (True, True)
    assert world.visitors[a.nft_id].visit_count == 2
    assert first.session_id != second.session_id


def test_bad_signature(society):
    a, b = society.user("a", cert=None), society.user("b", cert=None)
    world = open_world()
    ch = issue_challenge(world, a.nft_id)
    resp = dataclasses.replace(respond(a, ch), signature=b.sign(b"nope"))
    assert check_response(world, resp, society.ledger).reason == "bad-signature"
    # b signing for a's NFT
    ch = issue_challenge(world, a.nft_id)
    forged = dataclasses.replace(respond(b, ch), nft_id=a.nft_id)
    assert check_response(world, forged, society.ledger).reason == "bad-signature"
    assert a.nft_id not in world.visitors


def test_stale_challenge(society):
    a = society.user("a", cert=None)
    world = open_world()
    ch = issue_challenge(world, a.nft_id)
    resp = respond(a, ch)
    assert check_response(world, resp, society.ledger).accepted
    assert check_response(world, resp, society.ledger).reason == "stale-challenge"
    # a challenge from another world
    other = open_world("elsewhere", seed=9)
    assert check_response(world, respond(a, issue_challenge(other, a.nft_id)), society.ledger).reason == "stale-challenge"


def test_challenge_bound_to_requester(society):
    a, b = society.user("a", cert=None), society.user("b", cert=None)
    world = open_world()
    ch = issue_challenge(world, a.nft_id)
    assert check_response(world, respond(b, ch), society.ledger).reason == "stale-challenge"


def test_no_nft(society):
    w = create_wallet(seed_of("unminted"))
    world = open_world()
    assert check_response(world, respond(w, issue_challenge(world, None)), society.ledger).reason == "no-nft"
    resp = AuthResponse("ghost-nft", "plaza", issue_challenge(world, None).nonce, b"")
    assert check_response(world, resp, society.ledger).reason == "no-nft"


def test_restricted_missing_then_accepted(society):
    a = society.user("a", cert=None)
    world = gallery(society.tp)
    assert authenticate_restricted(world, a, issue_challenge(world, a.nft_id), "age_over_18", society.ledger).reason == "missing-claim"
    a.add_cert(issue_attestation(society.tp, Claim("world_member", a.nft_id), society.ledger))
    assert authenticate_restricted(world, a, issue_challenge(world, a.nft_id), "age_over_18", society.ledger).reason == "missing-claim"
    a.add_cert(issue_attestation(society.tp, Claim("age_over_18", a.nft_id), society.ledger))
    r = authenticate_restricted(world, a, issue_challenge(world, a.nft_id), "age_over_18", society.ledger)
    assert r.accepted and not r.recognized_returning
    with pytest.raises(ValueError):
        authenticate_restricted(world, a, issue_challenge(world, a.nft_id), "kyc_verified", society.ledger)


def test_trust_set_enumeration(society):
    other_tp = create_wallet(seed_of("other-tp"))
    other_tp.publish_key(society.ledger)
    a = society.user("a")
    issuers = {"tp": society.tp.address, "other": other_tp.address}
    for trusted in ([], ["tp"], ["other"], ["tp", "other"]):
        world = VirtualWorld("g", "restricted", "age_over_18", frozenset(issuers[t] for t in trusted), rng=random.Random(1))
        r = authenticate_restricted(world, a, issue_challenge(world, a.nft_id), "age_over_18", society.ledger)
        assert r.accepted == ("tp" in trusted)
        if not r.accepted:
            assert r.reason == "untrusted-issuer"


def test_wallet_prefers_trusted_issuer(society):
    other_tp = create_wallet(seed_of("other-tp"))
    other_tp.publish_key(society.ledger)
    a = society.user("a", cert=None)
    a.add_cert(issue_attestation(other_tp, Claim("age_over_18", a.nft_id), society.ledger))
    a.add_cert(issue_attestation(society.tp, Claim("age_over_18", a.nft_id), society.ledger))
    world = gallery(society.tp)
    assert authenticate_restricted(world, a, issue_challenge(world, a.nft_id), "age_over_18", society.ledger).accepted


def test_bad_presentation(society):
    a, b = society.user("a"), society.user("b")
    world = gallery(society.tp)
    ch = issue_challenge(world, a.nft_id)
    resp = respond(a, ch, "age_over_18", world.trusted_issuers)
    assert check_response(world, dataclasses.replace(resp, presentation=b"\x01junk"), society.ledger).reason == "bad-presentation"
    # b presents a's cert alongside its own valid signature
    ch = issue_challenge(world, b.nft_id)
    resp_b = respond(b, ch)
    stolen = respond(a, ch, "age_over_18", world.trusted_issuers).presentation
    assert check_response(world, dataclasses.replace(resp_b, presentation=stolen), society.ledger).reason == "bad-presentation"


def test_accepts_after_issuer_rotation(society):
    a = society.user("a")
    society.tp.rotate_key(seed_of("tp-new"), society.ledger)
    world = gallery(society.tp)
    assert authenticate_restricted(world, a, issue_challenge(world, a.nft_id), "age_over_18", society.ledger).accepted


def test_same_identity_in_any_world(society):
    a = society.user("a")
    worlds = [open_world(f"w{i}", seed=i) for i in range(5)] + [gallery(society.tp, seed=99)]
    for w in worlds:
        if w.access_policy == "open":
            assert authenticate_open(w, a, issue_challenge(w, a.nft_id), society.ledger).accepted
        else:
            assert authenticate_restricted(w, a, issue_challenge(w, a.nft_id), "age_over_18", society.ledger).accepted
    assert all(list(w.visitors) == [a.nft_id] for w in worlds)


def test_nonces_deterministic_under_seed():
    w1, w2 = open_world(seed=5), open_world(seed=5)
    assert [issue_challenge(w1, None).nonce for _ in range(10)] == [issue_challenge(w2, None).nonce for _ in range(10)]


def test_world_state_holds_no_secrets(society):
    a = society.user("a")
    world = gallery(society.tp)
    authenticate_restricted(world, a, issue_challenge(world, a.nft_id), "age_over_18", society.ledger)
    state = world.state_bytes()
    for secret in a.secret_material():
        assert secret not in state
    for cert in a.held_certs:
        assert cert.signature not in state and cert.to_bytes() not in state


def test_response_roundtrip(society):
    a = society.user("a")
    world = gallery(society.tp)
    resp = respond(a, issue_challenge(world, a.nft_id), "age_over_18", world.trusted_issuers)
    assert AuthResponse.from_bytes(resp.to_bytes()) == resp


def test_bad_world_config():
    with pytest.raises(ValueError):
        VirtualWorld("x", "members-only")
    with pytest.raises(ValueError):
        VirtualWorld("x", "restricted")
