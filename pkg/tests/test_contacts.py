import dataclasses
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metasim.contacts import (
    AvatarProfile,
    ContactBook,
    Endorsement,
    Verdict,
    endorse_contact,
    exchange_contacts,
    prove_binding,
    recognize_avatar,
)
from metasim.errors import ContactError
from metasim.wallet import create_wallet

from conftest import Society, seed_of


def with_avatar(society, name, appearance=None):
    w = society.user(name, cert=None)
    w.avatar = AvatarProfile(w.nft_id, name.title(), appearance or {"hair": f"{name}-hair"}, "alto")
    return w


def test_exchange_saves_both_sides(society):
    a, b = with_avatar(society, "a"), with_avatar(society, "b")
    ea, eb = exchange_contacts(a, b, society.ledger, random.Random(1), now=5)
    assert ea.nft_id == b.nft_id and eb.nft_id == a.nft_id
    assert a.contacts.get(b.nft_id).label == "B" and b.contacts.get(a.nft_id).first_met == 5


def test_exchange_is_idempotent(society):
    a, b = with_avatar(society, "a"), with_avatar(society, "b")
    exchange_contacts(a, b, society.ledger, random.Random(1), now=5)
    before = a.contacts.to_bytes(), b.contacts.to_bytes()
    b.avatar.display_name = "Renamed"
    exchange_contacts(a, b, society.ledger, random.Random(2), now=9)
    assert (a.contacts.to_bytes(), b.contacts.to_bytes()) == before


def test_exchange_needs_registered_identities(society):
    a = with_avatar(society, "a")
    loner = create_wallet(seed_of("loner"))
    with pytest.raises(ContactError, match="binding-proof-failed"):
        exchange_contacts(a, loner, society.ledger, random.Random(1))
    assert len(a.contacts) == 0


def test_label_falls_back_to_short_id(society):
    a = society.user("a", cert=None)
    b = society.user("b", cert=None)
    exchange_contacts(a, b, society.ledger, random.Random(1))
    assert a.contacts.get(b.nft_id).label == b.nft_id[:8]


def test_endorsement_flow(society):
    a, b, c = (with_avatar(society, n) for n in "abc")
    for x, y in ((a, b), (a, c), (b, c)):
        exchange_contacts(x, y, society.ledger, random.Random(0))
    entry = endorse_contact(c, a.nft_id, b)
    assert [e.endorser_nft for e in entry.verified_endorsements(b.nft_id, society.ledger)] == [c.nft_id]
    endorse_contact(c, a.nft_id, b)
    assert len(b.contacts.get(a.nft_id).endorsements) == 1


def test_endorsement_requires_mutual_contacts(society):
    a, b, c = (with_avatar(society, n) for n in "abc")
    exchange_contacts(a, b, society.ledger, random.Random(0))
    with pytest.raises(ContactError, match="not-mutual-contact"):
        endorse_contact(c, a.nft_id, b)
    exchange_contacts(c, a, society.ledger, random.Random(0))
    exchange_contacts(c, b, society.ledger, random.Random(0))
    d = with_avatar(society, "d")
    exchange_contacts(c, d, society.ledger, random.Random(0))
    # b has never met d: endorsing d to b must not create an entry
    with pytest.raises(ContactError, match="not-mutual-contact"):
        endorse_contact(c, d.nft_id, b)
    assert d.nft_id not in b.contacts


def test_forged_endorsement_not_counted(society):
    a, b, c = (with_avatar(society, n) for n in "abc")
    exchange_contacts(a, b, society.ledger, random.Random(0))
    entry = b.contacts.get(a.nft_id)
    entry.endorsements.append(Endorsement(c.nft_id, a.sign(b"pretend to be c")))
    entry.endorsements.append(Endorsement("ghost", b"\x00" * 64))
    assert entry.verified_endorsements(b.nft_id, society.ledger) == []


def test_endorsement_not_transplantable(society):
    a, b, c = (with_avatar(society, n) for n in "abc")
    for x, y in ((a, b), (a, c), (b, c)):
        exchange_contacts(x, y, society.ledger, random.Random(0))
    endorse_contact(c, a.nft_id, b)
    e = b.contacts.get(a.nft_id).endorsements[0]
    # copying b's endorsement into a different book does not verify
    assert dataclasses.replace(c.contacts.get(a.nft_id), endorsements=[e]).verified_endorsements(c.nft_id, society.ledger) == []


def test_recognition_verdicts(society):
    a, b = with_avatar(society, "a"), with_avatar(society, "b")
    m = with_avatar(society, "m", {"hair": "m-hair"})
    exchange_contacts(a, b, society.ledger, random.Random(0))
    book = b.contacts
    assert recognize_avatar(book, a.avatar, prove_binding(a, 1), 1, society.ledger).verdict is Verdict.KNOWN
    clone = AvatarProfile(m.nft_id, "A", dict(a.avatar.appearance), a.avatar.voice_tag)
    assert recognize_avatar(book, clone, prove_binding(m, 2), 2, society.ledger).verdict is Verdict.IMPERSONATION_WARNING
    assert recognize_avatar(book, m.avatar, prove_binding(m, 3), 3, society.ledger).verdict is Verdict.UNKNOWN
    # claiming a's NFT without a's key
    fake = dataclasses.replace(prove_binding(m, 4), nft_id=a.nft_id)
    stolen = AvatarProfile(a.nft_id, "A", dict(a.avatar.appearance))
    assert recognize_avatar(book, stolen, fake, 4, society.ledger).verdict is Verdict.IMPERSONATION_WARNING
    # a replayed proof for a stale nonce
    assert recognize_avatar(book, a.avatar, prove_binding(a, 5), 6, society.ledger).verdict is not Verdict.KNOWN


def test_empty_appearance_never_flagged(society):
    a, b = society.user("a", cert=None), society.user("b", cert=None)
    m = society.user("m", cert=None)
    exchange_contacts(a, b, society.ledger, random.Random(0))
    stranger = AvatarProfile(m.nft_id, "M", {})
    assert recognize_avatar(b.contacts, stranger, prove_binding(m, 1), 1, society.ledger).verdict is Verdict.UNKNOWN


appearances = st.dictionaries(st.sampled_from(["skin", "hair", "eyes", "outfit", "hat"]), st.text(min_size=1, max_size=6), min_size=0, max_size=5)

_SOC = Society()
_A = _SOC.user("prop-a", cert=None)
_B = _SOC.user("prop-b", cert=None)
exchange_contacts(_A, _B, _SOC.ledger, random.Random(0))


@settings(max_examples=60, deadline=None)
@given(saved=appearances, shown=appearances, nonce=st.integers(0, 2**64 - 1))
def test_known_depends_only_on_proven_nft(saved, shown, nonce):
    book = ContactBook.from_bytes(_B.contacts.to_bytes())
    book.get(_A.nft_id).appearance = saved
    r = recognize_avatar(book, AvatarProfile(_A.nft_id, "whatever", shown), prove_binding(_A, nonce), nonce, _SOC.ledger)
    assert r.verdict is Verdict.KNOWN


def test_contact_book_roundtrip(society):
    a, b, c = (with_avatar(society, n) for n in "abc")
    for x, y in ((a, b), (a, c), (b, c)):
        exchange_contacts(x, y, society.ledger, random.Random(0))
    endorse_contact(c, a.nft_id, b)
    book = ContactBook.from_bytes(b.contacts.to_bytes())
    assert book.to_bytes() == b.contacts.to_bytes()
    assert book.get(a.nft_id) == b.contacts.get(a.nft_id)
    assert AvatarProfile.from_bytes(a.avatar.to_bytes()) == a.avatar
