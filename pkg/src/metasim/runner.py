"""Deterministic discrete-event runner.

Every event goes through the real protocol modules. Randomness comes from
generators seeded by the scenario seed, time is a logical tick, and the
network delivers every message in order one tick later. After each event
the runner audits world state and the message trace; a failed audit raises
:class:`~metasim.errors.InvariantBreach`.
"""

from __future__ import annotations

import datetime as dt
import heapq
import logging
import random
from dataclasses import dataclass, field

from . import auth, channel, contacts, crypto
from .contacts import AvatarProfile
from .credentials import Claim, register_predicate, short_id
from .encoding import encode
from .errors import ChannelError, ContactError, InvariantBreach, LedgerError, WalletError
from .ledger import Ledger
from .scenario import Scenario
from .wallet import Wallet, create_prekey_bundle, issue_attestation
from .world import VirtualWorld

log = logging.getLogger(__name__)

LEDGER = "ledger"
DIRECTORY = "directory"
DEFAULT_PREKEYS = 3
# forbidden event kinds during migration: identity is carried, never re-created
ACCOUNT_CREATION_KINDS = frozenset({"register", "create-account"})


def derive_seed(seed: int, *labels: str) -> bytes:
    return crypto.digest(encode(b"metasim-sim-seed", seed, *labels))


def derive_rng(seed: int, *labels: str) -> random.Random:
    return random.Random(int.from_bytes(derive_seed(seed, *labels), "big"))


@dataclass(frozen=True)
class Message:
    """One network message. ``read_only`` marks ledger/directory fetches."""

    event_seq: int
    sent_at: int
    sender: str
    recipient: str
    kind: str
    payload: bytes
    read_only: bool = False

    @property
    def delivered_at(self) -> int:
        return self.sent_at + 1


@dataclass(frozen=True)
class TranscriptRecord:
    seq: int
    time: int
    actor: str
    event: str
    detail: bytes
    outcome: str

    def to_line(self) -> str:
        return f"{self.seq}|{self.time}|{self.actor}|{self.event}|{self.detail.hex()}|{self.outcome}"

    @classmethod
    def from_line(cls, line: str) -> "TranscriptRecord":
        seq, time, actor, event, detail, outcome = line.split("|")
        return cls(int(seq), int(time), actor, event, bytes.fromhex(detail), outcome)


@dataclass
class Transcript:
    records: list[TranscriptRecord] = field(default_factory=list)

    def to_text(self) -> str:
        return "".join(r.to_line() + "\n" for r in self.records)

    @classmethod
    def from_text(cls, text: str) -> "Transcript":
        return cls([TranscriptRecord.from_line(line) for line in text.splitlines() if line.strip()])

    def outcomes(self) -> list[tuple[str, str, str]]:
        return [(r.actor, r.event, r.outcome) for r in self.records]

    def __len__(self) -> int:
        return len(self.records)


class LedgerReader:
    """Read-only ledger view for one actor; every call is logged as a fetch."""

    def __init__(self, sim: "Simulation", actor: str):
        self._sim = sim
        self._actor = actor

    def _log(self, method: str, *args) -> None:
        self._sim.send(self._actor, LEDGER, f"fetch:{method}", encode(*args), read_only=True)

    @property
    def head(self) -> int:
        self._log("head")
        return self._sim.ledger.head

    def fetch_key_record(self, wallet: str, at: int | None = None):
        self._log("fetch_key_record", wallet, at)
        return self._sim.ledger.fetch_key_record(wallet, at=at)

    def owner_key(self, nft_id: str):
        self._log("owner_key", nft_id)
        return self._sim.ledger.owner_key(nft_id)

    def resolve_nft(self, nft_id: str):
        self._log("resolve_nft", nft_id)
        return self._sim.ledger.resolve_nft(nft_id)

    def fetch_attestations(self, nft_id: str):
        self._log("fetch_attestations", nft_id)
        return self._sim.ledger.fetch_attestations(nft_id)


class DirectoryReader:
    def __init__(self, sim: "Simulation", actor: str):
        self._sim = sim
        self._actor = actor

    def fetch(self, owner_nft: str):
        self._sim.send(self._actor, DIRECTORY, "fetch:bundle", encode(owner_nft), read_only=True)
        return self._sim.directory.fetch(owner_nft)


class Simulation:
    def __init__(self, scenario: Scenario, seed: int | None = None):
        self.scenario = scenario
        self.seed = scenario.seed if seed is None else seed
        self.ledger = Ledger()
        self.directory = channel.PrekeyDirectory()
        self.transcript = Transcript()
        self.messages: list[Message] = []
        self.time = 0
        self._event_seq = 0
        self._rng = derive_rng(self.seed, "sim")
        self._rotations: dict[str, int] = {}

        for name in scenario.predicates:
            register_predicate(name)
        self.users: dict[str, Wallet] = {}
        for u in scenario.users:
            wallet = Wallet(derive_seed(self.seed, "user", u.name))
            wallet.avatar = AvatarProfile("", u.display_name, dict(u.appearance), u.voice_tag)
            self.users[u.name] = wallet
        self.parties: dict[str, Wallet] = {p.name: Wallet(derive_seed(self.seed, "party", p.name)) for p in scenario.parties}
        self.party_records = {p.name: p.records for p in scenario.parties}
        self._party_addresses = {name: w.address for name, w in self.parties.items()}
        self.worlds: dict[str, VirtualWorld] = {
            w.world_id: VirtualWorld(
                w.world_id,
                w.policy,
                w.predicate,
                frozenset(self._party_addresses[i] for i in w.trusted_issuers),
                rng=derive_rng(self.seed, "world", w.world_id),
            )
            for w in scenario.worlds
        }
        self.presence: dict[str, set[str]] = {name: set() for name in self.users}
        self.world_views: dict[tuple[str, str], bytes] = {}
        self.channels: dict[tuple[str, str], channel.ChannelState] = {}

    # -- plumbing ---------------------------------------------------------

    def send(self, sender: str, recipient: str, kind: str, payload: bytes, read_only: bool = False) -> None:
        self.messages.append(Message(self._event_seq, self.time, sender, recipient, kind, payload, read_only))

    def reader(self, actor: str) -> LedgerReader:
        return LedgerReader(self, actor)

    def _record(self, actor: str, event: str, outcome: str, **detail) -> TranscriptRecord:
        body = encode([encode(k, str(v)) for k, v in sorted(detail.items())])
        rec = TranscriptRecord(len(self.transcript.records) + 1, self.time, actor, event, body, outcome)
        self.transcript.records.append(rec)
        log.debug("%s", rec.to_line())
        return rec

    # -- run ---------------------------------------------------------------

    def run(self) -> Transcript:
        for name, party in self.parties.items():
            party.publish_key(self.ledger)
            # setup, not a scripted event: logged on the network only
            self.send(name, LEDGER, "append:key", party.identity_keypair.public_key)
        queue = [(e.at, i, e) for i, e in enumerate(self.scenario.events)]
        heapq.heapify(queue)
        while queue:
            at, _, event = heapq.heappop(queue)
            self.time = at
            self._event_seq += 1
            for world in self.worlds.values():
                world.clock = at
            handler = getattr(self, "_on_" + event.kind.replace("-", "_"))
            handler(event.params)
            self.audit()
        return self.transcript

    # -- handlers -----------------------------------------------------------

    def _on_mint(self, p: dict) -> None:
        name = p["user"]
        wallet = self.users[name]
        try:
            if not self.ledger.key_history(wallet.address):
                wallet.publish_key(self.ledger)
                self.send(name, LEDGER, "append:key", wallet.identity_keypair.public_key)
            nft = wallet.mint(self.ledger)
        except LedgerError as exc:
            self._record(name, "mint", f"rejected/{exc.code}")
            return
        self.send(name, LEDGER, "append:mint", encode(wallet.address))
        wallet.avatar.nft_id = nft.nft_id
        self._record(name, "mint", "ok", nft=short_id(nft.nft_id))

    def _on_publish_prekeys(self, p: dict) -> None:
        name = p["user"]
        try:
            bundle = create_prekey_bundle(self.users[name], p.get("count", DEFAULT_PREKEYS))
        except WalletError as exc:
            self._record(name, "publish-prekeys", f"rejected/{exc.code}")
            return
        self.directory.publish(bundle)
        self.send(name, DIRECTORY, "publish:bundle", bundle.to_bytes())
        self._record(name, "publish-prekeys", "ok", count=len(bundle.entries))

    def _on_attest(self, p: dict) -> None:
        party_name, user_name, predicate = p["party"], p["user"], p["predicate"]
        holder = self.users[user_name]
        issuer = self.parties.get(party_name)
        if issuer is None:
            self._record(party_name, "attest", "rejected/party-gone", user=user_name, predicate=predicate)
            return
        if holder.nft is None:
            self._record(party_name, "attest", "rejected/no-nft", user=user_name, predicate=predicate)
            return
        record = self.party_records[party_name].get(user_name, {})
        if not self._predicate_holds(predicate, record):
            self._record(party_name, "attest", "rejected/claim-not-satisfied", user=user_name, predicate=predicate)
            return
        try:
            cert = issue_attestation(issuer, Claim(predicate, holder.nft_id), self.reader(party_name))
        except WalletError as exc:
            self._record(party_name, "attest", f"rejected/{exc.code}", user=user_name, predicate=predicate)
            return
        self.send(party_name, user_name, "certificate", cert.to_bytes())
        holder.add_cert(cert)
        outcome = "issued"
        if p.get("publish", False):
            try:
                self.ledger.publish_attestation(cert)
                self.send(user_name, LEDGER, "append:attestation", cert.to_bytes())
                outcome = "issued+published"
            except LedgerError as exc:
                outcome = f"issued/publish-{exc.code}"
        self._record(party_name, "attest", outcome, user=user_name, predicate=predicate)

    def _predicate_holds(self, predicate: str, record: dict) -> bool:
        # the party checks real-world attributes privately; only the verdict leaves
        if predicate == "age_over_18":
            born = record.get("birthdate")
            if isinstance(born, str):
                born = dt.date.fromisoformat(born)
            if not isinstance(born, dt.date):
                return False
            ref = self.scenario.reference_date
            age = ref.year - born.year - ((ref.month, ref.day) < (born.month, born.day))
            return age >= 18
        if predicate == "world_member":
            return bool(record.get("member"))
        if predicate == "kyc_verified":
            return bool(record.get("kyc"))
        return bool(record.get(predicate))

    def _admit(self, user_name: str, world_id: str) -> auth.AuthResult:
        wallet = self.users[user_name]
        world = self.worlds[world_id]
        challenge = auth.issue_challenge(world, wallet.nft_id)
        self.send(world_id, user_name, "challenge", challenge.to_bytes())
        response = auth.respond(wallet, challenge, world.required_predicate, world.trusted_issuers)
        self.send(user_name, world_id, "auth-response", response.to_bytes())
        result = auth.check_response(world, response, self.reader(world_id))
        self.send(world_id, user_name, "auth-result", result.to_bytes())
        if result.accepted:
            self.presence[user_name].add(world_id)
            self.world_views[(world_id, user_name)] = wallet.avatar.to_bytes()
        return result

    @staticmethod
    def _auth_outcome(result: auth.AuthResult) -> str:
        if result.accepted:
            return "accepted/returning" if result.recognized_returning else "accepted/first-visit"
        return f"rejected/{result.reason}"

    def _on_authenticate(self, p: dict) -> None:
        result = self._admit(p["user"], p["world"])
        self._record(
            p["user"], "authenticate", self._auth_outcome(result),
            world=p["world"], returning=result.recognized_returning, session=result.session_id,
        )

    def _on_migrate(self, p: dict) -> None:
        name, src, dst = p["user"], p["from"], p["to"]
        if src not in self.presence[name]:
            self._record(name, "migrate", "rejected/not-present", source=src, target=dst)
            return
        result = self._admit(name, dst)
        detail = dict(source=src, target=dst, returning=result.recognized_returning)
        if result.accepted:
            self.presence[name].discard(src)
            before = self.world_views[(src, name)]
            after = self.world_views[(dst, name)]
            if before != after:
                raise InvariantBreach("avatar-drift", f"{name}: {src} -> {dst}")
            detail["avatar"] = crypto.digest(after).hex()[:16]
        self._record(name, "migrate", self._auth_outcome(result), **detail)

    def _on_open_channel(self, p: dict) -> None:
        a, b = p["from"], p["to"]
        requester, receiver = self.users[a], self.users[b]
        tp_id = self._party_addresses[p["party"]] if "party" in p else None
        try:
            request, state_a = channel.request_channel(
                requester, receiver.nft_id or "", self.reader(a), DirectoryReader(self, a),
                tp_id=tp_id, rng=self._rng, now=self.time,
            )
            wire = request.to_bytes()
            self.send(a, b, "channel-request", wire)
            state_b = channel.accept_channel(receiver, wire, self.reader(b), now=self.time)
        except ChannelError as exc:
            self._record(a, "open-channel", f"rejected/{exc.code}", peer=b)
            return
        self.send(b, a, "channel-accept", encode(state_b.own_nft))
        if state_a.session_key != state_b.session_key:
            raise InvariantBreach("key-mismatch", f"{a} <-> {b}")
        self.channels[(a, b)] = state_a
        self.channels[(b, a)] = state_b
        self._record(a, "open-channel", "established", peer=b, prekey=request.chosen_prekey_id)

    def _on_message(self, p: dict) -> None:
        a, b, text = p["from"], p["to"], p["text"].encode("utf-8")
        sender, receiver = self.channels.get((a, b)), self.channels.get((b, a))
        if sender is None or receiver is None:
            self._record(a, "message", "rejected/no-channel", peer=b)
            return
        env = channel.send_message(sender, text)
        wire = env.to_bytes()
        self.send(a, b, "envelope", wire)
        try:
            plain = channel.receive_message(receiver, channel.Envelope.from_bytes(wire))
        except ChannelError as exc:
            self._record(a, "message", f"rejected/{exc.code}", peer=b, counter=env.counter)
            return
        if plain != text:
            raise InvariantBreach("plaintext-mismatch", f"{a} -> {b}")
        if len(text) >= 8:
            self._check_confidential(text)
        self._record(a, "message", "delivered", peer=b, counter=env.counter, size=len(env.ciphertext))

    def _on_exchange_contacts(self, p: dict) -> None:
        a, b, world_id = p["a"], p["b"], p["world"]
        if world_id not in self.presence[a] or world_id not in self.presence[b]:
            self._record(a, "exchange-contacts", "rejected/not-in-world", peer=b, world=world_id)
            return
        wa, wb = self.users[a], self.users[b]
        self.send(a, b, "binding-challenge", encode(wa.nft_id or ""))
        self.send(b, a, "binding-challenge", encode(wb.nft_id or ""))
        try:
            contacts.exchange_contacts(wa, wb, self.reader(a), rng=self._rng, now=self.time)
        except ContactError as exc:
            self._record(a, "exchange-contacts", f"rejected/{exc.code}", peer=b, world=world_id)
            return
        self._record(a, "exchange-contacts", "ok", peer=b, world=world_id)

    def _on_endorse(self, p: dict) -> None:
        endorser, subject, target = p["endorser"], p["subject"], p["target"]
        try:
            entry = contacts.endorse_contact(self.users[endorser], self.users[subject].nft_id or "", self.users[target])
        except ContactError as exc:
            self._record(endorser, "endorse", f"rejected/{exc.code}", subject=subject, target=target)
            return
        self.send(endorser, target, "endorsement", entry.endorsements[-1].signature)
        verified = entry.verified_endorsements(self.users[target].nft_id, self.reader(target))
        self._record(endorser, "endorse", "ok", subject=subject, target=target, verified=len(verified))

    def _present(self, presenter: str, profile: AvatarProfile, observer: str) -> contacts.RecognitionResult:
        """``presenter`` shows ``profile`` to ``observer`` and proves its own NFT."""
        nonce = self._rng.getrandbits(64)
        self.send(observer, presenter, "binding-challenge", encode(nonce))
        proof = contacts.prove_binding(self.users[presenter], nonce)
        self.send(presenter, observer, "avatar-presence", encode(profile.to_bytes(), proof.to_bytes()))
        watcher = self.users[observer]
        return contacts.recognize_avatar(watcher.contacts, profile, proof, nonce, self.reader(observer))

    def _on_impersonate(self, p: dict) -> None:
        attacker, victim, observer = p["attacker"], p["victim"], p["observer"]
        victim_avatar = self.users[victim].avatar
        clone = AvatarProfile(
            self.users[attacker].nft_id or "",
            victim_avatar.display_name,
            dict(victim_avatar.appearance),
            victim_avatar.voice_tag,
        )
        result = self._present(attacker, clone, observer)
        self._record(attacker, "impersonate", result.verdict.value, victim=victim, observer=observer)

    def _on_encounter(self, p: dict) -> None:
        user, observer = p["user"], p["observer"]
        result = self._present(user, self.users[user].avatar, observer)
        self._record(user, "encounter", result.verdict.value, observer=observer, label=result.label)

    def _on_rotate_key(self, p: dict) -> None:
        name = p["actor"]
        wallet = self.users.get(name) or self.parties.get(name)
        if wallet is None:
            self._record(name, "rotate-key", "rejected/party-gone")
            return
        n = self._rotations[name] = self._rotations.get(name, 0) + 1
        try:
            seq = wallet.rotate_key(derive_seed(self.seed, "rotate", name, str(n)), self.ledger)
        except LedgerError as exc:
            self._record(name, "rotate-key", f"rejected/{exc.code}")
            return
        self.send(name, LEDGER, "append:key", wallet.identity_keypair.public_key)
        self._record(name, "rotate-key", "ok", seq=seq)

    def _on_remove_party(self, p: dict) -> None:
        name = p["party"]
        gone = self.parties.pop(name, None)
        self._record(name, "remove-party", "ok" if gone else "rejected/party-gone")

    # -- audits ---------------------------------------------------------------

    def _secrets(self) -> list[bytes]:
        out = []
        for w in [*self.users.values(), *self.parties.values()]:
            out.extend(w.secret_material())
        return out

    def _cert_bodies(self) -> list[bytes]:
        return [c.to_bytes() for w in self.users.values() for c in w.held_certs]

    def attribute_values(self) -> list[bytes]:
        values = []
        for records in self.party_records.values():
            for attrs in records.values():
                for v in attrs.values():
                    if isinstance(v, (dt.date, str)):
                        text = v.isoformat() if isinstance(v, dt.date) else v
                        if len(text) >= 4:
                            values.append(text.encode("utf-8"))
        return values

    def audit(self) -> None:
        secrets = self._secrets()
        bodies = self._cert_bodies()
        attrs = self.attribute_values()
        for world in self.worlds.values():
            state = world.state_bytes()
            for needle, what in [*((s, "private key") for s in secrets), *((b, "certificate body") for b in bodies),
                                 *((a, "attribute value") for a in attrs)]:
                if needle in state:
                    raise InvariantBreach("credential-silo", f"world {world.world_id} holds a {what}")
        for msg in self.messages:
            if msg.event_seq != self._event_seq:
                continue
            for a in attrs:
                if a in msg.payload:
                    raise InvariantBreach("attribute-leak", f"{msg.sender}->{msg.recipient} {msg.kind}")
            for s in secrets:
                if s in msg.payload:
                    raise InvariantBreach("secret-leak", f"{msg.sender}->{msg.recipient} {msg.kind}")
        owners: dict[str, int] = {}
        for nft in self.ledger.identity_nfts():
            owners[nft.owner] = owners.get(nft.owner, 0) + 1
        if any(count > 1 for count in owners.values()):
            raise InvariantBreach("multiple-identities")

    def _check_confidential(self, plaintext: bytes) -> None:
        if plaintext in self.ledger.dumps().encode() or any(plaintext in m.payload for m in self.messages):
            raise InvariantBreach("plaintext-on-wire")


def simulate(scenario: Scenario, seed: int | None = None) -> Simulation:
    sim = Simulation(scenario, seed)
    sim.run()
    return sim


def run_scenario(scenario: Scenario, seed: int | None = None) -> Transcript:
    return simulate(scenario, seed).transcript

