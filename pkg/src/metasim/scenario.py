"""Scenario files: declarative actors, worlds and an event script.

Format (YAML)::

    name: demo                    # optional
    seed: 42                      # u64, overridable from the CLI
    reference_date: 2026-01-01    # "today" for trusted-party age checks
    predicates: [guild_officer]   # optional vocabulary extensions
    actors:
      users:
        - name: alice
          avatar: {display_name: Alice, appearance: {skin: teal}, voice_tag: alto}
      trusted_parties:
        - name: gov
          records:                # real-world attributes, known to this party only
            alice: {birthdate: 1990-04-12}
    worlds:
      - {id: plaza, policy: open}
      - {id: gallery, policy: restricted, predicate: age_over_18, trusted_issuers: [gov]}
    events:
      - {at: 1, kind: mint, user: alice}

Event kinds and their parameters are listed in :data:`EVENT_KINDS`.
Parameters ending in ``?`` are optional.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import yaml

from .credentials import PREDICATES
from .encoding import U64_MAX
from .errors import ScenarioError
from .world import OPEN, RESTRICTED

USER, PARTY, WORLD, ACTOR, STR, INT, BOOL = "user", "party", "world", "actor", "str", "int", "bool"

EVENT_KINDS: dict[str, dict[str, str]] = {
    "mint": {"user": USER},
    "publish-prekeys": {"user": USER, "count?": INT},
    "attest": {"party": PARTY, "user": USER, "predicate": STR, "publish?": BOOL},
    "authenticate": {"user": USER, "world": WORLD},
    "migrate": {"user": USER, "from": WORLD, "to": WORLD},
    "open-channel": {"from": USER, "to": USER, "party?": PARTY},
    "message": {"from": USER, "to": USER, "text": STR},
    "exchange-contacts": {"a": USER, "b": USER, "world": WORLD},
    "endorse": {"endorser": USER, "subject": USER, "target": USER},
    "impersonate": {"attacker": USER, "victim": USER, "observer": USER},
    "encounter": {"user": USER, "observer": USER},
    "rotate-key": {"actor": ACTOR},
    "remove-party": {"party": PARTY},
}

BUNDLED = ("demo", "rotation", "interop")


@dataclass
class UserSpec:
    name: str
    display_name: str
    appearance: dict[str, str] = field(default_factory=dict)
    voice_tag: str = ""


@dataclass
class PartySpec:
    name: str
    records: dict[str, dict[str, Any]] = field(default_factory=dict)


@dataclass
class WorldSpec:
    world_id: str
    policy: str = OPEN
    predicate: str | None = None
    trusted_issuers: list[str] = field(default_factory=list)


@dataclass
class Event:
    at: int
    kind: str
    params: dict[str, Any]
    line: int = 0


@dataclass
class Scenario:
    seed: int
    users: list[UserSpec]
    parties: list[PartySpec]
    worlds: list[WorldSpec]
    events: list[Event]
    name: str = "scenario"
    reference_date: dt.date = dt.date(2026, 1, 1)
    predicates: list[str] = field(default_factory=list)

    def user_names(self) -> set[str]:
        return {u.name for u in self.users}

    def party_names(self) -> set[str]:
        return {p.name for p in self.parties}

    def world_ids(self) -> set[str]:
        return {w.world_id for w in self.worlds}


class _LineLoader(yaml.SafeLoader):
    """Records the source line of every mapping under ``__line__``."""

    def construct_mapping(self, node, deep=False):
        mapping = super().construct_mapping(node, deep=deep)
        mapping["__line__"] = node.start_mark.line + 1
        return mapping


def _fail(code: str, where: str, line: int | None = None, what: str = "") -> ScenarioError:
    loc = f"line {line}, {where}" if line else where
    return ScenarioError(code, f"{loc}: {what}" if what else loc)


def _strip(obj):
    if isinstance(obj, dict):
        return {k: _strip(v) for k, v in obj.items() if k != "__line__"}
    if isinstance(obj, list):
        return [_strip(v) for v in obj]
    return obj


def _require(mapping: dict, key: str, where: str, kind: type | tuple = str):
    line = mapping.get("__line__")
    if key not in mapping:
        raise _fail("parse-error", f"{where}.{key}", line, "missing")
    value = mapping[key]
    if not isinstance(value, kind) or isinstance(value, bool) and kind is not bool:
        raise _fail("parse-error", f"{where}.{key}", line, f"expected {getattr(kind, '__name__', kind)}")
    return value


def _as_list(value, where: str, line) -> list:
    if value is None:
        return []
    if not isinstance(value, list):
        raise _fail("parse-error", where, line, "expected a list")
    return value


def parse_scenario(text: str, source: str = "<string>") -> Scenario:
    try:
        doc = yaml.load(text, Loader=_LineLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise _fail("parse-error", source, mark.line + 1 if mark else None, str(getattr(exc, "problem", exc))) from None
    if not isinstance(doc, dict):
        raise _fail("parse-error", source, None, "top level must be a mapping")

    allowed_top = {"name", "seed", "reference_date", "predicates", "actors", "worlds", "events", "__line__"}
    for key in doc:
        if key not in allowed_top:
            raise _fail("parse-error", str(key), doc["__line__"], "unknown top-level section")

    seed = doc.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed <= U64_MAX:
        raise _fail("parse-error", "seed", doc["__line__"], "expected u64")
    ref = doc.get("reference_date", dt.date(2026, 1, 1))
    if isinstance(ref, str):
        try:
            ref = dt.date.fromisoformat(ref)
        except ValueError:
            raise _fail("parse-error", "reference_date", doc["__line__"], "expected ISO date") from None
    if not isinstance(ref, dt.date):
        raise _fail("parse-error", "reference_date", doc["__line__"], "expected ISO date")

    predicates = [str(p) for p in _as_list(doc.get("predicates"), "predicates", doc["__line__"])]
    vocabulary = PREDICATES | set(predicates)

    actors = doc.get("actors") or {}
    if not isinstance(actors, dict):
        raise _fail("parse-error", "actors", doc["__line__"], "expected a mapping")
    users = [_parse_user(u, i) for i, u in enumerate(_as_list(actors.get("users"), "actors.users", actors.get("__line__")))]
    parties = [
        _parse_party(p, i)
        for i, p in enumerate(_as_list(actors.get("trusted_parties"), "actors.trusted_parties", actors.get("__line__")))
    ]
    worlds = [_parse_world(w, i, vocabulary) for i, w in enumerate(_as_list(doc.get("worlds"), "worlds", doc["__line__"]))]
    events = [_parse_event(e, i) for i, e in enumerate(_as_list(doc.get("events"), "events", doc["__line__"]))]

    scenario = Scenario(
        seed=seed,
        users=users,
        parties=parties,
        worlds=worlds,
        events=events,
        name=str(doc.get("name", Path(source).stem)),
        reference_date=ref,
        predicates=predicates,
    )
    _check_refs(scenario, vocabulary)
    return scenario


def _parse_user(raw, i: int) -> UserSpec:
    where = f"actors.users[{i}]"
    if not isinstance(raw, dict):
        raise _fail("parse-error", where, None, "expected a mapping")
    name = _require(raw, "name", where)
    avatar = raw.get("avatar") or {}
    if not isinstance(avatar, dict):
        raise _fail("parse-error", f"{where}.avatar", raw["__line__"], "expected a mapping")
    appearance = avatar.get("appearance") or {}
    if not isinstance(appearance, dict):
        raise _fail("parse-error", f"{where}.avatar.appearance", raw["__line__"], "expected a mapping")
    return UserSpec(
        name=name,
        display_name=str(avatar.get("display_name", name)),
        appearance={str(k): str(v) for k, v in _strip(appearance).items()},
        voice_tag=str(avatar.get("voice_tag", "")),
    )


def _parse_party(raw, i: int) -> PartySpec:
    where = f"actors.trusted_parties[{i}]"
    if not isinstance(raw, dict):
        raise _fail("parse-error", where, None, "expected a mapping")
    name = _require(raw, "name", where)
    records = raw.get("records") or {}
    if not isinstance(records, dict):
        raise _fail("parse-error", f"{where}.records", raw["__line__"], "expected a mapping")
    return PartySpec(name, {str(k): dict(_strip(v) or {}) for k, v in records.items() if k != "__line__"})


def _parse_world(raw, i: int, vocabulary: set[str]) -> WorldSpec:
    where = f"worlds[{i}]"
    if not isinstance(raw, dict):
        raise _fail("parse-error", where, None, "expected a mapping")
    line = raw["__line__"]
    world_id = _require(raw, "id", where)
    policy = raw.get("policy", OPEN)
    if policy not in (OPEN, RESTRICTED):
        raise _fail("parse-error", f"{where}.policy", line, f"unknown policy {policy!r}")
    predicate = raw.get("predicate")
    if policy == RESTRICTED and predicate not in vocabulary:
        raise _fail("parse-error", f"{where}.predicate", line, f"unknown predicate {predicate!r}")
    issuers = [str(x) for x in _as_list(raw.get("trusted_issuers"), f"{where}.trusted_issuers", line)]
    return WorldSpec(world_id, policy, predicate if policy == RESTRICTED else None, issuers)


def _parse_event(raw, i: int) -> Event:
    where = f"events[{i}]"
    if not isinstance(raw, dict):
        raise _fail("parse-error", where, None, "expected a mapping")
    line = raw["__line__"]
    at = _require(raw, "at", where, int)
    if at < 0:
        raise _fail("parse-error", f"{where}.at", line, "negative time")
    kind = _require(raw, "kind", where)
    schema = EVENT_KINDS.get(kind)
    if schema is None:
        raise _fail("parse-error", f"{where}.kind", line, f"unknown event kind {kind!r}")
    params = {k: v for k, v in raw.items() if k not in ("at", "kind", "__line__")}
    known = {k.rstrip("?") for k in schema}
    for key in params:
        if key not in known:
            raise _fail("parse-error", f"{where}.{key}", line, f"unexpected parameter for {kind}")
    for key, typ in schema.items():
        optional = key.endswith("?")
        key = key.rstrip("?")
        if key not in params:
            if optional:
                continue
            raise _fail("parse-error", f"{where}.{key}", line, "missing")
        value = params[key]
        expected = {INT: int, BOOL: bool}.get(typ, str)
        if not isinstance(value, expected) or (expected is int and isinstance(value, bool)):
            raise _fail("parse-error", f"{where}.{key}", line, f"expected {expected.__name__}")
    return Event(at, kind, _strip(params), line)


def _check_refs(s: Scenario, vocabulary: set[str]) -> None:
    users, parties, worlds = s.user_names(), s.party_names(), s.world_ids()
    for label, names in (("users", [u.name for u in s.users]), ("trusted_parties", [p.name for p in s.parties]),
                         ("worlds", [w.world_id for w in s.worlds])):
        if len(names) != len(set(names)):
            raise _fail("parse-error", label, None, "duplicate names")
    if users & parties:
        raise _fail("parse-error", "actors", None, "a name is both a user and a trusted party")
    for i, w in enumerate(s.worlds):
        for issuer in w.trusted_issuers:
            if issuer not in parties:
                raise _fail("unknown-actor-ref", f"worlds[{i}].trusted_issuers", None, issuer)
    for i, p in enumerate(s.parties):
        for subject in p.records:
            if subject not in users:
                raise _fail("unknown-actor-ref", f"actors.trusted_parties[{i}].records", None, subject)
    pools = {USER: users, PARTY: parties, WORLD: worlds, ACTOR: users | parties}
    for i, e in enumerate(s.events):
        for key, typ in EVENT_KINDS[e.kind].items():
            key = key.rstrip("?")
            if typ in pools and key in e.params and e.params[key] not in pools[typ]:
                raise _fail("unknown-actor-ref", f"events[{i}].{key}", e.line, str(e.params[key]))
        if e.kind == "attest" and e.params["predicate"] not in vocabulary:
            raise _fail("parse-error", f"events[{i}].predicate", e.line, f"unknown predicate {e.params['predicate']!r}")


def load_scenario(path: str | Path) -> Scenario:
    """Load a scenario file, or a bundled scenario by name (``demo``)."""
    path = str(path)
    if path in BUNDLED:
        text = resources.files("metasim").joinpath("scenarios", f"{path}.yaml").read_text(encoding="utf-8")
        return parse_scenario(text, source=f"{path}.yaml")
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError("parse-error", f"{path}: {exc.strerror}") from None
    return parse_scenario(text, source=path)
