"""Virtual world state as seen by its service provider."""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .encoding import encode

OPEN = "open"
RESTRICTED = "restricted"


@dataclass
class VisitorRecord:
    first_seen: int
    visit_count: int


@dataclass
class VirtualWorld:
    """A world keeps only NFT ids, visit counters and outstanding nonces.

    No keys, certificates or attribute values are stored here: users bring
    those with them, which is what lets the same identity work everywhere.
    """

    world_id: str
    access_policy: str = OPEN
    required_predicate: str | None = None
    trusted_issuers: frozenset[str] = frozenset()
    visitors: dict[str, VisitorRecord] = field(default_factory=dict)
    outstanding: dict[int, tuple[str | None, int]] = field(default_factory=dict)
    rng: random.Random = field(default_factory=random.SystemRandom, repr=False)
    clock: int = 0

    def __post_init__(self) -> None:
        if self.access_policy not in (OPEN, RESTRICTED):
            raise ValueError(f"unknown access policy {self.access_policy!r}")
        if self.access_policy == RESTRICTED and not self.required_predicate:
            raise ValueError("restricted world needs a required_predicate")
        self.trusted_issuers = frozenset(self.trusted_issuers)

    def state_bytes(self) -> bytes:
        """Canonical serialization of everything the world retains."""
        return encode(
            self.world_id,
            self.access_policy,
            self.required_predicate,
            sorted(self.trusted_issuers),
            [encode(n, r.first_seen, r.visit_count) for n, r in sorted(self.visitors.items())],
            [encode(nonce, nft, at) for nonce, (nft, at) in sorted(self.outstanding.items())],
        )
