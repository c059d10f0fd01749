import hashlib
import random
from dataclasses import dataclass, field

import pytest

from metasim import crypto
from metasim.channel import PrekeyDirectory
from metasim.credentials import Claim
from metasim.ledger import Ledger
from metasim.wallet import Wallet, create_prekey_bundle, create_wallet, issue_attestation


def seed_of(label) -> bytes:
    return hashlib.sha256(f"test-seed-{label}".encode()).digest()


@pytest.fixture(params=["default", "test"])
def provider(request):
    with crypto.use_provider(request.param) as p:
        yield p


@pytest.fixture
def test_provider():
    with crypto.use_provider("test") as p:
        yield p


@dataclass
class Society:
    """A ledger, a trusted party and any number of registered users."""

    ledger: Ledger = field(default_factory=Ledger)
    directory: PrekeyDirectory = field(default_factory=PrekeyDirectory)
    tp: Wallet = None
    users: dict = field(default_factory=dict)

    def __post_init__(self):
        self.tp = create_wallet(seed_of("tp"))
        self.tp.publish_key(self.ledger)

    def user(self, name: str, *, cert: str | None = "age_over_18", publish: bool = False, prekeys: int = 0) -> Wallet:
        w = create_wallet(seed_of(name))
        w.register(self.ledger)
        if cert:
            c = issue_attestation(self.tp, Claim(cert, w.nft_id), self.ledger)
            w.add_cert(c)
            if publish:
                self.ledger.publish_attestation(c)
        if prekeys:
            self.directory.publish(create_prekey_bundle(w, prekeys))
        self.users[name] = w
        return w


@pytest.fixture
def society():
    return Society()


@pytest.fixture
def rng():
    return random.Random(1234)


def pytest_terminal_summary(terminalreporter):
    acceptance = __import__("sys").modules.get("test_acceptance")
    if acceptance and acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in acceptance.RESULTS:
            terminalreporter.write_line(line)
