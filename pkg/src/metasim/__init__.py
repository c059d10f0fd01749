"""Self-sovereign identity for interoperable virtual worlds.

Ledger-anchored soulbound identity NFTs, trusted-party attestations,
challenge-response world admission, avatar recognition and X3DH channels,
plus a deterministic multi-world simulator that drives them.
"""

from .errors import (
    ChannelError,
    ContactError,
    CryptoError,
    InvariantBreach,
    LedgerError,
    MetasimError,
    ScenarioError,
    WalletError,
)

__version__ = "0.1.0"

__all__ = [
    "ChannelError",
    "ContactError",
    "CryptoError",
    "InvariantBreach",
    "LedgerError",
    "MetasimError",
    "ScenarioError",
    "WalletError",
]
