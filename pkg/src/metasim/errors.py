"""Exception types. Every error carries a stable wire-level ``code``."""

from __future__ import annotations


class MetasimError(Exception):
    def __init__(self, code: str, detail: str = ""):
        super().__init__(f"{code}: {detail}" if detail else code)
        self.code = code
        self.detail = detail


class CryptoError(MetasimError):
    pass


class EncodingError(MetasimError):
    pass


class LedgerError(MetasimError):
    pass


class WalletError(MetasimError):
    pass


class ChannelError(MetasimError):
    pass


class ContactError(MetasimError):
    pass


class ScenarioError(MetasimError):
    pass


class InvariantBreach(MetasimError):
    """Raised by the simulator when a post-event audit fails."""
