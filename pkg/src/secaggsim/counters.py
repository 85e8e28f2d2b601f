"""Operation counters for complexity comparisons between protocols."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field


@dataclass
class OpCounters:
    """Instrumented operation and traffic counts for one run.

    PRG expansions and key agreements are attributed per user so tests can
    assert exact per-user formulas; server-side recovery work is counted
    as individual mask cancellations.
    """

    prg_by_user: Counter = field(default_factory=Counter)
    prg_server: int = 0
    key_agreements_by_user: Counter = field(default_factory=Counter)
    key_randomizations_server: int = 0
    shares_created: int = 0
    shares_reconstructed: int = 0
    mask_cancellations: int = 0
    bytes_user_to_server: int = 0
    bytes_server_to_user: int = 0

    def prg_user_total(self) -> int:
        return sum(self.prg_by_user.values())

    def per_user_prg(self, n_users: int) -> float:
        return self.prg_user_total() / n_users

    def per_user_bytes(self, n_users: int) -> float:
        return (self.bytes_user_to_server + self.bytes_server_to_user) / n_users

    def as_dict(self) -> dict:
        return {
            "prg_user_total": self.prg_user_total(),
            "prg_server": self.prg_server,
            "key_agreements_user_total": sum(self.key_agreements_by_user.values()),
            "key_randomizations_server": self.key_randomizations_server,
            "shares_created": self.shares_created,
            "shares_reconstructed": self.shares_reconstructed,
            "mask_cancellations": self.mask_cancellations,
            "bytes_user_to_server": self.bytes_user_to_server,
            "bytes_server_to_user": self.bytes_server_to_user,
        }
