"""Shared party plumbing: subscriber credentials, the home-network database,
outcome labels, and the message-driven role base class used by all three
protocol variants."""

from __future__ import annotations

import threading
from dataclasses import dataclass
from enum import Enum

from .crypto import KEY_LEN, CryptoSuite


class Outcome(str, Enum):
    COMPLETE = "complete"
    SILENT_ABORT = "silent_abort"
    MAC_FAILURE = "mac_failure"
    SYNC_FAILURE = "sync_failure"


class DecryptFailure(Exception):
    """Identity concealment could not be reversed, or the subscriber is
    unknown; the session aborts."""


@dataclass
class Usim:
    """Subscriber-side persistent credentials.  ``sqn`` is used only by the
    baseline protocol; the stateless variants never touch it."""

    supi: str
    k: bytes
    pk_hn: bytes
    sqn: int = 0

    def __post_init__(self):
        if len(self.k) != KEY_LEN:
            raise ValueError("long-term key must be 32 bytes")

    def persistent_bytes(self) -> bytes:
        return repr((self.supi, self.k, self.pk_hn, self.sqn)).encode()


@dataclass
class SubscriberRecord:
    supi: str
    k: bytes
    sqn: int = 0


class SubscriberDb:
    """Home-network subscriber database.

    Reads are lock-free; sequence-number writes serialize on one lock, which
    is all the baseline's per-subscriber ordering needs at this scale.
    """

    def __init__(self):
        self._records: dict[str, SubscriberRecord] = {}
        self._lock = threading.Lock()

    def add(self, record: SubscriberRecord) -> None:
        if record.supi in self._records:
            raise ValueError(f"duplicate subscriber {record.supi!r}")
        self._records[record.supi] = record

    def get(self, supi: str) -> SubscriberRecord | None:
        return self._records.get(supi)

    def supis(self) -> list[str]:
        return sorted(self._records)

    def next_sqn(self, supi: str) -> int:
        """Return the subscriber's current counter and advance it by one."""
        with self._lock:
            rec = self._records[supi]
            value = rec.sqn
            rec.sqn = value + 1
            return value

    def resync_sqn(self, supi: str, recovered_ue_sqn: int) -> bool:
        """Adopt the subscriber's counter + 1; refuses to move backwards."""
        with self._lock:
            rec = self._records[supi]
            candidate = recovered_ue_sqn + 1
            if candidate <= rec.sqn:
                return False
            rec.sqn = candidate
            return True

    def rollback_sqn(self, supi: str, delta: int) -> None:
        """Test/bench helper modeling a home-network state restore; the one
        event that leaves a subscriber's counter ahead of the network's."""
        with self._lock:
            rec = self._records[supi]
            rec.sqn = max(0, rec.sqn - delta)

    def persistent_bytes(self) -> bytes:
        with self._lock:
            items = sorted(
                (r.supi, r.k, r.sqn) for r in self._records.values()
            )
        return repr(items).encode()


class Party:
    """One role's per-session state machine, driven by messages.

    Subclasses register handlers per message type; ``handle`` returns a list
    of ``(destination_role, message)`` emissions.  Messages with no handler
    are ignored, which doubles as the uniform reaction to junk injected by an
    adversary.
    """

    role: str = "?"

    def __init__(self, suite: CryptoSuite):
        self.suite = suite
        self.outcome: Outcome | None = None
        self.k_seaf: bytes | None = None
        self._dispatch: dict[type, object] = {}

    @property
    def counters(self):
        return self.suite.counters

    def start(self) -> list[tuple[str, object]]:
        return []

    def handle(self, sender: str, msg) -> list[tuple[str, object]]:
        if self.outcome is not None:
            return []  # session already settled
        handler = self._dispatch.get(type(msg))
        if handler is None:
            return []
        return handler(msg)

    def finish(self) -> None:
        """Called once at quiescence; default marks unfinished sessions."""
        if self.outcome is None:
            self.outcome = Outcome.SILENT_ABORT

    def _abort(self, outcome: Outcome = Outcome.SILENT_ABORT):
        self.outcome = outcome
        return []
