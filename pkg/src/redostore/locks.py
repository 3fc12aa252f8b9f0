"""Record-granularity S/X lock table with FIFO waits and timeout-based deadlock handling."""

from __future__ import annotations

import threading
import time
from collections import defaultdict, deque
from dataclasses import dataclass, field

from .errors import LockConflict, LockTimeout

S, X = "S", "X"
DEFAULT_LOCK_TIMEOUT = 0.5


def _compatible(held: str, wanted: str) -> bool:
    return held == S and wanted == S


@dataclass
class _Entry:
    holders: dict[int, str] = field(default_factory=dict)
    waiters: deque = field(default_factory=deque)


class LockTable:
    def __init__(self, timeout: float = DEFAULT_LOCK_TIMEOUT):
        self.timeout = timeout
        self._cond = threading.Condition()
        self._table: dict[object, _Entry] = {}
        self._held: dict[int, set] = defaultdict(set)
        self.requests = 0

    def _grantable(self, entry: _Entry, txn_id: int, mode: str, ticket) -> bool:
        for holder, held in entry.holders.items():
            if holder != txn_id and not _compatible(held, mode):
                return False
        if txn_id in entry.holders:
            return True  # upgrades bypass the queue
        return not entry.waiters or entry.waiters[0] is ticket

    def acquire(self, txn_id: int, rid, mode: str = X, timeout: float | None = None) -> None:
        """Grant ``mode`` on ``rid``. ``timeout=0`` never waits (raises LockConflict)."""
        timeout = self.timeout if timeout is None else timeout
        with self._cond:
            self.requests += 1
            entry = self._table.setdefault(rid, _Entry())
            held = entry.holders.get(txn_id)
            if held == X or held == mode:
                return
            ticket = object()
            if (txn_id in entry.holders or not entry.waiters) and self._grantable(entry, txn_id, mode, None):
                self._grant(entry, txn_id, rid, mode)
                return
            if timeout == 0:
                raise LockConflict(f"txn {txn_id}: {mode} lock on {rid} is not available")
            entry.waiters.append(ticket)
            deadline = time.monotonic() + timeout
            try:
                while not self._grantable(entry, txn_id, mode, ticket):
                    left = deadline - time.monotonic()
                    if left <= 0:
                        raise LockTimeout(f"txn {txn_id}: timed out waiting for {mode} lock on {rid}")
                    self._cond.wait(left)
            finally:
                entry.waiters.remove(ticket)
                self._cond.notify_all()
            self._grant(entry, txn_id, rid, mode)

    def _grant(self, entry: _Entry, txn_id: int, rid, mode: str) -> None:
        entry.holders[txn_id] = X if X in (mode, entry.holders.get(txn_id)) else S
        self._held[txn_id].add(rid)

    def holds(self, txn_id: int, rid, mode: str = S) -> bool:
        with self._cond:
            entry = self._table.get(rid)
            held = entry.holders.get(txn_id) if entry else None
            return held == X or (held is not None and held == mode)

    def release_all(self, txn_id: int) -> int:
        with self._cond:
            rids = self._held.pop(txn_id, set())
            for rid in rids:
                entry = self._table[rid]
                entry.holders.pop(txn_id, None)
                if not entry.holders and not entry.waiters:
                    del self._table[rid]
            self._cond.notify_all()
            return len(rids)

    def held_by(self, txn_id: int) -> set:
        with self._cond:
            return set(self._held.get(txn_id, ()))

    def holders(self, rid) -> dict[int, str]:
        with self._cond:
            entry = self._table.get(rid)
            return dict(entry.holders) if entry else {}
