"""Volatile log manager: per-transaction private logs held in fixed-size extents.

Every page-affecting append draws a ticket from one global counter (the VLSN).
Single-page rollback finds a page's uncommitted updates by scanning the private
logs whose StartVLSN lies below the page copy's PageVLSN.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from enum import Enum

from .errors import LogicError, ResourceError
from .logrecord import NULL_PAGE, LogRecord

DEFAULT_EXTENT_SIZE = 64 * 1024
DEFAULT_MAX_EXTENTS = 4096


class LogState(Enum):
    ACTIVE = "active"
    COMMITTING = "committing"
    COMMITTED = "committed"
    ABORTING = "aborting"
    ABORTED = "aborted"


_TRANSITIONS = {
    LogState.ACTIVE: {LogState.COMMITTING, LogState.ABORTING},
    LogState.COMMITTING: {LogState.COMMITTED},
    LogState.ABORTING: {LogState.ABORTED},
}


@dataclass(slots=True)
class Entry:
    record: LogRecord
    vlsn: int
    undone: bool = False
    final: bool = False  # record.lsn holds the persistent offset


@dataclass(slots=True)
class Extent:
    id: int
    capacity: int
    owner_txn: int
    used: int = 0
    next_extent: int | None = None


@dataclass(slots=True)
class Candidate:
    record: LogRecord
    vlsn: int
    state: LogState
    undone: bool
    final: bool


@dataclass
class PrivateLog:
    txn_id: int
    start_vlsn: int
    extents: list[Extent]
    state: LogState = LogState.ACTIVE
    entries: list[Entry] = field(default_factory=list)
    local_end: int = 0
    latch: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @property
    def head_extent(self) -> Extent:
        return self.extents[0]

    def live_entries(self) -> list[Entry]:
        return [e for e in self.entries if not e.undone]


class VolatileLogManager:
    def __init__(self, extent_size: int = DEFAULT_EXTENT_SIZE, max_extents: int = DEFAULT_MAX_EXTENTS,
                 spr_wait: float = 0.0):
        self.extent_size = extent_size
        self.max_extents = max_extents
        self.spr_wait = spr_wait
        self._counter = 0
        self._counter_lock = threading.Lock()
        self._registry: dict[int, PrivateLog] = {}
        self._registry_latch = threading.Lock()
        self._free_extents: list[int] = []
        self._allocated = 0
        self._shutdown = threading.Event()

    # -- extents ---------------------------------------------------------

    def _allocate_extent(self, txn_id: int) -> Extent:
        with self._registry_latch:
            if self._free_extents:
                ext_id = self._free_extents.pop()
            elif self._allocated < self.max_extents:
                ext_id = self._allocated
                self._allocated += 1
            else:
                raise ResourceError("volatile log extent pool exhausted")
        return Extent(ext_id, self.extent_size, txn_id)

    @property
    def extents_in_use(self) -> int:
        with self._registry_latch:
            return self._allocated - len(self._free_extents)

    # -- counter ---------------------------------------------------------

    @property
    def current_vlsn(self) -> int:
        return self._counter

    def _next_vlsn(self) -> int:
        with self._counter_lock:
            self._counter += 1
            return self._counter

    # -- private logs ----------------------------------------------------

    def open_log(self, txn_id: int) -> PrivateLog:
        with self._registry_latch:
            if txn_id in self._registry:
                raise LogicError(f"transaction {txn_id} already has an open log")
        extent = self._allocate_extent(txn_id)
        with self._counter_lock:
            start = self._counter
        log = PrivateLog(txn_id, start, [extent])
        with self._registry_latch:
            self._registry[txn_id] = log
        return log

    def get(self, txn_id: int) -> PrivateLog | None:
        with self._registry_latch:
            return self._registry.get(txn_id)

    def append(self, log: PrivateLog, rec: LogRecord) -> int:
        """Store ``rec`` at the private log's end and return its VLSN (0 if it
        touches no page). The caller holds the page latch for page records."""
        size = rec.size
        if size > self.extent_size:
            raise ResourceError("log record larger than an extent")
        with log.latch:
            if log.state is not LogState.ACTIVE:
                raise LogicError(f"append to a {log.state.value} log")
            tail = log.extents[-1]
            if tail.used + size > tail.capacity:
                new = self._allocate_extent(log.txn_id)
                tail.next_extent = new.id
                log.extents.append(new)
                tail = new
            tail.used += size
            rec.lsn = log.local_end
            log.local_end += size
            vlsn = self._next_vlsn() if rec.page_id != NULL_PAGE else 0
            rec.vlsn = vlsn
            log.entries.append(Entry(rec, vlsn))
            return vlsn

    def rewind(self, log: PrivateLog, mark: int) -> list[Entry]:
        """Logically truncate entries past ``mark``; returns them for undo.
        Local LSNs of later appends continue from the first removed entry."""
        with log.latch:
            dropped = [e for e in log.entries[mark:] if not e.undone]
            if dropped:
                log.local_end = dropped[0].record.lsn
            return dropped

    def set_state(self, log: PrivateLog, new_state: LogState) -> None:
        with log.latch:
            if new_state not in _TRANSITIONS.get(log.state, ()):
                raise LogicError(f"illegal log transition {log.state.value} -> {new_state.value}")
            log.state = new_state

    def collect_undo_candidates(self, page_id: int, upper_vlsn: int) -> list[Candidate]:
        with self._registry_latch:
            logs = list(self._registry.values())
        found = []
        for log in logs:
            if log.start_vlsn >= upper_vlsn:
                continue
            with log.latch:
                for e in log.entries:
                    if e.vlsn and e.vlsn <= upper_vlsn and e.record.page_id == page_id:
                        found.append(Candidate(e.record, e.vlsn, log.state, e.undone, e.final))
        found.sort(key=lambda c: c.vlsn, reverse=True)
        return found

    def release_log(self, txn_id: int) -> None:
        with self._registry_latch:
            log = self._registry.get(txn_id)
        if log is None:
            raise LogicError(f"no open log for transaction {txn_id}")
        with log.latch:
            if log.state not in (LogState.COMMITTED, LogState.ABORTED):
                raise LogicError(f"cannot release a {log.state.value} log")
            with self._registry_latch:
                del self._registry[txn_id]
                self._free_extents.extend(ext.id for ext in log.extents)

    def open_logs(self) -> list[PrivateLog]:
        with self._registry_latch:
            return list(self._registry.values())

    # -- waiting technique ----------------------------------------------

    def configurable_wait(self, duration: float | None = None) -> None:
        duration = self.spr_wait if duration is None else duration
        if duration > 0:
            self._shutdown.wait(duration)

    def shutdown(self) -> None:
        self._shutdown.set()
