"""Transaction lifecycle over private logs: update logging, commit-time LSN
assignment with atomic copy, backward-scan abort, savepoints, system transactions."""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Callable

from .errors import LogicError
from .latch import EXCLUSIVE
from .locks import X
from .logrecord import NULL_PAGE, LogRecord, RecordType, apply_image, encode, update_record
from .plog import CommitRequest
from .vlm import Entry, LogState, PrivateLog

if TYPE_CHECKING:
    from .buffer import BufferFrame
    from .engine import Engine


class TxnKind(Enum):
    USER = "user"
    SYSTEM = "system"


@dataclass(eq=False)
class Transaction:
    txn_id: int
    kind: TxnKind
    log: PrivateLog
    savepoints: list[tuple[str, int]] = field(default_factory=list)
    pages: set[int] = field(default_factory=set)
    commit_request: CommitRequest | None = None

    @property
    def state(self) -> LogState:
        return self.log.state

    @property
    def is_system(self) -> bool:
        return self.kind is TxnKind.SYSTEM

    def __repr__(self):
        return f"Transaction({self.txn_id}, {self.kind.value}, {self.state.value})"


class TransactionManager:
    def __init__(self, engine: "Engine", first_txn_id: int = 1):
        self.engine = engine
        self._next_id = first_txn_id
        self._ids_lock = threading.Lock()
        self.active: dict[int, Transaction] = {}
        # called as listener(txn, mark) after entries from ``mark`` on were undone
        self.undo_listeners: list[Callable[[Transaction, int], None]] = []

    @property
    def next_txn_id(self) -> int:
        return self._next_id

    def begin(self, kind: TxnKind = TxnKind.USER) -> Transaction:
        eng = self.engine
        if eng.recovering:
            raise LogicError("recovery in progress; transactions are not admitted yet")
        if eng.closed:
            raise LogicError("engine is shut down")
        with self._ids_lock:
            txn_id = self._next_id
            self._next_id += 1
        txn = Transaction(txn_id, kind, eng.vlm.open_log(txn_id))
        self.active[txn_id] = txn
        return txn

    # -- updates ---------------------------------------------------------

    def log_update(self, txn: Transaction, frame: "BufferFrame", offset: int, before: bytes, after: bytes,
                   rid=None) -> int | None:
        """Apply ``after`` at ``offset`` in place, logging before/after images.
        Returns the VLSN drawn, or None for an empty update."""
        if txn.state is not LogState.ACTIVE:
            raise LogicError(f"{txn!r} is not active")
        if not frame.latch.held_exclusive_by_me():
            raise LogicError("page must be latched exclusively for an update")
        if self.engine.pool.resident(frame.page_id) is not frame:
            raise LogicError(f"page {frame.page_id} is not resident")
        if not after and not before:
            return None
        if not txn.is_system and rid is not None and not self.engine.locks.holds(txn.txn_id, rid, X):
            raise LogicError(f"{txn!r} updates {rid} without an X lock")
        if frame.page.region(offset, len(before)) != bytes(before):
            raise LogicError("before-image does not match the page")
        rec = update_record(txn.txn_id, frame.page_id, offset, before, after)
        vlsn = self.engine.vlm.append(txn.log, rec)
        frame.page.buf[offset:offset + len(after)] = after
        frame.page_vlsn = vlsn
        frame.add_writer(txn.txn_id)
        txn.pages.add(frame.page_id)
        return vlsn

    # -- commit ----------------------------------------------------------

    def assign_lsns(self, txn: Transaction, size: int, offset: int | None = None) -> int:
        """Turn local LSNs into persistent offsets and chain each page record to
        the page's previous committed update, bumping the PageLSN."""
        eng = self.engine
        if offset is None:
            offset = eng.plog.reserve_space(size)
        log = txn.log
        for entry in log.live_entries():
            rec = entry.record
            with log.latch:
                rec.lsn += offset
                entry.final = True
            if rec.page_id == NULL_PAGE:
                continue
            frame = eng.pool.resident(rec.page_id)
            pinned = frame is None
            if pinned:
                frame = eng.pool.fetch(rec.page_id)
            try:
                with frame.latch.held(EXCLUSIVE):
                    rec.prev_page_lsn = frame.page.page_lsn
                    if frame.is_propagated:
                        frame.rec_lsn = rec.lsn
                    frame.page.page_lsn = rec.lsn
            finally:
                if pinned:
                    eng.pool.unpin(frame)
        return offset

    def commit(self, txn: Transaction, wait: bool = True) -> CommitRequest | None:
        """Commit ``txn``. Returns the pending request when ``wait`` is False."""
        if txn.state is not LogState.ACTIVE:
            raise LogicError(f"{txn!r} is not active")
        eng = self.engine
        vlm = eng.vlm
        if not txn.log.live_entries():
            vlm.set_state(txn.log, LogState.COMMITTING)
            vlm.set_state(txn.log, LogState.COMMITTED)
            self._finish(txn, committed=True)
            return None
        kind = RecordType.SYSTEM_COMMIT if txn.is_system else RecordType.COMMIT
        vlm.append(txn.log, LogRecord(kind, txn.txn_id))
        vlm.set_state(txn.log, LogState.COMMITTING)
        records: list[Entry] = []

        def materialize() -> int:
            records.extend(txn.log.live_entries())
            return txn.log.local_end

        def place(offset: int) -> bytes:
            self.assign_lsns(txn, txn.log.local_end, offset)
            return b"".join(encode(e.record) for e in records)

        def on_durable() -> None:
            vlm.set_state(txn.log, LogState.COMMITTED)
            eng.notify_durable(txn)

        req = CommitRequest(materialize, place, on_durable, lambda: self._finish(txn, committed=True))
        txn.commit_request = req
        eng.plog.submit(req)
        if not wait:
            return req
        if not eng.plog.threaded:
            eng.plog.process_pending()
        req.wait()
        eng.after_commit(txn)
        return req

    def _finish(self, txn: Transaction, committed: bool) -> None:
        eng = self.engine
        for pid in txn.pages:
            frame = eng.pool.resident(pid)
            if frame is not None:
                with frame.latch.held(EXCLUSIVE):
                    frame.drop_writer(txn.txn_id)
        eng.locks.release_all(txn.txn_id)
        self.active.pop(txn.txn_id, None)
        if committed:
            eng.retire_log(txn.txn_id)

    # -- rollback --------------------------------------------------------

    def _undo(self, txn: Transaction, entry: Entry) -> None:
        rec = entry.record
        frame = self.engine.pool.resident(rec.page_id)
        if frame is None:
            raise LogicError(f"uncommitted page {rec.page_id} is not resident")
        with frame.latch.held(EXCLUSIVE):
            apply_image(frame.page.buf, rec.undo)
            with txn.log.latch:
                entry.undone = True
            frame.drop_writer(txn.txn_id, 1)
        self.engine.stats["undo_ops"] += 1

    def abort(self, txn: Transaction) -> None:
        """Roll back by a backward scan of the private log; no log record is written."""
        if txn.state is not LogState.ACTIVE:
            raise LogicError(f"{txn!r} is not active")
        eng = self.engine
        with eng.coordination.held(EXCLUSIVE):
            eng.vlm.set_state(txn.log, LogState.ABORTING)
            for entry in reversed(txn.log.entries):
                if not entry.undone and entry.record.page_id != NULL_PAGE:
                    self._undo(txn, entry)
            eng.vlm.set_state(txn.log, LogState.ABORTED)
            self._finish(txn, committed=False)
            eng.vlm.release_log(txn.txn_id)
            eng.reclaim_logs(have_privilege=True)
        for listener in self.undo_listeners:
            listener(txn, 0)

    def savepoint(self, txn: Transaction, name: str) -> None:
        if txn.state is not LogState.ACTIVE:
            raise LogicError(f"{txn!r} is not active")
        txn.savepoints.append((name, len(txn.log.entries)))

    def rollback_to(self, txn: Transaction, name: str) -> int:
        """Undo every update made after savepoint ``name``; returns how many were undone."""
        if txn.state is not LogState.ACTIVE:
            raise LogicError(f"{txn!r} is not active")
        for idx in range(len(txn.savepoints) - 1, -1, -1):
            if txn.savepoints[idx][0] == name:
                break
        else:
            raise LogicError(f"unknown savepoint {name!r}")
        mark = txn.savepoints[idx][1]
        del txn.savepoints[idx + 1:]
        eng = self.engine
        with eng.coordination.held(EXCLUSIVE):
            dropped = eng.vlm.rewind(txn.log, mark)
            for entry in reversed(dropped):
                if entry.record.page_id != NULL_PAGE:
                    self._undo(txn, entry)
                else:
                    with txn.log.latch:
                        entry.undone = True
        if dropped:
            for listener in self.undo_listeners:
                listener(txn, mark)
        return len(dropped)

    # -- system transactions --------------------------------------------

    def run_system_txn(self, body: Callable[[Transaction], object]):
        """Run ``body`` in a system transaction and commit it durably; returns body's result."""
        txn = self.begin(TxnKind.SYSTEM)
        try:
            result = body(txn)
        except BaseException:
            if txn.state is LogState.ACTIVE:
                self.abort(txn)
            raise
        self.commit(txn)
        return result

