"""Append-only persistent log: space reservation, atomic group copy, group commit."""

from __future__ import annotations

import logging
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

from .errors import EngineError, LogicError, ResourceError, SimulatedCrash
from .logrecord import MIN_RECORD_SIZE, NULL_LSN, LogRecord, decode
from .sim.disk import VirtualDisk

log = logging.getLogger(__name__)

MAX_LOG_SIZE = 1 << 40


@dataclass(eq=False)
class CommitRequest:
    """One member of a commit batch.

    ``materialize`` runs in commit order and returns the byte size to reserve;
    ``place`` receives the reserved offset and returns the bytes to copy;
    ``on_durable`` runs atomically with the sync that makes them durable;
    ``finish`` runs afterwards, before the submitter is released.
    """

    materialize: Callable[[], int]
    place: Callable[[int], bytes]
    on_durable: Callable[[], None] | None = None
    finish: Callable[[], None] | None = None
    alone: bool = False
    lsn: int = NULL_LSN
    done: threading.Event = field(default_factory=threading.Event)
    error: BaseException | None = None

    def wait(self, timeout: float | None = None) -> int:
        if not self.done.wait(timeout):
            raise EngineError("commit acknowledgment timed out")
        if self.error is not None:
            raise self.error
        return self.lsn


class LogScan:
    """Forward iterator over intact records; ``end`` is the byte after the last one."""

    def __init__(self, data: bytes, start: int):
        self._data = data
        self._base = start
        self._pos = 0
        self.end = start

    def __iter__(self):
        return self

    def __next__(self) -> LogRecord:
        rec = decode(self._data, self._pos)
        if not rec:
            raise StopIteration
        self._pos += rec.size
        self.end = self._base + self._pos
        return rec


class PersistentLog:
    def __init__(self, disk: VirtualDisk, *, group_commit_window: float = 0.001, max_batch: int = 64,
                 threaded: bool = True):
        self.disk = disk
        self.end_offset = disk.log_size()
        self.durable_lsn = self.end_offset
        self.group_commit_window = group_commit_window
        self.max_batch = max_batch
        self.threaded = threaded
        self.reads = 0
        self.batches = 0
        self._reserve_latch = threading.Lock()
        self._durable_cond = threading.Condition()
        self._queue: deque[CommitRequest] = deque()
        self._queue_cond = threading.Condition()
        self._process_lock = threading.RLock()
        self._stopping = False
        self.dead: BaseException | None = None
        self._daemon: threading.Thread | None = None
        if threaded:
            self._daemon = threading.Thread(target=self._run, name="commit-daemon", daemon=True)
            self._daemon.start()

    # -- space -----------------------------------------------------------

    def reserve_space(self, size: int) -> int:
        if size <= 0:
            raise ValueError("reservation must be positive")
        with self._reserve_latch:
            offset = self.end_offset
            if offset + size > MAX_LOG_SIZE:
                raise ResourceError("log device full")
            self.end_offset = offset + size
            return offset

    def atomic_copy(self, base: int, data: bytes) -> None:
        """Write one transaction's group at its reserved offset (made durable by the next sync)."""
        self.disk.log_write(base, data)

    # -- group commit ----------------------------------------------------

    def submit(self, req: CommitRequest) -> CommitRequest:
        if self.dead is not None:
            raise EngineError("persistent log is down") from self.dead
        with self._queue_cond:
            if self._stopping:
                raise EngineError("commit daemon is shut down")
            self._queue.append(req)
            self._queue_cond.notify_all()
        return req

    def pending(self) -> int:
        with self._queue_cond:
            return len(self._queue)

    def _take_batch(self) -> list[CommitRequest]:
        batch = []
        with self._queue_cond:
            while self._queue and len(batch) < self.max_batch:
                if self._queue[0].alone:
                    if not batch:
                        batch.append(self._queue.popleft())
                    break
                batch.append(self._queue.popleft())
        return batch

    def process_pending(self) -> int:
        """Drain the queue in the calling thread; returns the number of requests completed."""
        done = 0
        while True:
            batch = self._take_batch()
            if not batch:
                return done
            self._process(batch)
            done += len(batch)

    def _process(self, batch: list[CommitRequest]) -> None:
        with self._process_lock:
            try:
                if self.dead is not None:
                    raise EngineError("persistent log is down") from self.dead
                sizes = [req.materialize() for req in batch]
                offset = self.reserve_space(sum(sizes))
                writes = []
                for req, size in zip(batch, sizes):
                    req.lsn = offset
                    data = req.place(offset)
                    if len(data) != size:
                        raise LogicError("commit group size differs from its reservation")
                    writes.append((offset, data))
                    offset += size
                for base, data in writes:
                    self.atomic_copy(base, data)
                self.disk.log_sync(lambda end: self._synced(batch, end))
                self.batches += 1
                for req in batch:
                    if req.finish is not None:
                        req.finish()
            except BaseException as exc:
                if isinstance(exc, SimulatedCrash) or self.dead is None:
                    self.dead = exc
                for req in batch:
                    req.error = exc
                    req.done.set()
                with self._durable_cond:
                    self._durable_cond.notify_all()
                if not isinstance(exc, EngineError):
                    raise
                return
            for req in batch:
                req.done.set()

    def _synced(self, batch: list[CommitRequest], end: int) -> None:
        with self._durable_cond:
            self.durable_lsn = end
            self._durable_cond.notify_all()
        for req in batch:
            if req.on_durable is not None:
                req.on_durable()

    def _run(self) -> None:
        while True:
            with self._queue_cond:
                while not self._queue and not self._stopping:
                    self._queue_cond.wait()
                if not self._queue and self._stopping:
                    return
                if self.group_commit_window > 0:
                    deadline = time.monotonic() + self.group_commit_window
                    while len(self._queue) < self.max_batch and not self._stopping:
                        left = deadline - time.monotonic()
                        if left <= 0:
                            break
                        self._queue_cond.wait(left)
            self.process_pending()
            if self.dead is not None:
                self._fail_queue()
                return

    def _fail_queue(self):
        with self._queue_cond:
            pending = list(self._queue)
            self._queue.clear()
            self._stopping = True
        for req in pending:
            req.error = EngineError("persistent log is down")
            req.done.set()

    def wait_durable_beyond(self, lsn: int) -> None:
        """Block until the byte at ``lsn`` is durable (its whole commit batch is synced)."""
        if lsn == NULL_LSN:
            return
        if not self.threaded:
            if self.durable_lsn <= lsn:
                self.process_pending()
        with self._durable_cond:
            while self.durable_lsn <= lsn:
                if self.dead is not None:
                    raise EngineError("persistent log is down") from self.dead
                self._durable_cond.wait(0.05)

    def shutdown(self) -> None:
        with self._queue_cond:
            self._stopping = True
            self._queue_cond.notify_all()
        if self._daemon is not None:
            self._daemon.join()
        self._fail_queue()

    # -- reading ---------------------------------------------------------

    def scan_from(self, start: int = 0, end: int | None = None) -> LogScan:
        size = self.disk.log_size() if end is None else end
        self.reads += 1
        data = self.disk.log_read(start, max(0, size - start))
        return LogScan(data, start)

    def read_record(self, lsn: int) -> LogRecord:
        if lsn == NULL_LSN or lsn >= self.durable_lsn:
            raise LogicError(f"lsn {lsn:#x} is not in the durable log")
        self.reads += 1
        head = self.disk.log_read(lsn, 4)
        total = int.from_bytes(head, "little") if len(head) == 4 else 0
        if total < MIN_RECORD_SIZE:
            raise LogicError(f"no record boundary at {lsn}")
        rec = decode(self.disk.log_read(lsn, total))
        if not rec or rec.lsn != lsn:
            raise LogicError(f"no record boundary at {lsn}")
        return rec
