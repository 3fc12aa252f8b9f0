"""Engine assembly: wires disk, logs, buffer pool, locks, transactions, cleaning,
checkpoints and the record store, and runs restart when opened on a used disk."""

from __future__ import annotations

import logging
import threading
from collections import Counter
from dataclasses import dataclass
from typing import Callable

from .buffer import DEFAULT_POOL_FRAMES, BufferPool
from .errors import LogicError
from .latch import EXCLUSIVE, RWLatch
from .locks import DEFAULT_LOCK_TIMEOUT, LockTable
from .plog import PersistentLog
from .propagation import Propagator
from .recovery import AnalysisResult, restart
from .sim.disk import VirtualDisk
from .snapshot import SnapshotHandle, fix_at
from .store import RecordStore
from .txn import Transaction, TransactionManager, TxnKind
from .vlm import DEFAULT_EXTENT_SIZE, DEFAULT_MAX_EXTENTS, VolatileLogManager

log = logging.getLogger(__name__)


@dataclass
class EngineConfig:
    pool_frames: int = DEFAULT_POOL_FRAMES
    extent_size: int = DEFAULT_EXTENT_SIZE
    max_extents: int = DEFAULT_MAX_EXTENTS
    spr_wait: float = 0.0
    group_commit_window: float = 0.001
    max_batch: int = 64
    checkpoint_interval: int = 256  # committed transactions between checkpoints; 0 disables
    lock_timeout: float = DEFAULT_LOCK_TIMEOUT
    threaded: bool = True  # False: commits are processed by whoever calls process_pending
    cleaner: bool = False
    cleaner_interval: float = 0.005
    cleaner_budget: int = 16


class Engine:
    def __init__(self, disk: VirtualDisk | None = None, config: EngineConfig | None = None):
        self.disk = disk if disk is not None else VirtualDisk()
        self.config = config or EngineConfig()
        cfg = self.config
        self.stats: Counter = Counter()
        self.coordination = RWLatch()
        self.recovering = False
        self.closed = False
        self.vlm = VolatileLogManager(cfg.extent_size, cfg.max_extents, cfg.spr_wait)
        self.plog = PersistentLog(self.disk, group_commit_window=cfg.group_commit_window,
                                  max_batch=cfg.max_batch, threaded=cfg.threaded)
        self.propagator = Propagator(self)
        self.pool = BufferPool(self.disk, cfg.pool_frames, flusher=self.propagator.flush_page)
        self.locks = LockTable(cfg.lock_timeout)
        self.tm = TransactionManager(self)
        # listener(txn) runs atomically with the sync that makes txn durable
        self.durable_listeners: list[Callable[[Transaction], None]] = []
        self._retired: list[int] = []
        self._retired_lock = threading.Lock()
        self._commits_since_checkpoint = 0
        self._checkpoint_lock = threading.Lock()
        self.last_recovery: AnalysisResult | None = None
        self.store = RecordStore(self)

        if self.disk.log_size() or self.disk.read_master() is not None or self.disk.pages:
            self.recovering = True
            try:
                self.last_recovery = restart(self)
            except BaseException:
                self.plog.shutdown()
                raise
            self.recovering = False
        self.store.open()

        self._cleaner_stop = threading.Event()
        self._cleaner: threading.Thread | None = None
        if cfg.cleaner:
            self._cleaner = threading.Thread(target=self._clean_loop, name="page-cleaner", daemon=True)
            self._cleaner.start()

    # -- hooks used by the transaction manager --------------------------

    def notify_durable(self, txn: Transaction) -> None:
        for listener in self.durable_listeners:
            listener(txn)

    def after_commit(self, txn: Transaction) -> None:
        interval = self.config.checkpoint_interval
        if interval <= 0 or txn.is_system:
            return
        with self._checkpoint_lock:
            self._commits_since_checkpoint += 1
            due = self._commits_since_checkpoint >= interval
            if due:
                self._commits_since_checkpoint = 0
        if due:
            self.propagator.take_checkpoint()

    def retire_log(self, txn_id: int) -> None:
        with self._retired_lock:
            self._retired.append(txn_id)
        self.reclaim_logs()

    def reclaim_logs(self, have_privilege: bool = False) -> int:
        """Free retired committed logs. A flusher between its page copy and its
        candidate scan holds the coordination privilege shared, so logs are only
        freed while it can be taken exclusively."""
        if not have_privilege and not self.coordination.acquire(EXCLUSIVE, blocking=False):
            return 0
        try:
            with self._retired_lock:
                retired, self._retired = self._retired, []
            for txn_id in retired:
                self.vlm.release_log(txn_id)
            return len(retired)
        finally:
            if not have_privilege:
                self.coordination.release(EXCLUSIVE)

    # -- transactions ----------------------------------------------------

    def begin(self) -> Transaction:
        return self.tm.begin(TxnKind.USER)

    def commit(self, txn: Transaction, wait: bool = True):
        return self.tm.commit(txn, wait)

    def abort(self, txn: Transaction) -> None:
        self.tm.abort(txn)

    def savepoint(self, txn: Transaction, name: str) -> None:
        self.tm.savepoint(txn, name)

    def rollback_to(self, txn: Transaction, name: str) -> int:
        return self.tm.rollback_to(txn, name)

    def process_pending(self) -> int:
        return self.plog.process_pending()

    # -- records ---------------------------------------------------------

    def insert(self, txn, payload: bytes, lock_timeout=None):
        return self.store.insert(txn, payload, lock_timeout)

    def update(self, txn, rid, payload: bytes, lock_timeout=None) -> None:
        self.store.update(txn, rid, payload, lock_timeout)

    def delete(self, txn, rid, lock_timeout=None) -> None:
        self.store.delete(txn, rid, lock_timeout)

    def read(self, txn, rid, lock_timeout=None) -> bytes:
        return self.store.read(txn, rid, lock_timeout)

    # -- snapshots -------------------------------------------------------

    def snapshot_begin(self) -> SnapshotHandle:
        return SnapshotHandle(self, self.plog.durable_lsn)

    def snapshot_read(self, handle: SnapshotHandle, page_id: int):
        return handle.page(page_id)

    def fix_at(self, page_id: int, lsn: int):
        return fix_at(self, page_id, lsn)

    # -- propagation -----------------------------------------------------

    def checkpoint(self) -> int:
        return self.propagator.take_checkpoint()

    def flush_all(self) -> int:
        return self.propagator.flush_all()

    def _clean_loop(self) -> None:
        cfg = self.config
        while not self._cleaner_stop.wait(cfg.cleaner_interval):
            try:
                self.propagator.clean_pass(cfg.cleaner_budget)
            except Exception:
                if self.plog.dead is not None or self.closed:
                    return
                log.exception("page cleaner pass failed")

    # -- life cycle ------------------------------------------------------

    def _stop_threads(self) -> None:
        self._cleaner_stop.set()
        self.vlm.shutdown()
        if self._cleaner is not None and self._cleaner is not threading.current_thread():
            self._cleaner.join()
        self.plog.shutdown()

    def shutdown(self) -> None:
        """Clean shutdown: flush every page and write a final checkpoint."""
        if self.closed:
            return
        if self.tm.active:
            raise LogicError(f"{len(self.tm.active)} transactions still active")
        self._cleaner_stop.set()
        if self._cleaner is not None:
            self._cleaner.join()
        self.flush_all()
        self.checkpoint()
        self.closed = True
        self._stop_threads()

    def crash(self) -> VirtualDisk:
        """Power failure now; returns the disk as found afterwards."""
        self.disk.crash_now()
        self.closed = True
        self._stop_threads()
        return self.disk.crash_image()

    def __enter__(self):
        return self

    def __exit__(self, exc_type, *_):
        if exc_type is None:
            self.shutdown()
        else:
            self.closed = True
            self._stop_threads()
