"""Deterministic in-memory persistent store (pages + log) with crash injection.

Page writes are atomic. Log writes land in a volatile region until ``log_sync``;
a crash keeps the synced prefix plus a seeded proper prefix of the first
unsynced write, which is how torn tails are produced.
"""

from __future__ import annotations

import json
import random
import struct
import threading
import time
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import LogicError, SimulatedCrash

PAGE_SIZE = 8192
_PID = struct.Struct("<Q")


@dataclass(frozen=True)
class FaultPlan:
    crash_after_writes: int | None = None
    seed: int = 0


@dataclass
class RawDiskView:
    """Read-only copy of everything persistent at one instant."""

    pages: dict[int, bytes]
    log: bytes
    synced: int
    master: int | None


@dataclass
class VirtualDisk:
    plan: FaultPlan = field(default_factory=FaultPlan)
    sync_latency: float = 0.0

    def __post_init__(self):
        self._latch = threading.RLock()
        self.pages: dict[int, bytes] = {}
        self.log = bytearray()
        self.synced = 0
        self.master: int | None = None
        self.stats = Counter()
        self.journal: list[tuple] = []
        self.writes = 0
        self.crashed = False
        self._unsynced: list[tuple[int, int]] = []
        self._crash_view: RawDiskView | None = None

    # -- fault injection -------------------------------------------------

    def _check_alive(self):
        if self.crashed:
            raise SimulatedCrash("disk is down")

    def _count_write(self, kind: str, log_write: tuple[int, bytes] | None = None):
        self._check_alive()
        limit = self.plan.crash_after_writes
        if limit is not None and self.writes >= limit:
            if log_write is not None:
                offset, data = log_write
                self._put_log(offset, data)
            self._crash()
            raise SimulatedCrash(f"crash injected before write #{self.writes + 1} ({kind})")
        self.writes += 1

    def _crash(self):
        rng = random.Random(self.plan.seed * 1_000_003 + self.writes)
        log = bytes(self.log[:self.synced])
        if self._unsynced:
            offset, length = self._unsynced[0]
            if offset == self.synced and length > 0:
                keep = rng.randrange(length)
                log += bytes(self.log[offset:offset + keep])
        self._crash_view = RawDiskView(dict(self.pages), log, self.synced, self.master)
        self.crashed = True
        self.journal.append(("crash", self.writes))

    def crash_now(self) -> None:
        """Power failure at this instant."""
        with self._latch:
            if not self.crashed:
                self._crash()

    def crash_image(self) -> "VirtualDisk":
        """The disk as it is found after the crash, ready for restart."""
        with self._latch:
            if not self.crashed:
                self._crash()
            return VirtualDisk.from_view(self._crash_view)

    @classmethod
    def from_view(cls, view: RawDiskView, plan: FaultPlan | None = None) -> "VirtualDisk":
        disk = cls(plan or FaultPlan())
        disk.pages = dict(view.pages)
        disk.log = bytearray(view.log)
        disk.synced = len(view.log)
        disk.master = view.master
        return disk

    # -- pages -----------------------------------------------------------

    def has_page(self, page_id: int) -> bool:
        with self._latch:
            return page_id in self.pages

    def read_page(self, page_id: int) -> bytes:
        with self._latch:
            self._check_alive()
            try:
                image = self.pages[page_id]
            except KeyError:
                raise LogicError(f"page {page_id} was never written") from None
            self.stats["page_reads"] += 1
            return image

    def write_page(self, page_id: int, image: bytes) -> None:
        if len(image) != PAGE_SIZE:
            raise ValueError("page image must be exactly one page")
        with self._latch:
            self._count_write("page")
            self.pages[page_id] = bytes(image)
            self.stats["page_writes"] += 1
            self.journal.append(("page", page_id))

    # -- log -------------------------------------------------------------

    def _put_log(self, offset: int, data: bytes):
        if offset < self.synced:
            raise LogicError("synced log bytes are immutable")
        end = offset + len(data)
        if len(self.log) < end:
            self.log.extend(bytes(end - len(self.log)))
        self.log[offset:end] = data
        self._unsynced.append((offset, len(data)))

    def log_write(self, offset: int, data: bytes) -> None:
        with self._latch:
            self._count_write("log", (offset, data))
            self._put_log(offset, data)
            self.stats["log_writes"] += 1
            self.journal.append(("log", offset, len(data)))

    def log_sync(self, on_synced=None) -> int:
        """Make every written log byte durable; ``on_synced`` runs atomically with it."""
        if self.sync_latency:
            time.sleep(self.sync_latency)
        with self._latch:
            self._check_alive()
            self.synced = len(self.log)
            self._unsynced.clear()
            self.stats["syncs"] += 1
            self.journal.append(("sync", self.synced))
            if on_synced is not None:
                on_synced(self.synced)
            return self.synced

    def log_truncate(self, size: int) -> None:
        with self._latch:
            self._count_write("truncate")
            del self.log[size:]
            self.synced = min(self.synced, size)
            self._unsynced.clear()
            self.journal.append(("truncate", size))

    def log_read(self, offset: int, length: int) -> bytes:
        with self._latch:
            self._check_alive()
            self.stats["log_reads"] += 1
            return bytes(self.log[offset:offset + length])

    def log_size(self) -> int:
        with self._latch:
            return len(self.log)

    # -- master record ---------------------------------------------------

    def write_master(self, lsn: int) -> None:
        with self._latch:
            self._count_write("master")
            self.master = lsn
            self.journal.append(("master", lsn))

    def read_master(self) -> int | None:
        with self._latch:
            self._check_alive()
            return self.master

    # -- inspection ------------------------------------------------------

    def freeze(self) -> RawDiskView:
        """Copy of the persistent state, taken while no disk I/O is in progress."""
        with self._latch:
            return RawDiskView(dict(self.pages), bytes(self.log), self.synced, self.master)

    def save(self, path) -> None:
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        view = self.freeze()
        (path / "log.bin").write_bytes(view.log[:view.synced])
        with open(path / "pages.bin", "wb") as fh:
            for pid in sorted(view.pages):
                fh.write(_PID.pack(pid))
                fh.write(view.pages[pid])
        (path / "meta.json").write_text(json.dumps({"master": view.master, "page_size": PAGE_SIZE}))

    @classmethod
    def load(cls, path, plan: FaultPlan | None = None) -> "VirtualDisk":
        path = Path(path)
        meta = json.loads((path / "meta.json").read_text())
        raw = (path / "pages.bin").read_bytes()
        pages = {}
        step = _PID.size + PAGE_SIZE
        for pos in range(0, len(raw), step):
            (pid,) = _PID.unpack_from(raw, pos)
            pages[pid] = raw[pos + _PID.size:pos + step]
        log = (path / "log.bin").read_bytes()
        return cls.from_view(RawDiskView(pages, log, len(log), meta["master"]), plan)

    @staticmethod
    def exists(path) -> bool:
        return (Path(path) / "meta.json").exists()
