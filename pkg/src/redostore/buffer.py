"""Buffer pool with per-frame latches and the committed/propagated page life cycle.

A frame is *propagated* iff its PageLSN equals the PageLSN of the last image known
to be on disk, and *committed* iff no unfinished transaction has an un-undone
update on it. Uncommitted frames are never evicted.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable

from .errors import LogicError, ResourceError
from .latch import EXCLUSIVE, RWLatch
from .logrecord import NULL_LSN
from .page import Page
from .sim.disk import VirtualDisk

DEFAULT_POOL_FRAMES = 1024

COMMITTED, UNCOMMITTED = "committed", "uncommitted"
PROPAGATED, UNPROPAGATED = "propagated", "unpropagated"


@dataclass(eq=False)
class BufferFrame:
    page_id: int
    page: Page
    propagated_lsn: int
    page_vlsn: int = 0
    rec_lsn: int = NULL_LSN  # oldest committed update not yet known to be on disk
    pins: int = 0
    referenced: bool = True
    writers: dict[int, int] = field(default_factory=dict)
    latch: RWLatch = field(default_factory=RWLatch, repr=False)
    flush_lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @property
    def page_lsn(self) -> int:
        return self.page.page_lsn

    @property
    def is_propagated(self) -> bool:
        return self.propagated_lsn == self.page.page_lsn

    @property
    def is_committed(self) -> bool:
        return not self.writers

    @property
    def state(self) -> tuple[str, str]:
        return (
            COMMITTED if self.is_committed else UNCOMMITTED,
            PROPAGATED if self.is_propagated else UNPROPAGATED,
        )

    def add_writer(self, txn_id: int) -> None:
        self.writers[txn_id] = self.writers.get(txn_id, 0) + 1

    def drop_writer(self, txn_id: int, count: int | None = None) -> None:
        left = 0 if count is None else self.writers.get(txn_id, 0) - count
        if left > 0:
            self.writers[txn_id] = left
        else:
            self.writers.pop(txn_id, None)


class BufferPool:
    def __init__(self, disk: VirtualDisk, capacity: int = DEFAULT_POOL_FRAMES,
                 flusher: Callable[[int], bool] | None = None):
        if capacity < 2:
            raise ValueError("pool needs at least two frames")
        self.disk = disk
        self.capacity = capacity
        self.flusher = flusher
        self._frames: dict[int, BufferFrame] = {}
        self._clock: list[int] = []
        self._hand = 0
        self._latch = threading.RLock()
        self.misses = 0

    def __contains__(self, page_id: int) -> bool:
        with self._latch:
            return page_id in self._frames

    def __len__(self) -> int:
        with self._latch:
            return len(self._frames)

    def frames(self) -> list[BufferFrame]:
        with self._latch:
            return list(self._frames.values())

    def resident(self, page_id: int) -> BufferFrame | None:
        with self._latch:
            return self._frames.get(page_id)

    def fetch(self, page_id: int) -> BufferFrame:
        """Pin the page's frame, reading it from disk on a miss."""
        while True:
            with self._latch:
                frame = self._frames.get(page_id)
                if frame is not None:
                    frame.pins += 1
                    frame.referenced = True
                    return frame
                if len(self._frames) < self.capacity or self._evict_one_clean():
                    image = self.disk.read_page(page_id)
                    self.misses += 1
                    page = Page(image)
                    return self._install(page_id, page, page.page_lsn)
                victim = self._pick_dirty_victim()
            if victim is None:
                raise ResourceError("no evictable frame")
            self._flush(victim)

    def create(self, page_id: int) -> BufferFrame:
        """Pin a frame holding a never-written (blank) page."""
        while True:
            with self._latch:
                if page_id in self._frames or self.disk.has_page(page_id):
                    raise LogicError(f"page {page_id} already exists")
                if len(self._frames) < self.capacity or self._evict_one_clean():
                    page = Page()
                    return self._install(page_id, page, page.page_lsn)
                victim = self._pick_dirty_victim()
            if victim is None:
                raise ResourceError("no evictable frame")
            self._flush(victim)

    def load_image(self, page_id: int, page: Page) -> BufferFrame:
        """Install an image produced outside the pool (recovery of never-written pages)."""
        with self._latch:
            if page_id in self._frames:
                raise LogicError(f"page {page_id} already resident")
            if len(self._frames) >= self.capacity and not self._evict_one_clean():
                raise ResourceError("no evictable frame")
            frame = self._install(page_id, page, NULL_LSN if not self.disk.has_page(page_id) else page.page_lsn)
            return frame

    def _install(self, page_id: int, page: Page, propagated: int) -> BufferFrame:
        frame = BufferFrame(page_id, page, propagated, pins=1)
        self._frames[page_id] = frame
        self._clock.append(page_id)
        return frame

    def unpin(self, frame: BufferFrame) -> None:
        with self._latch:
            if frame.pins <= 0:
                raise LogicError("unpin of an unpinned frame")
            frame.pins -= 1

    @contextmanager
    def fixed(self, page_id: int, mode: str = EXCLUSIVE):
        frame = self.fetch(page_id)
        try:
            with frame.latch.held(mode):
                yield frame
        finally:
            self.unpin(frame)

    # -- replacement -----------------------------------------------------

    def _evictable(self, frame: BufferFrame) -> bool:
        return frame.pins == 0 and frame.is_committed and frame.latch.idle

    def _evict_one_clean(self) -> bool:
        """Clock sweep over clean frames; dirty ones are left for the caller to flush."""
        n = len(self._clock)
        for _ in range(2 * n):
            if not self._clock:
                return False
            self._hand %= len(self._clock)
            pid = self._clock[self._hand]
            frame = self._frames[pid]
            if frame.referenced:
                frame.referenced = False
                self._hand += 1
                continue
            if self._evictable(frame) and frame.is_propagated:
                self._drop(pid)
                return True
            self._hand += 1
        return False

    def _pick_dirty_victim(self) -> int | None:
        for pid in self._clock:
            frame = self._frames[pid]
            if self._evictable(frame) and not frame.is_propagated:
                return pid
        return None

    def _drop(self, page_id: int) -> None:
        del self._frames[page_id]
        idx = self._clock.index(page_id)
        del self._clock[idx]
        if idx < self._hand:
            self._hand -= 1

    def _flush(self, page_id: int) -> None:
        if self.flusher is None:
            raise ResourceError("pool is full of unpropagated frames and has no flusher")
        self.flusher(page_id)

    def evict(self, frame: BufferFrame) -> bool:
        """Evict ``frame``, flushing it first if unpropagated. Uncommitted or pinned
        frames are refused (returns False)."""
        while True:
            with self._latch:
                if self._frames.get(frame.page_id) is not frame:
                    return False
                if not self._evictable(frame):
                    return False
                if frame.is_propagated:
                    self._drop(frame.page_id)
                    return True
            self._flush(frame.page_id)

    def drop_all(self) -> None:
        with self._latch:
            self._frames.clear()
            self._clock.clear()
            self._hand = 0
