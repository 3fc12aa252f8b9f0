"""Flat record store over slotted pages.

Slots are created by system transactions (page allocation, catalog entries, slot
directory growth) and filled by user transactions, which only ever rewrite their
own cells. A freshly reserved slot becomes claimable once its system transaction
is durable. Deleted slots are not reused.
"""

from __future__ import annotations

import threading
from typing import TYPE_CHECKING, NamedTuple

from .errors import LockConflict, LogicError, NotFound
from .latch import EXCLUSIVE, SHARED
from .locks import S, X
from .page import CATALOG_PAGE, DELETED, EMPTY, KIND_CATALOG, KIND_DATA, LIVE, MAX_PAYLOAD, Page
from .snapshot import SnapshotHandle, fix_at

if TYPE_CHECKING:
    from .engine import Engine
    from .txn import Transaction

SLOTS_PER_GROWTH = 4


class RecordId(NamedTuple):
    page_id: int
    slot: int

    def __str__(self):
        return f"{self.page_id}:{self.slot}"

    @classmethod
    def parse(cls, text: str) -> "RecordId":
        page, _, slot = text.partition(":")
        return cls(int(page), int(slot))


class RecordStore:
    def __init__(self, engine: "Engine"):
        self.engine = engine
        self._alloc_lock = threading.RLock()
        self._hint_lock = threading.Lock()
        self._free: set[RecordId] = set()
        self._claims: dict[int, list[tuple[int, RecordId]]] = {}
        self.pages: list[int] = []
        self._page_set: set[int] = set()
        self._next_page = 1
        engine.tm.undo_listeners.append(self._on_undo)
        engine.durable_listeners.append(self._on_durable)

    # -- catalog ---------------------------------------------------------

    def open(self) -> None:
        """Load the catalog (creating it on a fresh disk) and rebuild free-slot hints."""
        eng = self.engine
        if CATALOG_PAGE not in eng.pool and not eng.disk.has_page(CATALOG_PAGE):
            eng.tm.run_system_txn(self._create_catalog)
        with eng.pool.fixed(CATALOG_PAGE, SHARED) as frame:
            pages = frame.page.catalog_pages()
        self.pages = list(pages)
        self._page_set = set(pages)
        self._next_page = max(pages, default=0) + 1
        for pid in pages:
            with eng.pool.fixed(pid, SHARED) as frame:
                page = frame.page
                for slot in range(page.slot_count):
                    if page.read_cell(slot)[0] == EMPTY:
                        self._free.add(RecordId(pid, slot))

    def _create_catalog(self, txn) -> None:
        frame = self.engine.pool.create(CATALOG_PAGE)
        try:
            with frame.latch.held(EXCLUSIVE):
                self._log(txn, frame, [frame.page.format_image(CATALOG_PAGE, KIND_CATALOG)])
        finally:
            self.engine.pool.unpin(frame)

    def _log(self, txn, frame, images, rid=None) -> None:
        for offset, before, after in images:
            self.engine.tm.log_update(txn, frame, offset, before, after, rid)

    def allocate_page(self, page_id: int | None = None) -> int:
        """Create a data page in a system transaction and list it in the catalog."""
        with self._alloc_lock:
            if page_id is None:
                page_id = self._next_page
            if page_id in self._page_set or page_id == CATALOG_PAGE:
                raise LogicError(f"page {page_id} already allocated")
            self.engine.tm.run_system_txn(lambda txn: self._format_page(txn, page_id))
            self.pages.append(page_id)
            self._page_set.add(page_id)
            self._next_page = max(self._next_page, page_id + 1)
            return page_id

    def _format_page(self, txn, page_id: int) -> None:
        pool = self.engine.pool
        frame = pool.create(page_id)
        try:
            with frame.latch.held(EXCLUSIVE):
                self._log(txn, frame, [frame.page.format_image(page_id, KIND_DATA)])
        finally:
            pool.unpin(frame)
        with pool.fixed(CATALOG_PAGE, EXCLUSIVE) as cat:
            self._log(txn, cat, cat.page.catalog_append_images(page_id))

    def reserve_slots(self, page_id: int, count: int = 1) -> list[RecordId]:
        """Add up to ``count`` empty slots to a page in one system transaction."""
        with self._alloc_lock:
            def body(txn):
                made = []
                with self.engine.pool.fixed(page_id, EXCLUSIVE) as frame:
                    while len(made) < count and frame.page.has_room():
                        made.append(RecordId(page_id, frame.page.slot_count))
                        self._log(txn, frame, frame.page.reserve_slot_images())
                return made

            made = self.engine.tm.run_system_txn(body)
            with self._hint_lock:
                self._free.update(made)
            return made

    def _grow(self, seen: set) -> None:
        """Reserve fresh slots unless some other thread already added hints not in ``seen``."""
        with self._alloc_lock:
            with self._hint_lock:
                if self._free - seen:
                    return
            for pid in reversed(self.pages):
                with self.engine.pool.fixed(pid, SHARED) as frame:
                    room = frame.page.has_room()
                if room:
                    break
            else:
                pid = self.allocate_page()
            self.reserve_slots(pid, SLOTS_PER_GROWTH)

    # -- slot claims -----------------------------------------------------

    def _claim_slot(self, txn: "Transaction") -> RecordId:
        locks = self.engine.locks
        while True:
            with self._hint_lock:
                candidates = sorted(self._free)
            for rid in candidates:
                try:
                    locks.acquire(txn.txn_id, rid, X, timeout=0)
                except LockConflict:
                    continue
                with self._hint_lock:
                    if rid not in self._free:
                        continue
                    self._free.discard(rid)
                with self.engine.pool.fixed(rid.page_id, SHARED) as frame:
                    status = frame.page.read_cell(rid.slot)[0]
                if status == EMPTY:
                    return rid
            self._grow(set(candidates))

    def _on_undo(self, txn: "Transaction", mark: int) -> None:
        claims = self._claims.get(txn.txn_id)
        if not claims:
            return
        keep = [c for c in claims if c[0] < mark]
        freed = [rid for idx, rid in claims if idx >= mark]
        if keep:
            self._claims[txn.txn_id] = keep
        else:
            self._claims.pop(txn.txn_id, None)
        with self._hint_lock:
            self._free.update(freed)

    def _on_durable(self, txn: "Transaction") -> None:
        self._claims.pop(txn.txn_id, None)

    # -- record operations ----------------------------------------------

    def _check(self, rid: RecordId) -> None:
        if rid.page_id not in self._page_set:
            raise NotFound(f"record {rid} does not exist")

    def insert(self, txn: "Transaction", payload: bytes, lock_timeout=None) -> RecordId:
        if len(payload) > MAX_PAYLOAD:
            raise ValueError(f"payload of {len(payload)} bytes exceeds {MAX_PAYLOAD}")
        rid = self._claim_slot(txn)
        mark = len(txn.log.entries)
        with self.engine.pool.fixed(rid.page_id, EXCLUSIVE) as frame:
            self._log(txn, frame, [frame.page.cell_image(rid.slot, LIVE, bytes(payload))], rid)
        self._claims.setdefault(txn.txn_id, []).append((mark, rid))
        return rid

    def _mutate(self, txn, rid: RecordId, status: int, payload: bytes, lock_timeout) -> None:
        self._check(rid)
        self.engine.locks.acquire(txn.txn_id, rid, X, timeout=lock_timeout)
        with self.engine.pool.fixed(rid.page_id, EXCLUSIVE) as frame:
            try:
                current = frame.page.read_cell(rid.slot)[0]
            except IndexError:
                raise NotFound(f"record {rid} does not exist") from None
            if current != LIVE:
                raise NotFound(f"record {rid} does not exist")
            self._log(txn, frame, [frame.page.cell_image(rid.slot, status, payload)], rid)

    def update(self, txn: "Transaction", rid: RecordId, payload: bytes, lock_timeout=None) -> None:
        if len(payload) > MAX_PAYLOAD:
            raise ValueError(f"payload of {len(payload)} bytes exceeds {MAX_PAYLOAD}")
        self._mutate(txn, rid, LIVE, bytes(payload), lock_timeout)

    def delete(self, txn: "Transaction", rid: RecordId, lock_timeout=None) -> None:
        self._mutate(txn, rid, DELETED, b"", lock_timeout)

    def read(self, txn: "Transaction", rid: RecordId, lock_timeout=None) -> bytes:
        self._check(rid)
        self.engine.locks.acquire(txn.txn_id, rid, S, timeout=lock_timeout)
        with self.engine.pool.fixed(rid.page_id, SHARED) as frame:
            try:
                status, payload = frame.page.read_cell(rid.slot)
            except IndexError:
                raise NotFound(f"record {rid} does not exist") from None
        if status != LIVE:
            raise NotFound(f"record {rid} does not exist")
        return payload

    def read_snapshot(self, handle: "SnapshotHandle", rid: RecordId) -> bytes:
        return _record_in(handle.page(rid.page_id), rid, f"as of {handle.as_of}")

    def read_version(self, rid: RecordId, lsn: int) -> bytes:
        """Record content including only commit groups that end at or below ``lsn``."""
        return _record_in(fix_at(self.engine, rid.page_id, lsn), rid, f"at lsn {lsn}")

    def committed_page(self, page_id: int) -> Page:
        """Latest committed image of a page, without the updates of unfinished transactions."""
        eng = self.engine
        frame = eng.pool.fetch(page_id)
        try:
            return eng.propagator.committed_copy(page_id)
        finally:
            eng.pool.unpin(frame)

    def scan_all(self) -> dict[RecordId, bytes]:
        """Committed logical content of the whole store."""
        out = {}
        for pid in sorted(self.pages):
            for slot, payload in self.committed_page(pid).live_records().items():
                out[RecordId(pid, slot)] = payload
        return out


def _record_in(page: Page, rid: RecordId, when: str) -> bytes:
    try:
        status, payload = page.read_cell(rid.slot)
    except IndexError:
        raise NotFound(f"record {rid} does not exist {when}") from None
    if page.kind != KIND_DATA or status != LIVE:
        raise NotFound(f"record {rid} does not exist {when}")
    return payload
