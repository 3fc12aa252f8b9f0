"""Page versions as of an earlier LSN: take the current committed copy, then walk
the page's chain of persistent log records backwards applying before-images."""

from __future__ import annotations

from typing import TYPE_CHECKING

from .errors import LogicError
from .logrecord import NULL_LSN, apply_image
from .page import Page

if TYPE_CHECKING:
    from .engine import Engine


def _current_committed(engine: "Engine", page_id: int) -> Page:
    pool = engine.pool
    if page_id not in pool and not engine.disk.has_page(page_id):
        return Page()
    frame = pool.fetch(page_id)
    try:
        return engine.propagator.committed_copy(page_id)
    finally:
        pool.unpin(frame)


def fix_at(engine: "Engine", page_id: int, lsn: int) -> Page:
    """Committed state of ``page_id`` as of ``lsn``: updates above ``lsn`` are undone,
    and so is the rest of a transaction whose updates to this page straddle ``lsn``.
    When ``lsn`` is a group boundary this is exactly the groups at or below it."""
    if lsn != NULL_LSN and lsn >= engine.plog.durable_lsn:
        raise LogicError(f"lsn {lsn} is beyond the durable log end {engine.plog.durable_lsn}")
    copy = _current_committed(engine, page_id)
    cur = copy.page_lsn
    if cur == NULL_LSN or cur <= lsn:
        return copy
    engine.plog.wait_durable_beyond(cur)
    last_txn = None
    while cur != NULL_LSN:
        rec = engine.plog.read_record(cur)
        if rec.page_id != page_id:
            raise LogicError(f"chain of page {page_id} reached a record of page {rec.page_id}")
        if rec.lsn <= lsn and rec.txn_id != last_txn:
            break
        apply_image(copy.buf, rec.undo)
        copy.page_lsn = rec.prev_page_lsn
        last_txn = rec.txn_id
        cur = rec.prev_page_lsn
        engine.stats["chain_undos"] += 1
    return copy


class SnapshotHandle:
    """Read-only view as of the durable log end when it was taken. Takes no record locks."""

    def __init__(self, engine: "Engine", as_of: int):
        self.engine = engine
        self.as_of = as_of
        self.cache: dict[int, Page] = {}

    def page(self, page_id: int) -> Page:
        page = self.cache.get(page_id)
        if page is None:
            if self.as_of == 0:
                page = Page()
            else:
                page = fix_at(self.engine, page_id, self.as_of - 1)
            self.cache[page_id] = page
        return page.copy()

    def __repr__(self):
        return f"SnapshotHandle(as_of={self.as_of}, cached={len(self.cache)})"
