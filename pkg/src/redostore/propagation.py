"""Page cleaning that only ever writes committed page images, plus fuzzy checkpoints.

Flushing copies the frame under its latch, rolls back on the copy every update
of a transaction that is not committed as of the copy's PageLSN, waits until the
log covering that PageLSN is durable, then writes the copy.
"""

from __future__ import annotations

import struct
from typing import TYPE_CHECKING

from .errors import LogicError
from .latch import EXCLUSIVE, SHARED
from .logrecord import NULL_LSN, LogRecord, RecordType, apply_image, encode
from .page import Page
from .plog import CommitRequest
from .vlm import LogState

if TYPE_CHECKING:
    from .engine import Engine

_CKPT_HEAD = struct.Struct("<QI")
_CKPT_ENTRY = struct.Struct("<QQQ")
MAX_CHECKPOINT_PAGES = (0xFFFF - _CKPT_HEAD.size) // _CKPT_ENTRY.size


def encode_checkpoint(next_txn_id: int, entries: list[tuple[int, int, int]]) -> bytes:
    """Checkpoint payload: next txn id, then (page_id, propagated_lsn, rec_lsn) per unpropagated page."""
    if len(entries) > MAX_CHECKPOINT_PAGES:
        raise LogicError("too many unpropagated pages for one checkpoint record")
    out = [_CKPT_HEAD.pack(next_txn_id, len(entries))]
    out.extend(_CKPT_ENTRY.pack(*e) for e in entries)
    return b"".join(out)


def decode_checkpoint(payload: bytes) -> tuple[int, list[tuple[int, int, int]]]:
    next_txn_id, count = _CKPT_HEAD.unpack_from(payload, 0)
    entries = [
        _CKPT_ENTRY.unpack_from(payload, _CKPT_HEAD.size + i * _CKPT_ENTRY.size)
        for i in range(count)
    ]
    return next_txn_id, entries


class Propagator:
    def __init__(self, engine: "Engine"):
        self.engine = engine

    def committed_copy(self, page_id: int, wait: bool = False) -> Page | None:
        """Copy of the page's latest committed state (single-page rollback on a copy).
        Returns None when the page is not resident."""
        eng = self.engine
        frame = eng.pool.resident(page_id)
        if frame is None:
            return None
        with eng.coordination.held(SHARED):
            with frame.latch.held(EXCLUSIVE):
                copy = frame.page.copy()
                copy_vlsn = frame.page_vlsn
            copy_lsn = copy.page_lsn
            if wait:
                eng.vlm.configurable_wait()
            for cand in eng.vlm.collect_undo_candidates(page_id, copy_vlsn):
                if cand.state is LogState.ABORTED or cand.undone:
                    continue
                if cand.final and copy_lsn != NULL_LSN and cand.record.lsn <= copy_lsn:
                    continue
                apply_image(copy.buf, cand.record.undo)
                eng.stats["spr_undos"] += 1
        if copy.page_lsn != copy_lsn:
            raise LogicError("single-page rollback must not move the PageLSN")
        return copy

    def flush_page(self, page_id: int) -> bool:
        """Write the committed state of a resident page; True if a page was written."""
        eng = self.engine
        frame = eng.pool.resident(page_id)
        if frame is None:
            return False
        with frame.flush_lock:
            if eng.pool.resident(page_id) is not frame:
                return False
            copy = self.committed_copy(page_id, wait=True)
            copy_lsn = copy.page_lsn
            if copy_lsn == NULL_LSN:
                return False
            eng.plog.wait_durable_beyond(copy_lsn)
            eng.disk.write_page(page_id, bytes(copy.buf))
            eng.stats["page_flushes"] += 1
            with frame.latch.held(EXCLUSIVE):
                if frame.page.page_lsn == copy_lsn:
                    frame.propagated_lsn = copy_lsn
                    frame.rec_lsn = NULL_LSN
        return True

    def clean_pass(self, budget: int) -> int:
        """Flush up to ``budget`` unpropagated frames, oldest propagated_lsn first."""
        dirty = [f for f in self.engine.pool.frames() if not f.is_propagated]
        dirty.sort(key=lambda f: (f.propagated_lsn, f.page_id))
        flushed = 0
        for frame in dirty[:budget]:
            if self.flush_page(frame.page_id):
                flushed += 1
        return flushed

    def flush_all(self) -> int:
        return self.clean_pass(len(self.engine.pool))

    def checkpoint_request(self) -> CommitRequest:
        eng = self.engine
        holder: list[LogRecord] = []

        def materialize() -> int:
            # Runs in log order with every other LSN assignment, so no committed
            # update can slip between this snapshot and the checkpoint's own LSN.
            entries = sorted(
                (f.page_id, f.propagated_lsn, f.rec_lsn)
                for f in eng.pool.frames()
                if not f.is_propagated
            )
            payload = encode_checkpoint(eng.tm.next_txn_id, entries)
            holder.append(LogRecord(RecordType.CHECKPOINT, 0, redo=payload))
            return holder[0].size

        def place(offset: int) -> bytes:
            holder[0].lsn = offset
            return encode(holder[0])

        return CommitRequest(materialize, place, alone=True)

    def take_checkpoint(self) -> int:
        """Write a fuzzy checkpoint (no page writes) and point the master record at it."""
        eng = self.engine
        req = eng.plog.submit(self.checkpoint_request())
        if not eng.plog.threaded:
            eng.plog.process_pending()
        lsn = req.wait()
        eng.disk.write_master(lsn)
        eng.stats["checkpoints"] += 1
        return lsn
