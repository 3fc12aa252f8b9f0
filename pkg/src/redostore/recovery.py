"""Restart after a crash: log analysis, then a REDO pass. There is no UNDO phase;
the persistent log and pages only ever hold committed work."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

from .errors import IntegrityError, LogicError
from .logrecord import NULL_LSN, RecordType, apply_image
from .page import Page
from .plog import PersistentLog
from .propagation import decode_checkpoint

if TYPE_CHECKING:
    from .engine import Engine

log = logging.getLogger(__name__)


@dataclass
class AnalysisResult:
    redo_start: int
    in_doubt: dict[int, int]
    valid_end: int
    checkpoint_lsn: int | None = None
    next_txn_id: int = 1
    winners: list[int] = field(default_factory=list)
    loser_bytes: int = 0


def analyze(plog: PersistentLog) -> AnalysisResult:
    """Find in-doubt pages and the end of the last complete committed group. Read-only."""
    disk = plog.disk
    master = disk.read_master()
    start = 0
    if master is not None and master < disk.log_size():
        rec = _try_read(plog, master)
        if rec is not None and rec.type == RecordType.CHECKPOINT:
            start = master
        else:
            log.warning("master record points at lsn %d, which is not a checkpoint; scanning from 0", master)
            master = None
    else:
        master = None

    in_doubt: dict[int, int] = {}
    winners: list[int] = []
    next_txn_id = 1
    group = []
    valid_end = start
    scan = plog.scan_from(start)
    expected = start
    for rec in scan:
        if rec.lsn != expected:
            raise IntegrityError(f"record at offset {expected} claims lsn {rec.lsn}")
        expected = rec.end
        if rec.type == RecordType.CHECKPOINT:
            if group:
                raise IntegrityError(f"checkpoint at {rec.lsn} interrupts an open record group")
            ckpt_next, entries = decode_checkpoint(rec.redo)
            next_txn_id = max(next_txn_id, ckpt_next)
            if rec.lsn == master:
                for page_id, _propagated, rec_lsn in entries:
                    if rec_lsn != NULL_LSN:
                        in_doubt[page_id] = min(in_doubt.get(page_id, rec_lsn), rec_lsn)
            valid_end = rec.end
            continue
        if group and group[0].txn_id != rec.txn_id:
            raise IntegrityError(
                f"group of txn {group[0].txn_id} has no commit record before txn {rec.txn_id} at {rec.lsn}"
            )
        group.append(rec)
        if rec.type in (RecordType.COMMIT, RecordType.SYSTEM_COMMIT):
            for r in group:
                if r.type == RecordType.UPDATE and r.page_id not in in_doubt:
                    in_doubt[r.page_id] = r.lsn
            winners.append(rec.txn_id)
            next_txn_id = max(next_txn_id, rec.txn_id + 1)
            valid_end = rec.end
            group = []
    # a trailing group without its commit record is the torn tail of a loser
    redo_start = min(in_doubt.values()) if in_doubt else valid_end
    return AnalysisResult(
        redo_start=redo_start,
        in_doubt=in_doubt,
        valid_end=valid_end,
        checkpoint_lsn=master,
        next_txn_id=next_txn_id,
        winners=winners,
        loser_bytes=disk.log_size() - valid_end,
    )


def _try_read(plog: PersistentLog, lsn: int):
    scan = plog.scan_from(lsn)
    return next(scan, None)


def redo(engine: "Engine", analysis: AnalysisResult) -> int:
    """Replay committed updates onto in-doubt pages; returns the number applied."""
    if not analysis.in_doubt:
        return 0
    pool = engine.pool
    applied = 0
    for rec in engine.plog.scan_from(analysis.redo_start, analysis.valid_end):
        if rec.type != RecordType.UPDATE:
            continue
        needed_from = analysis.in_doubt.get(rec.page_id)
        if needed_from is None or rec.lsn < needed_from:
            continue
        frame = pool.resident(rec.page_id)
        if frame is None:
            if engine.disk.has_page(rec.page_id):
                frame = pool.fetch(rec.page_id)
            else:
                frame = pool.load_image(rec.page_id, Page())
            pool.unpin(frame)
        page = frame.page
        page_lsn = page.page_lsn
        if page_lsn != NULL_LSN and rec.lsn <= page_lsn:
            continue
        if rec.prev_page_lsn != page_lsn:
            raise IntegrityError(
                f"page {rec.page_id} is at lsn {page_lsn} but record {rec.lsn} follows {rec.prev_page_lsn}"
            )
        apply_image(page.buf, rec.redo)
        if frame.is_propagated:
            frame.rec_lsn = rec.lsn
        page.page_lsn = rec.lsn
        applied += 1
    engine.stats["redo_ops"] += applied
    return applied


def restart(engine: "Engine") -> AnalysisResult:
    """Analysis, log truncation, REDO, then flush and checkpoint. Called with an empty pool."""
    if len(engine.pool):
        raise LogicError("restart needs an empty buffer pool")
    undo_before = engine.stats["undo_ops"] + engine.stats["spr_undos"]
    analysis = analyze(engine.plog)
    for page_id in engine.disk.pages:
        page_lsn = Page(engine.disk.pages[page_id]).page_lsn
        if page_lsn != NULL_LSN and page_lsn >= analysis.valid_end:
            raise IntegrityError(f"page {page_id} on disk is ahead of the durable log ({page_lsn})")
    if engine.disk.log_size() > analysis.valid_end:
        engine.disk.log_truncate(analysis.valid_end)
    engine.plog.end_offset = engine.plog.durable_lsn = analysis.valid_end
    engine.tm._next_id = max(engine.tm._next_id, analysis.next_txn_id)
    redo(engine, analysis)
    engine.propagator.flush_all()
    engine.propagator.take_checkpoint()
    engine.stats["undo_ops_during_recovery"] += engine.stats["undo_ops"] + engine.stats["spr_undos"] - undo_before
    return analysis
