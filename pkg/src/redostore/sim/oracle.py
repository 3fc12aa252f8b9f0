"""Ground truth for tests, written without any engine code.

Two halves:

* a logical oracle fed with the operations of each transaction and told when the
  engine acknowledged a commit as durable; its state is what must survive a crash;
* a raw log reader that decodes log bytes straight from the documented format and
  replays committed groups onto blank pages.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field

_HEAD = struct.Struct("<IBQQQQQHH")
_CRC = struct.Struct("<I")
_U16 = struct.Struct("<H")
_U64 = struct.Struct("<Q")
NIL = 0xFFFF_FFFF_FFFF_FFFF
PAGE_BYTES = 8192

UPDATE, COMMIT, SYSTEM_COMMIT, CHECKPOINT = 1, 2, 3, 4
KNOWN_TYPES = {UPDATE, COMMIT, SYSTEM_COMMIT, CHECKPOINT}


def empty_page() -> bytes:
    return _U64.pack(NIL) + bytes(PAGE_BYTES - 8)


# -- logical oracle --------------------------------------------------------


@dataclass
class Oracle:
    """Committed logical state: ``rid -> payload``. Operations are tuples
    ``("put", rid, payload)`` or ``("del", rid)``."""

    committed: dict = field(default_factory=dict)
    history: list = field(default_factory=list)  # (txn_id, ops) in ack order

    def ack(self, txn_id: int, ops: list) -> None:
        self.history.append((txn_id, list(ops)))
        for op in ops:
            if op[0] == "put":
                self.committed[op[1]] = op[2]
            else:
                self.committed.pop(op[1], None)

    def expected_state(self, prefix: int | None = None) -> dict:
        """State after the first ``prefix`` acknowledged transactions (all by default)."""
        if prefix is None:
            return dict(self.committed)
        state: dict = {}
        for _txn, ops in self.history[:prefix]:
            for op in ops:
                if op[0] == "put":
                    state[op[1]] = op[2]
                else:
                    state.pop(op[1], None)
        return state


# -- raw log ---------------------------------------------------------------


@dataclass
class RawRecord:
    offset: int
    size: int
    type: int
    txn: int
    page: int
    lsn: int
    prev: int
    undo: bytes
    redo: bytes


def read_raw(data: bytes, pos: int) -> RawRecord | None:
    """One record at ``pos``, or None if the bytes there are not a whole valid record."""
    if pos + _HEAD.size + _CRC.size > len(data):
        return None
    total, typ, txn, page, lsn, prev, _vlsn, ulen, rlen = _HEAD.unpack_from(data, pos)
    if total != _HEAD.size + ulen + rlen + _CRC.size or pos + total > len(data):
        return None
    body_end = pos + total - _CRC.size
    if zlib.crc32(data[pos:body_end]) != _CRC.unpack_from(data, body_end)[0]:
        return None
    start = pos + _HEAD.size
    undo = bytes(data[start:start + ulen])
    redo = bytes(data[start + ulen:body_end])
    return RawRecord(pos, total, typ, txn, page, lsn, prev, undo, redo)


def patch(page: bytearray, image: bytes) -> None:
    (off,) = _U16.unpack_from(image, 0)
    body = image[2:]
    page[off:off + len(body)] = body


class RawLog:
    """Incremental reader of a log byte stream that only ever grows.

    ``groups`` holds complete groups (a transaction's records ending in its
    commit record, or a lone checkpoint). ``problems`` lists format violations
    found before the end of the intact prefix.
    """

    def __init__(self):
        self.data = b""
        self.pos = 0
        self.groups: list[list[RawRecord]] = []
        self.open_group: list[RawRecord] = []
        self.problems: list[str] = []
        self.updates: dict[int, list[RawRecord]] = {}

    def feed(self, data: bytes) -> None:
        if not data.startswith(self.data[:self.pos]):
            raise ValueError("log stream was rewritten below the parsed prefix")
        self.data = data
        while True:
            rec = read_raw(data, self.pos)
            if rec is None:
                return
            self._take(rec)
            self.pos += rec.size

    def _take(self, rec: RawRecord) -> None:
        if rec.lsn != rec.offset:
            self.problems.append(f"record at {rec.offset} carries lsn {rec.lsn}")
        if rec.type not in KNOWN_TYPES:
            self.problems.append(f"record at {rec.offset} has unknown type {rec.type}")
            return
        if rec.type == CHECKPOINT:
            if self.open_group:
                self.problems.append(f"checkpoint at {rec.offset} splits an open group")
            self.groups.append([rec])
            return
        if self.open_group and self.open_group[0].txn != rec.txn:
            self.problems.append(
                f"txn {rec.txn} at {rec.offset} starts before txn {self.open_group[0].txn} committed")
            self.open_group = []
        if rec.type == UPDATE and (rec.page == NIL or not rec.redo):
            self.problems.append(f"update at {rec.offset} has no page or no redo image")
        if rec.type != UPDATE and (rec.undo or rec.redo or rec.page != NIL):
            self.problems.append(f"commit record at {rec.offset} carries page data")
        self.open_group.append(rec)
        if rec.type in (COMMIT, SYSTEM_COMMIT):
            group, self.open_group = self.open_group, []
            self.groups.append(group)
            for r in group:
                if r.type == UPDATE:
                    self.updates.setdefault(r.page, []).append(r)

    @property
    def committed_end(self) -> int:
        """Byte after the last complete group."""
        if not self.groups:
            return 0
        last = self.groups[-1][-1]
        return last.offset + last.size

    @property
    def tail_bytes(self) -> int:
        """Bytes after the last complete group (an unfinished group or torn record)."""
        return len(self.data) - self.committed_end

    def record_types(self) -> set[int]:
        return {r.type for g in self.groups for r in g}

    def group_of(self, lsn: int) -> list[RawRecord] | None:
        for g in self.groups:
            if g[0].offset <= lsn <= g[-1].offset:
                return g
        return None


def parse_log(data: bytes) -> RawLog:
    raw = RawLog()
    raw.feed(bytes(data))
    return raw


class PageOracle:
    """Expected committed page images, replayed from a RawLog onto blank pages."""

    def __init__(self, raw: RawLog):
        self.raw = raw
        self._cache: dict[int, tuple[int, int, bytearray]] = {}  # pid -> (applied count, last lsn, image)

    def expected_page(self, page_id: int, lsn: int, whole_groups: bool = False) -> bytes:
        """Page after every committed update with LSN <= ``lsn``. With ``whole_groups``
        a group that straddles ``lsn`` is left out entirely."""
        records = self.raw.updates.get(page_id, [])
        if whole_groups:
            limit = self._group_floor(records, lsn)
        else:
            limit = sum(1 for r in records if r.lsn <= lsn)
        applied, _last, image = self._cache.get(page_id, (0, NIL, None))
        if image is None or applied > limit:
            applied, image = 0, bytearray(empty_page())
        else:
            image = bytearray(image)
        for r in records[applied:limit]:
            patch(image, r.redo)
            image[0:8] = _U64.pack(r.lsn)
        if not whole_groups:
            self._cache[page_id] = (limit, lsn, bytearray(image))
        return bytes(image)

    def _group_floor(self, records: list[RawRecord], lsn: int) -> int:
        count = 0
        for i, r in enumerate(records):
            if r.lsn > lsn:
                break
            group = self.raw.group_of(r.lsn)
            end = group[-1].offset if group else r.lsn
            if end <= lsn:
                count = i + 1
        return count

    def update_lsns(self, page_id: int) -> list[int]:
        return [r.lsn for r in self.raw.updates.get(page_id, [])]


def oracle_expected_page(log_bytes: bytes, page_id: int, lsn: int, whole_groups: bool = False) -> bytes:
    return PageOracle(parse_log(log_bytes)).expected_page(page_id, lsn, whole_groups)


def walk_chain(log_bytes: bytes, start: int) -> list[RawRecord]:
    """Follow prev-page links from ``start`` back to the first update of the page."""
    out = []
    cur = start
    seen = set()
    while cur != NIL:
        if cur in seen:
            raise ValueError(f"chain loops at {cur}")
        seen.add(cur)
        rec = read_raw(log_bytes, cur)
        if rec is None:
            raise ValueError(f"chain link {cur} is not a record boundary")
        out.append(rec)
        cur = rec.prev
    return out


def logical_state(pages: dict[int, bytes]) -> dict:
    """Records held by raw page images, decoded from the documented page layout:
    ``(page_id, slot) -> payload`` for every live cell of every data page."""
    out = {}
    for pid, image in pages.items():
        if image[20] != 1:
            continue
        slots = _U16.unpack_from(image, 16)[0]
        for slot in range(slots):
            cell = _U16.unpack_from(image, 24 + 4 * slot)[0]
            status = image[cell]
            length = _U16.unpack_from(image, cell + 1)[0]
            if status == 1:
                out[(pid, slot)] = bytes(image[cell + 3:cell + 3 + length])
    return out
