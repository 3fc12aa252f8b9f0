"""8 KiB slotted page.

Header (24 bytes)::

    0   u64  page_lsn     never covered by a log image; set by commit and REDO only
    8   u64  page_id
    16  u16  slot_count
    18  u16  free_end     start of the cell area (cells grow down from the page end)
    20  u8   kind         0 blank, 1 data, 2 catalog
    21  3    reserved

Data pages follow the header with a slot directory of ``(u16 cell_offset,
u16 capacity)`` entries. Every cell has a fixed capacity of ``CELL_CAPACITY``
bytes: ``u8 status, u16 length, payload``.

The catalog page (id 0) stores ``u32 count`` at byte 24 followed by u64 page ids.
"""

from __future__ import annotations

import struct

from .logrecord import NULL_LSN
from .sim.disk import PAGE_SIZE

HEADER_SIZE = 24
SLOT_ENTRY = struct.Struct("<HH")
CELL_HEADER = struct.Struct("<BH")
MAX_PAYLOAD = 512
CELL_CAPACITY = CELL_HEADER.size + MAX_PAYLOAD
SLOTS_PER_PAGE = (PAGE_SIZE - HEADER_SIZE) // (SLOT_ENTRY.size + CELL_CAPACITY)

KIND_BLANK, KIND_DATA, KIND_CATALOG = 0, 1, 2
EMPTY, LIVE, DELETED = 0, 1, 2

CATALOG_PAGE = 0
_CATALOG_COUNT = struct.Struct("<I")
_CATALOG_ENTRY = struct.Struct("<Q")
CATALOG_BASE = HEADER_SIZE + _CATALOG_COUNT.size
CATALOG_CAPACITY = (PAGE_SIZE - CATALOG_BASE) // _CATALOG_ENTRY.size

_LSN = struct.Struct("<Q")
_IDENT = struct.Struct("<QHHB3x")


def blank_image() -> bytearray:
    """Content of a page before its first logged update."""
    buf = bytearray(PAGE_SIZE)
    _LSN.pack_into(buf, 0, NULL_LSN)
    return buf


class Page:
    """View over a page buffer. Mutating helpers return ``(offset, before, after)``
    images instead of writing, so every change goes through the log."""

    __slots__ = ("buf",)

    def __init__(self, buf=None):
        self.buf = bytearray(buf) if buf is not None else blank_image()
        if len(self.buf) != PAGE_SIZE:
            raise ValueError("bad page size")

    def copy(self) -> "Page":
        return Page(self.buf)

    @property
    def page_lsn(self) -> int:
        return _LSN.unpack_from(self.buf, 0)[0]

    @page_lsn.setter
    def page_lsn(self, lsn: int) -> None:
        _LSN.pack_into(self.buf, 0, lsn)

    @property
    def page_id(self) -> int:
        return _IDENT.unpack_from(self.buf, 8)[0]

    @property
    def slot_count(self) -> int:
        return _IDENT.unpack_from(self.buf, 8)[1]

    @property
    def free_end(self) -> int:
        return _IDENT.unpack_from(self.buf, 8)[2]

    @property
    def kind(self) -> int:
        return _IDENT.unpack_from(self.buf, 8)[3]

    def region(self, offset: int, length: int) -> bytes:
        return bytes(self.buf[offset:offset + length])

    # -- formatting ------------------------------------------------------

    def format_image(self, page_id: int, kind: int) -> tuple[int, bytes, bytes]:
        after = _IDENT.pack(page_id, 0, PAGE_SIZE, kind)
        return 8, self.region(8, len(after)), after

    # -- slots -----------------------------------------------------------

    def has_room(self) -> bool:
        n = self.slot_count
        dir_end = HEADER_SIZE + (n + 1) * SLOT_ENTRY.size
        return self.kind == KIND_DATA and self.free_end - CELL_CAPACITY >= dir_end

    def reserve_slot_images(self) -> list[tuple[int, bytes, bytes]]:
        """Images that add one empty slot: directory entry first, then the counters."""
        if not self.has_room():
            raise ValueError("page full")
        n = self.slot_count
        cell = self.free_end - CELL_CAPACITY
        entry_off = HEADER_SIZE + n * SLOT_ENTRY.size
        counters = struct.pack("<HH", n + 1, cell)
        return [
            (entry_off, self.region(entry_off, SLOT_ENTRY.size), SLOT_ENTRY.pack(cell, CELL_CAPACITY)),
            (16, self.region(16, 4), counters),
        ]

    def cell_offset(self, slot: int) -> int:
        if not 0 <= slot < self.slot_count:
            raise IndexError(f"slot {slot} out of range")
        return SLOT_ENTRY.unpack_from(self.buf, HEADER_SIZE + slot * SLOT_ENTRY.size)[0]

    def read_cell(self, slot: int) -> tuple[int, bytes]:
        off = self.cell_offset(slot)
        status, length = CELL_HEADER.unpack_from(self.buf, off)
        start = off + CELL_HEADER.size
        return status, bytes(self.buf[start:start + length])

    def cell_image(self, slot: int, status: int, payload: bytes) -> tuple[int, bytes, bytes]:
        """Rewrite a cell; the logged range covers the longer of old and new payloads."""
        if len(payload) > MAX_PAYLOAD:
            raise ValueError("payload too large")
        off = self.cell_offset(slot)
        _, old_len = CELL_HEADER.unpack_from(self.buf, off)
        span = CELL_HEADER.size + max(old_len, len(payload))
        after = CELL_HEADER.pack(status, len(payload)) + payload
        after += bytes(span - len(after))
        return off, self.region(off, span), after

    def live_records(self) -> dict[int, bytes]:
        out = {}
        if self.kind != KIND_DATA:
            return out
        for slot in range(self.slot_count):
            status, payload = self.read_cell(slot)
            if status == LIVE:
                out[slot] = payload
        return out

    # -- catalog ---------------------------------------------------------

    def catalog_pages(self) -> list[int]:
        if self.kind != KIND_CATALOG:
            return []
        (count,) = _CATALOG_COUNT.unpack_from(self.buf, HEADER_SIZE)
        return [
            _CATALOG_ENTRY.unpack_from(self.buf, CATALOG_BASE + i * _CATALOG_ENTRY.size)[0]
            for i in range(count)
        ]

    def catalog_append_images(self, page_id: int) -> list[tuple[int, bytes, bytes]]:
        (count,) = _CATALOG_COUNT.unpack_from(self.buf, HEADER_SIZE)
        if count >= CATALOG_CAPACITY:
            raise ValueError("catalog full")
        entry_off = CATALOG_BASE + count * _CATALOG_ENTRY.size
        return [
            (entry_off, self.region(entry_off, _CATALOG_ENTRY.size), _CATALOG_ENTRY.pack(page_id)),
            (HEADER_SIZE, self.region(HEADER_SIZE, 4), _CATALOG_COUNT.pack(count + 1)),
        ]
