"""Log record types and their on-disk binary encoding.

Layout (little-endian, no padding)::

    offset  size  field
    0       4     total_len       full encoded size, crc included
    4       1     type            RecordType
    5       8     txn_id
    13      8     page_id         NULL_PAGE when no page is affected
    21      8     lsn             byte offset of this record in the persistent log
    29      8     prev_page_lsn   previous record for the same page, or NULL_LSN
    37      8     vlsn            always zero once persisted
    45      2     undo_len
    47      2     redo_len
    49      n     undo payload    (u16 in-page offset + before-image)
    49+n    m     redo payload    (u16 in-page offset + after-image)
    49+n+m  4     crc32           over every preceding byte

The same encoding is used for private (volatile) logs and the persistent log.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from enum import IntEnum

NULL_LSN = 0xFFFF_FFFF_FFFF_FFFF
NULL_PAGE = 0xFFFF_FFFF_FFFF_FFFF

_HEADER = struct.Struct("<IBQQQQQHH")
_CRC = struct.Struct("<I")
_IMAGE_OFFSET = struct.Struct("<H")

HEADER_SIZE = _HEADER.size
CRC_SIZE = _CRC.size
MIN_RECORD_SIZE = HEADER_SIZE + CRC_SIZE
MAX_PAYLOAD = 0xFFFF


class RecordType(IntEnum):
    UPDATE = 1
    COMMIT = 2
    SYSTEM_COMMIT = 3
    CHECKPOINT = 4


TERMINATORS = frozenset({RecordType.COMMIT, RecordType.SYSTEM_COMMIT, RecordType.CHECKPOINT})


class EncodingError(ValueError):
    pass


class _TornTail:
    """Marker returned by :func:`decode` for an incomplete or corrupt suffix."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "TORN_TAIL"

    def __bool__(self):
        return False


TORN_TAIL = _TornTail()
TornTail = _TornTail


@dataclass(slots=True)
class LogRecord:
    type: RecordType
    txn_id: int
    page_id: int = NULL_PAGE
    lsn: int = 0
    prev_page_lsn: int = NULL_LSN
    vlsn: int = 0
    undo: bytes = b""
    redo: bytes = b""

    @property
    def size(self) -> int:
        return MIN_RECORD_SIZE + len(self.undo) + len(self.redo)

    @property
    def end(self) -> int:
        return self.lsn + self.size

    @property
    def is_update(self) -> bool:
        return self.type == RecordType.UPDATE

    def check(self) -> None:
        if len(self.undo) > MAX_PAYLOAD or len(self.redo) > MAX_PAYLOAD:
            raise EncodingError("payload exceeds 16-bit length field")
        if self.type == RecordType.UPDATE:
            if self.page_id == NULL_PAGE or not self.redo:
                raise EncodingError("update record needs a page and a redo image")
        else:
            if self.page_id != NULL_PAGE or self.undo:
                raise EncodingError(f"{self.type.name} record carries no page or undo image")
            if self.redo and self.type != RecordType.CHECKPOINT:
                raise EncodingError(f"{self.type.name} record carries no redo image")


def encode(rec: LogRecord) -> bytes:
    """Serialize ``rec``; the vlsn is never persisted and is written as zero."""
    rec.check()
    total = rec.size
    head = _HEADER.pack(
        total,
        int(rec.type),
        rec.txn_id,
        rec.page_id,
        rec.lsn,
        rec.prev_page_lsn,
        0,
        len(rec.undo),
        len(rec.redo),
    )
    body = head + rec.undo + rec.redo
    return body + _CRC.pack(zlib.crc32(body))


def decode(buf, pos: int = 0) -> LogRecord | _TornTail:
    """Decode the record starting at ``buf[pos]``.

    Anything that is not a complete, checksummed record yields ``TORN_TAIL``.
    """
    remaining = len(buf) - pos
    if remaining < MIN_RECORD_SIZE:
        return TORN_TAIL
    total, rtype, txn_id, page_id, lsn, prev, vlsn, undo_len, redo_len = _HEADER.unpack_from(buf, pos)
    if total < MIN_RECORD_SIZE or total > remaining:
        return TORN_TAIL
    if total != MIN_RECORD_SIZE + undo_len + redo_len:
        return TORN_TAIL
    body_end = pos + total - CRC_SIZE
    (crc,) = _CRC.unpack_from(buf, body_end)
    if zlib.crc32(memoryview(buf)[pos:body_end]) != crc:
        return TORN_TAIL
    try:
        rtype = RecordType(rtype)
    except ValueError:
        return TORN_TAIL
    start = pos + HEADER_SIZE
    undo = bytes(buf[start:start + undo_len])
    redo = bytes(buf[start + undo_len:start + undo_len + redo_len])
    return LogRecord(rtype, txn_id, page_id, lsn, prev, vlsn, undo, redo)


def make_image(offset: int, data: bytes) -> bytes:
    """Offset-prefixed physical image of a page region."""
    return _IMAGE_OFFSET.pack(offset) + bytes(data)


def split_image(payload: bytes) -> tuple[int, bytes]:
    (offset,) = _IMAGE_OFFSET.unpack_from(payload, 0)
    return offset, payload[_IMAGE_OFFSET.size:]


def apply_image(page: bytearray, payload: bytes) -> None:
    offset, data = split_image(payload)
    page[offset:offset + len(data)] = data


def update_record(txn_id: int, page_id: int, offset: int, before: bytes, after: bytes) -> LogRecord:
    if len(before) != len(after):
        raise EncodingError("before and after images differ in length")
    return LogRecord(
        RecordType.UPDATE,
        txn_id,
        page_id,
        undo=make_image(offset, before),
        redo=make_image(offset, after),
    )
