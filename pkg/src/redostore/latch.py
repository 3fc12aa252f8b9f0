"""Shared/exclusive latch (writer-preferring, non-reentrant)."""

from __future__ import annotations

import threading
from contextlib import contextmanager

SHARED = "S"
EXCLUSIVE = "X"


class RWLatch:
    __slots__ = ("_cond", "_readers", "_writer", "_waiting_writers")

    def __init__(self):
        self._cond = threading.Condition(threading.Lock())
        self._readers = 0
        self._writer = None
        self._waiting_writers = 0

    def acquire(self, mode: str = EXCLUSIVE, blocking: bool = True) -> bool:
        me = threading.get_ident()
        with self._cond:
            if mode == SHARED:
                while self._writer is not None or self._waiting_writers:
                    if not blocking:
                        return False
                    self._cond.wait()
                self._readers += 1
                return True
            if self._writer == me:
                raise RuntimeError("latch is not reentrant")
            if not blocking:
                if self._writer is not None or self._readers:
                    return False
                self._writer = me
                return True
            self._waiting_writers += 1
            try:
                while self._writer is not None or self._readers:
                    self._cond.wait()
            finally:
                self._waiting_writers -= 1
            self._writer = me
            return True

    def release(self, mode: str = EXCLUSIVE) -> None:
        with self._cond:
            if mode == SHARED:
                if self._readers <= 0:
                    raise RuntimeError("shared latch not held")
                self._readers -= 1
            else:
                if self._writer != threading.get_ident():
                    raise RuntimeError("exclusive latch not held by this thread")
                self._writer = None
            self._cond.notify_all()

    @contextmanager
    def held(self, mode: str = EXCLUSIVE):
        self.acquire(mode)
        try:
            yield self
        finally:
            self.release(mode)

    def held_exclusive_by_me(self) -> bool:
        return self._writer == threading.get_ident()

    @property
    def idle(self) -> bool:
        return self._writer is None and self._readers == 0
