"""Checks over raw persistent state, built on the oracle's own log reader."""

from __future__ import annotations

from dataclasses import dataclass, field

from .disk import RawDiskView
from .oracle import KNOWN_TYPES, NIL, UPDATE, PageOracle, RawLog, walk_chain

_U64_MAX = NIL


@dataclass
class Report:
    violations: list[str] = field(default_factory=list)
    checked_pages: int = 0

    @property
    def ok(self) -> bool:
        return not self.violations

    def extend(self, other: "Report") -> None:
        self.violations.extend(other.violations)
        self.checked_pages += other.checked_pages


class CommittedDiskChecker:
    """Every raw page must equal the replay of committed updates up to its own
    PageLSN, and the log must be complete committed groups plus at most a torn tail.
    Reuses its parse between samples of the same growing log."""

    def __init__(self):
        self.raw = RawLog()
        self.pages = PageOracle(self.raw)
        self._verified: dict[int, bytes] = {}
        self.samples = 0

    def check(self, view: RawDiskView) -> Report:
        self.samples += 1
        report = Report()
        self.raw.feed(view.log)
        report.violations.extend(self.raw.problems)
        self.raw.problems = []
        durable_end = min(view.synced, self.raw.committed_end)
        for pid, image in view.pages.items():
            if self._verified.get(pid) == image:
                continue
            report.checked_pages += 1
            page_lsn = int.from_bytes(image[:8], "little")
            if page_lsn == _U64_MAX:
                report.violations.append(f"page {pid} was written without any committed update")
                continue
            if page_lsn >= durable_end:
                report.violations.append(f"page {pid} at lsn {page_lsn} is ahead of the durable log ({durable_end})")
                continue
            if page_lsn not in set(self.pages.update_lsns(pid)):
                report.violations.append(f"page {pid} lsn {page_lsn} is not a committed update of that page")
                continue
            expected = self.pages.expected_page(pid, page_lsn)
            if expected != image:
                diff = next(i for i in range(len(image)) if image[i] != expected[i])
                report.violations.append(f"page {pid} at lsn {page_lsn} differs from committed state at byte {diff}")
                continue
            self._verified[pid] = image
        return report


def check_log_types(raw: RawLog) -> Report:
    report = Report()
    extra = raw.record_types() - KNOWN_TYPES
    if extra:
        report.violations.append(f"log holds record types {sorted(extra)}")
    report.violations.extend(raw.problems)
    return report


def check_chains(view: RawDiskView, raw: RawLog | None = None) -> Report:
    """Walking prev-page links from each page's on-disk PageLSN must visit exactly
    that page's committed updates, newest first, with each transaction's records adjacent."""
    if raw is None:
        raw = RawLog()
        raw.feed(view.log)
    report = Report()
    for pid, image in sorted(view.pages.items()):
        report.checked_pages += 1
        page_lsn = int.from_bytes(image[:8], "little")
        expected = [r.lsn for r in raw.updates.get(pid, []) if r.lsn <= page_lsn]
        try:
            chain = walk_chain(view.log, page_lsn)
        except ValueError as exc:
            report.violations.append(f"page {pid}: {exc}")
            continue
        if any(r.type != UPDATE or r.page != pid for r in chain):
            report.violations.append(f"page {pid}: chain leaves the page's update records")
            continue
        lsns = [r.lsn for r in chain]
        if lsns != expected[::-1]:
            report.violations.append(f"page {pid}: chain {lsns[:6]}... does not match committed updates")
            continue
        seen, prev = set(), None
        for r in chain:
            if r.txn != prev and r.txn in seen:
                report.violations.append(f"page {pid}: records of txn {r.txn} are not adjacent in the chain")
                break
            seen.add(r.txn)
            prev = r.txn
    return report
