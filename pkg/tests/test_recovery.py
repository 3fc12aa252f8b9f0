import logging

import pytest

import fig1
from conftest import manual_config
from redostore import Engine, VirtualDisk
from redostore.errors import IntegrityError, SimulatedCrash
from redostore.logrecord import LogRecord, RecordType, encode, update_record
from redostore.page import Page
from redostore.plog import PersistentLog
from redostore.recovery import analyze
from redostore.sim.disk import FaultPlan
from redostore.sim.oracle import logical_state, oracle_expected_page, parse_log


def reopen(disk):
    return Engine(disk, manual_config())


def fig1_disk(flush_before_t1=False, commit_t1=True):
    """Fig. 1 history with every other page propagated; returns (fig, crash image)."""
    eng = Engine(VirtualDisk(), manual_config())
    fig = fig1.setup(eng)
    eng.flush_all()
    eng.checkpoint()
    fig1.t2_commits(fig1.updates(fig))
    if flush_before_t1:
        fig1.flush(fig)
    if commit_t1:
        fig1.t1_commits(fig)
    return fig, eng.crash()


def records(eng):
    return {tuple(k): v for k, v in eng.store.scan_all().items()}


class TestAnalysis:
    def test_empty_log(self):
        result = analyze(PersistentLog(VirtualDisk(), threaded=False))
        assert (result.valid_end, result.in_doubt, result.redo_start) == (0, {}, 0)

    def test_fresh_engine_skips_restart(self):
        eng = Engine(VirtualDisk(), manual_config())
        assert eng.last_recovery is None

    def test_clean_shutdown_leaves_nothing_in_doubt(self):
        eng = Engine(VirtualDisk(), manual_config())
        txn = eng.begin()
        eng.insert(txn, b"x")
        eng.commit(txn)
        eng.shutdown()
        again = reopen(eng.disk)
        assert again.last_recovery.in_doubt == {}
        assert again.stats["redo_ops"] == 0

    def test_crash_lists_page_with_committed_updates_past_disk(self):
        fig, disk = fig1_disk()
        result = analyze(PersistentLog(disk, threaded=False))
        assert result.in_doubt == {fig1.PAGE: fig.lsn_t2}
        assert result.in_doubt[fig1.PAGE] > fig.lsn_fetch
        assert Page(disk.pages[fig1.PAGE]).page_lsn == fig.lsn_fetch

    def test_analysis_is_read_only(self):
        _, disk = fig1_disk()
        before = disk.freeze()
        analyze(PersistentLog(disk, threaded=False))
        assert disk.freeze() == before

    def test_next_txn_id_survives(self):
        fig, disk = fig1_disk()
        eng = reopen(disk)
        assert eng.begin().txn_id > fig.t1.txn_id


class TestRedo:
    def test_fig1_crash_before_final_flush(self):
        fig, disk = fig1_disk()
        eng = reopen(disk)
        assert eng.stats["redo_ops"] == 2
        image = eng.disk.read_page(fig1.PAGE)
        assert Page(image).page_lsn == fig.lsn_t1
        assert fig1.cell(image, fig.r) == fig1.live(fig1.R1)
        assert fig1.cell(image, fig.s) == fig1.live(fig1.S1)
        assert eng.stats["undo_ops_during_recovery"] == 0

    def test_after_intermediate_flush(self):
        fig, disk = fig1_disk(flush_before_t1=True)
        eng = reopen(disk)
        # T2's update follows the checkpoint, so the page is in doubt from there;
        # the flushed image already holds it and REDO skips it by PageLSN
        assert eng.last_recovery.in_doubt == {fig1.PAGE: fig.lsn_t2}
        assert eng.stats["redo_ops"] == 1

    def test_uncommitted_work_is_simply_absent(self):
        fig, disk = fig1_disk(flush_before_t1=True, commit_t1=False)
        eng = reopen(disk)
        image = eng.disk.read_page(fig1.PAGE)
        assert fig1.cell(image, fig.r) == fig1.live(fig1.R0)
        assert fig1.cell(image, fig.s) == fig1.live(fig1.S1)
        assert eng.stats["undo_ops_during_recovery"] == 0
        assert eng.stats["undo_ops"] == eng.stats["spr_undos"] == 0

    def test_pages_match_log_replay(self):
        fig, disk = fig1_disk()
        log = bytes(disk.log)
        eng = reopen(disk)
        for pid, image in eng.disk.pages.items():
            assert image == oracle_expected_page(log, pid, Page(image).page_lsn)

    def test_never_written_page_rebuilt_from_log(self):
        eng = Engine(VirtualDisk(), manual_config())
        txn = eng.begin()
        rid = eng.insert(txn, b"only in the log")
        eng.commit(txn)
        disk = eng.crash()
        assert not disk.pages
        again = reopen(disk)
        assert records(again) == {tuple(rid): b"only in the log"}

    def test_restart_is_idempotent(self):
        _, disk = fig1_disk()
        eng = reopen(disk)
        first = eng.disk.freeze()
        eng2 = reopen(eng.crash())
        assert eng2.stats["redo_ops"] == 0
        assert eng2.disk.freeze().pages == first.pages


class TestTornTail:
    def _committed_disk(self):
        eng = Engine(VirtualDisk(), manual_config())
        txn = eng.begin()
        rid = eng.insert(txn, b"durable")
        eng.commit(txn)
        return rid, eng.crash()

    def test_group_without_commit_is_dropped(self):
        rid, disk = self._committed_disk()
        end = disk.log_size()
        rec = update_record(99, rid.page_id, 100, b"\x00", b"\x01")
        rec.lsn = end
        disk.log_write(end, encode(rec))
        disk.log_sync()
        eng = reopen(disk)
        assert eng.last_recovery.valid_end == end
        assert eng.last_recovery.loser_bytes == rec.size
        assert records(eng) == {tuple(rid): b"durable"}
        assert not parse_log(bytes(eng.disk.log)).problems

    def test_torn_record_is_truncated(self):
        rid, disk = self._committed_disk()
        end = disk.log_size()
        data = encode(LogRecord(RecordType.COMMIT, 99, lsn=end))
        disk.log_write(end, data[:20])
        disk.log_sync()
        eng = reopen(disk)
        assert eng.last_recovery.valid_end == end
        assert records(eng) == {tuple(rid): b"durable"}

    def test_crash_mid_group_copy(self):
        eng = Engine(VirtualDisk(), manual_config())
        txn = eng.begin()
        keep = eng.insert(txn, b"durable")
        eng.commit(txn)
        eng.disk.plan = FaultPlan(crash_after_writes=eng.disk.writes, seed=3)
        txn = eng.begin()
        eng.insert(txn, b"x" * 200)
        with pytest.raises(SimulatedCrash):
            eng.commit(txn)
        disk = eng.disk.crash_image()
        assert 0 < disk.log_size() - eng.plog.durable_lsn < 300
        again = reopen(disk)
        assert records(again) == {tuple(keep): b"durable"}


class TestRepeatedCrashes:
    def test_crash_during_recovery_at_every_write(self):
        fig, disk = fig1_disk()
        want = records(reopen(VirtualDisk.from_view(disk.freeze())))
        k = 0
        while True:
            faulty = VirtualDisk.from_view(disk.freeze(), FaultPlan(crash_after_writes=k, seed=k))
            try:
                eng = Engine(faulty, manual_config())
            except SimulatedCrash:
                eng = reopen(faulty.crash_image())
                assert records(eng) == want
                assert eng.stats["undo_ops_during_recovery"] == 0
                k += 1
                continue
            assert records(eng) == want
            break
        assert k >= 3  # page write, checkpoint, master at least

    def test_crash_twice_in_a_row(self):
        fig, disk = fig1_disk()
        faulty = VirtualDisk.from_view(disk.freeze(), FaultPlan(crash_after_writes=1))
        with pytest.raises(SimulatedCrash):
            Engine(faulty, manual_config())
        second = VirtualDisk.from_view(faulty.crash_image().freeze(), FaultPlan(crash_after_writes=1))
        with pytest.raises(SimulatedCrash):
            Engine(second, manual_config())
        eng = reopen(second.crash_image())
        assert logical_state(eng.disk.pages)[(fig1.PAGE, fig.r.slot)] == fig1.R1


class TestIntegrity:
    def test_page_ahead_of_log(self):
        _, disk = fig1_disk()
        page = Page(disk.pages[fig1.PAGE])
        page.page_lsn = disk.log_size() + 100
        disk.pages[fig1.PAGE] = bytes(page.buf)
        with pytest.raises(IntegrityError):
            reopen(disk)

    def test_broken_chain(self):
        fig, disk = fig1_disk()
        page = Page(disk.pages[fig1.PAGE])
        page.page_lsn = fig.lsn_fetch + 1  # not the lsn of any update of this page
        disk.pages[fig1.PAGE] = bytes(page.buf)
        with pytest.raises(IntegrityError):
            reopen(disk)

    def test_record_lsn_must_equal_offset(self):
        _, disk = fig1_disk()
        end = disk.log_size()
        disk.log_write(end, encode(LogRecord(RecordType.COMMIT, 99, lsn=end + 8)))
        disk.log_sync()
        with pytest.raises(IntegrityError):
            reopen(disk)

    def test_interleaved_groups(self):
        _, disk = fig1_disk()
        end = disk.log_size()
        a = update_record(98, 5, 100, b"\x00", b"\x01")
        a.lsn = end
        b = LogRecord(RecordType.COMMIT, 99, lsn=end + a.size)
        disk.log_write(end, encode(a) + encode(b))
        disk.log_sync()
        with pytest.raises(IntegrityError):
            reopen(disk)

    def test_bad_master_falls_back_to_full_scan(self, caplog):
        fig, disk = fig1_disk()
        disk.master = 1
        with caplog.at_level(logging.WARNING):
            eng = reopen(disk)
        assert "not a checkpoint" in caplog.text
        assert fig1.cell(eng.disk.read_page(fig1.PAGE), fig.r) == fig1.live(fig1.R1)
