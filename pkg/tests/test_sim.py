import pytest

from conftest import manual_config
from redostore import Engine, EngineConfig, VirtualDisk
from redostore.errors import LogicError, SimulatedCrash
from redostore.page import Page
from redostore.sim.disk import PAGE_SIZE, FaultPlan
from redostore.sim.invariants import CommittedDiskChecker, check_chains, check_log_types
from redostore.sim.oracle import Oracle, RawLog, empty_page, parse_log, read_raw
from redostore.sim.scheduler import WorkloadSpec, crash_test, run_deterministic, run_threaded


def small(seed=1, **kw):
    kw.setdefault("txns", 40)
    return WorkloadSpec(seed=seed, **kw)


class TestVirtualDisk:
    def test_crash_after_zero_writes_is_virgin(self):
        disk = VirtualDisk(FaultPlan(crash_after_writes=0))
        with pytest.raises(SimulatedCrash):
            disk.write_page(1, bytes(PAGE_SIZE))
        image = disk.crash_image()
        assert image.pages == {} and image.log_size() == 0 and image.read_master() is None

    def test_unsynced_log_becomes_a_proper_prefix(self):
        for seed in range(20):
            disk = VirtualDisk(FaultPlan(seed=seed))
            disk.log_write(0, b"a" * 10)
            disk.log_sync()
            disk.log_write(10, b"b" * 10)
            log = bytes(disk.crash_image().log)
            assert log[:10] == b"a" * 10
            assert len(log) < 20 and set(log[10:]) <= {ord("b")}

    def test_crash_is_seeded(self):
        def tail(seed):
            disk = VirtualDisk(FaultPlan(seed=seed))
            disk.log_write(0, bytes(range(200)))
            return disk.crash_image().log_size()

        assert tail(3) == tail(3)
        assert len({tail(s) for s in range(10)}) > 1

    def test_dead_after_crash(self):
        disk = VirtualDisk()
        disk.crash_now()
        with pytest.raises(SimulatedCrash):
            disk.log_write(0, b"x")
        with pytest.raises(SimulatedCrash):
            disk.read_page(0)

    def test_synced_bytes_are_immutable(self):
        disk = VirtualDisk()
        disk.log_write(0, b"abc")
        disk.log_sync()
        with pytest.raises(LogicError):
            disk.log_write(1, b"z")

    def test_page_size_enforced(self):
        with pytest.raises(ValueError):
            VirtualDisk().write_page(1, b"short")

    def test_save_load_round_trip(self, tmp_path):
        disk = VirtualDisk()
        disk.write_page(3, bytes(range(256)) * 32)
        disk.log_write(0, b"durable")
        disk.log_sync()
        disk.log_write(7, b"volatile")
        disk.write_master(0)
        disk.save(tmp_path / "d")
        assert VirtualDisk.exists(tmp_path / "d")
        back = VirtualDisk.load(tmp_path / "d")
        assert back.pages == disk.pages
        assert bytes(back.log) == b"durable"
        assert back.read_master() == 0

    def test_journal_and_stats(self):
        disk = VirtualDisk()
        disk.log_write(0, b"x")
        disk.log_sync()
        disk.write_page(1, bytes(PAGE_SIZE))
        assert disk.journal == [("log", 0, 1), ("sync", 1), ("page", 1)]
        assert disk.writes == 2
        assert disk.stats["syncs"] == 1


class TestOracle:
    def test_ack_order(self):
        oracle = Oracle()
        oracle.ack(1, [("put", (1, 0), b"a"), ("put", (1, 1), b"b")])
        oracle.ack(2, [("del", (1, 0)), ("put", (1, 1), b"c")])
        assert oracle.expected_state() == {(1, 1): b"c"}
        assert oracle.expected_state(1) == {(1, 0): b"a", (1, 1): b"b"}
        assert oracle.expected_state(0) == {}

    def test_raw_reader_matches_engine_log(self, engine):
        txn = engine.begin()
        engine.insert(txn, b"x")
        engine.commit(txn)
        raw = parse_log(engine.disk.freeze().log)
        assert raw.tail_bytes == 0 and not raw.problems
        assert raw.committed_end == engine.plog.durable_lsn

    def test_raw_reader_rejects_torn_bytes(self, engine):
        txn = engine.begin()
        engine.insert(txn, b"x")
        engine.commit(txn)
        log = engine.disk.freeze().log
        assert read_raw(log[:-1], parse_log(log).groups[-1][-1].offset) is None

    def test_incremental_feed_equals_one_shot(self, engine):
        inc = RawLog()
        for i in range(5):
            txn = engine.begin()
            engine.insert(txn, bytes([i]) * 5)
            engine.commit(txn)
            inc.feed(engine.disk.freeze().log)
        one = parse_log(engine.disk.freeze().log)
        assert [[r.offset for r in g] for g in inc.groups] == [[r.offset for r in g] for g in one.groups]

    def test_rewritten_prefix_detected(self):
        raw = RawLog()
        raw.feed(b"")
        raw.pos = 1
        raw.data = b"ab"
        with pytest.raises(ValueError):
            raw.feed(b"xb")

    def test_empty_page(self):
        assert Page(empty_page()).page_lsn == Page().page_lsn


class TestInvariantCheckers:
    def _engine_with_pages(self):
        eng = Engine(VirtualDisk(), manual_config())
        for i in range(3):
            txn = eng.begin()
            eng.insert(txn, bytes([i]) * 10)
            eng.commit(txn)
        eng.flush_all()
        return eng

    def test_clean_engine_passes(self):
        eng = self._engine_with_pages()
        view = eng.disk.freeze()
        assert CommittedDiskChecker().check(view).ok
        assert check_chains(view).ok
        assert check_log_types(parse_log(view.log)).ok

    def test_uncommitted_byte_on_disk_is_caught(self):
        eng = self._engine_with_pages()
        view = eng.disk.freeze()
        pid = max(view.pages)
        bad = bytearray(view.pages[pid])
        bad[PAGE_SIZE - 1] ^= 0xFF
        view.pages[pid] = bytes(bad)
        report = CommittedDiskChecker().check(view)
        assert not report.ok and "differs" in report.violations[0]

    def test_page_ahead_of_log_is_caught(self):
        eng = self._engine_with_pages()
        view = eng.disk.freeze()
        pid = max(view.pages)
        page = Page(view.pages[pid])
        page.page_lsn = len(view.log) + 10
        view.pages[pid] = bytes(page.buf)
        assert not CommittedDiskChecker().check(view).ok

    def test_broken_chain_is_caught(self):
        eng = self._engine_with_pages()
        view = eng.disk.freeze()
        pid = max(view.pages)
        page = Page(view.pages[pid])
        page.page_lsn = 3
        view.pages[pid] = bytes(page.buf)
        assert not check_chains(view).ok


class TestScheduler:
    def test_same_seed_same_disk(self):
        a = run_deterministic(small(5))
        b = run_deterministic(small(5))
        assert a.disk.freeze() == b.disk.freeze()
        assert a.oracle.history == b.oracle.history

    def test_different_seeds_differ(self):
        assert run_deterministic(small(5)).disk.freeze() != run_deterministic(small(6)).disk.freeze()

    def test_run_matches_oracle_and_invariants(self):
        result = run_deterministic(small(2, freeze_prob=0.2, readers=1))
        assert result.invariant.ok, result.invariant.violations[:3]
        assert not result.read_anomalies
        assert result.committed + result.aborted == 40
        state = {tuple(k): v for k, v in result.engine.store.scan_all().items()}
        assert state == result.oracle.expected_state()
        assert result.freeze_samples > 0

    def test_crash_verdict(self):
        verdict = crash_test(small(3))
        assert verdict.crashed and verdict.ok, verdict.details[:3]
        assert 0 <= verdict.crash_after_writes < verdict.total_writes

    def test_crash_point_override(self):
        verdict = crash_test(small(3), crash_after_writes=0)
        assert verdict.ok and verdict.committed_acks == 0

    def test_parse_mix(self):
        assert WorkloadSpec.parse_mix("insert=1,read=2") == {"insert": 1.0, "read": 2.0}
        with pytest.raises(ValueError):
            WorkloadSpec.parse_mix("scan=1")
        with pytest.raises(ValueError):
            WorkloadSpec.parse_mix("insert=0")

    def test_threaded_runner(self):
        result = run_threaded(small(4, txns=60), EngineConfig(checkpoint_interval=16))
        eng = result.engine
        try:
            state = {tuple(k): v for k, v in eng.store.scan_all().items()}
            assert state == result.oracle.expected_state()
            assert result.committed + result.aborted == 60
            assert result.lock_aborts <= result.aborted
        finally:
            eng.closed = True
            eng._stop_threads()
