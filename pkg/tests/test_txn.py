import pytest

from conftest import manual_config
from redostore import Engine, VirtualDisk
from redostore.errors import LogicError
from redostore.latch import EXCLUSIVE
from redostore.logrecord import NULL_LSN
from redostore.sim.oracle import COMMIT, SYSTEM_COMMIT, UPDATE, logical_state, parse_log
from redostore.txn import TxnKind
from redostore.vlm import LogState


def committed_insert(eng, payload=b"seed"):
    txn = eng.begin()
    rid = eng.insert(txn, payload)
    eng.commit(txn)
    return rid


def raw(eng):
    return parse_log(eng.disk.freeze().log)


def resident_records(eng, pid):
    return logical_state({pid: bytes(eng.pool.resident(pid).page.buf)})


class TestCommit:
    def test_group_is_contiguous_and_ends_in_commit(self, engine):
        committed_insert(engine)
        log = raw(engine)
        assert not log.problems and log.tail_bytes == 0
        user = [g for g in log.groups if g[-1].type == COMMIT]
        assert len(user) == 1
        group = user[0]
        assert all(r.type == UPDATE for r in group[:-1])
        assert all(a.offset + a.size == b.offset for a, b in zip(group, group[1:]))
        assert {r.txn for r in group} == {group[0].txn}

    def test_setup_runs_in_system_transactions(self, engine):
        committed_insert(engine)
        kinds = [g[-1].type for g in raw(engine).groups]
        assert kinds.count(SYSTEM_COMMIT) >= 2  # catalog, first data page

    def test_page_lsn_is_last_update_of_the_page(self, engine):
        rid = committed_insert(engine)
        page_updates = raw(engine).updates[rid.page_id]
        assert engine.pool.resident(rid.page_id).page_lsn == page_updates[-1].lsn

    def test_chain_links_previous_committed_update(self, engine):
        rid = committed_insert(engine)
        before = engine.pool.resident(rid.page_id).page_lsn
        txn = engine.begin()
        engine.update(txn, rid, b"next")
        engine.commit(txn)
        last = raw(engine).updates[rid.page_id][-1]
        assert last.txn == txn.txn_id and last.prev == before

    def test_uncommitted_update_leaves_page_lsn(self, engine):
        rid = committed_insert(engine)
        frame = engine.pool.resident(rid.page_id)
        before = frame.page_lsn
        txn = engine.begin()
        engine.update(txn, rid, b"open")
        assert frame.page_lsn == before
        assert frame.page_vlsn > 0 and not frame.is_committed
        engine.abort(txn)

    def test_empty_transaction_writes_nothing(self, engine):
        size = engine.disk.log_size()
        txn = engine.begin()
        assert engine.commit(txn) is None
        assert engine.disk.log_size() == size
        assert txn.state is LogState.COMMITTED

    def test_locks_held_until_durable(self, engine):
        txn = engine.begin()
        rid = engine.insert(txn, b"x")
        req = engine.commit(txn, wait=False)
        assert engine.locks.holds(txn.txn_id, rid)
        assert txn.state is LogState.COMMITTING
        engine.process_pending()
        req.wait(0)
        assert engine.locks.held_by(txn.txn_id) == set()
        assert txn.state is LogState.COMMITTED

    def test_commit_twice(self, engine):
        txn = engine.begin()
        engine.insert(txn, b"x")
        engine.commit(txn)
        with pytest.raises(LogicError):
            engine.commit(txn)

    def test_update_needs_exclusive_lock(self, engine):
        rid = committed_insert(engine)
        txn = engine.begin()
        with engine.pool.fixed(rid.page_id, EXCLUSIVE) as frame:
            img = frame.page.cell_image(rid.slot, 1, b"zz")
            with pytest.raises(LogicError):
                engine.tm.log_update(txn, frame, *img, rid=rid)
        engine.abort(txn)

    def test_update_needs_page_latch(self, engine):
        rid = committed_insert(engine)
        txn = engine.begin()
        frame = engine.pool.fetch(rid.page_id)
        try:
            img = frame.page.cell_image(rid.slot, 1, b"zz")
            with pytest.raises(LogicError):
                engine.tm.log_update(txn, frame, *img)
        finally:
            engine.pool.unpin(frame)
        engine.abort(txn)

    def test_txn_ids_increase(self, engine):
        a, b = engine.begin(), engine.begin()
        assert b.txn_id == a.txn_id + 1
        engine.abort(a)
        engine.abort(b)


class TestAbort:
    def test_restores_committed_content_without_log_reads(self, engine):
        rid = committed_insert(engine, b"v1")
        keep = bytes(engine.pool.resident(rid.page_id).page.buf)
        size, reads, disk_reads = engine.disk.log_size(), engine.plog.reads, engine.disk.stats["log_reads"]
        txn = engine.begin()
        engine.update(txn, rid, b"v2")
        engine.insert(txn, b"more")
        engine.delete(txn, rid)
        engine.abort(txn)
        assert bytes(engine.pool.resident(rid.page_id).page.buf) == keep
        assert engine.disk.log_size() == size
        assert engine.plog.reads == reads
        assert engine.disk.stats["log_reads"] == disk_reads
        assert engine.stats["undo_ops"] == 3

    def test_abort_frees_log_and_locks(self, engine):
        txn = engine.begin()
        engine.insert(txn, b"x")
        engine.abort(txn)
        assert engine.vlm.get(txn.txn_id) is None
        assert engine.locks.held_by(txn.txn_id) == set()
        assert txn.txn_id not in engine.tm.active

    def test_abort_committed(self, engine):
        txn = engine.begin()
        engine.insert(txn, b"x")
        engine.commit(txn)
        with pytest.raises(LogicError):
            engine.abort(txn)

    def test_aborted_slot_is_reused(self, engine):
        txn = engine.begin()
        rid = engine.insert(txn, b"x")
        engine.abort(txn)
        assert committed_insert(engine, b"y") == rid


class TestSavepoints:
    def test_partial_rollback(self, engine):
        txn = engine.begin()
        a = engine.insert(txn, b"a")
        engine.savepoint(txn, "s1")
        b = engine.insert(txn, b"b")
        engine.update(txn, a, b"a2")
        assert engine.rollback_to(txn, "s1") == 2
        c = engine.insert(txn, b"c")
        engine.commit(txn)
        state = resident_records(engine, a.page_id)
        assert state[tuple(a)] == b"a" and state[tuple(c)] == b"c"
        assert c == b  # the rolled back claim is offered again
        log = raw(engine)
        assert not log.problems
        group = [g for g in log.groups if g[-1].txn == txn.txn_id][0]
        assert len(group) == 3  # insert a, insert c, commit

    def test_nested_savepoints(self, engine):
        txn = engine.begin()
        a = engine.insert(txn, b"a")
        engine.savepoint(txn, "outer")
        engine.update(txn, a, b"b")
        engine.savepoint(txn, "inner")
        engine.update(txn, a, b"c")
        engine.rollback_to(txn, "outer")
        with pytest.raises(LogicError):
            engine.rollback_to(txn, "inner")
        engine.commit(txn)
        assert resident_records(engine, a.page_id)[tuple(a)] == b"a"

    def test_rollback_to_same_savepoint_twice(self, engine):
        txn = engine.begin()
        engine.savepoint(txn, "s")
        engine.insert(txn, b"a")
        assert engine.rollback_to(txn, "s") == 1
        engine.insert(txn, b"b")
        assert engine.rollback_to(txn, "s") == 1
        engine.abort(txn)

    def test_unknown_savepoint(self, engine):
        txn = engine.begin()
        with pytest.raises(LogicError):
            engine.rollback_to(txn, "nope")
        engine.abort(txn)


class TestSystemTransactions:
    def test_commit_record_type(self, engine):
        engine.store.allocate_page()
        assert raw(engine).groups[-1][-1].type == SYSTEM_COMMIT

    def test_body_failure_aborts(self, engine):
        def body(txn):
            engine.store._format_page(txn, 77)
            raise RuntimeError("boom")

        size = engine.disk.log_size()
        with pytest.raises(RuntimeError):
            engine.tm.run_system_txn(body)
        assert engine.disk.log_size() == size
        assert not engine.tm.active
        assert engine.pool.resident(77).page_lsn == NULL_LSN

    def test_kind(self, engine):
        txn = engine.tm.begin(TxnKind.SYSTEM)
        assert txn.is_system
        engine.abort(txn)


class TestAdmission:
    def test_begin_during_recovery(self):
        eng = Engine(VirtualDisk(), manual_config())
        eng.recovering = True
        with pytest.raises(LogicError):
            eng.begin()
        eng.recovering = False
        eng.shutdown()
        with pytest.raises(LogicError):
            eng.begin()
