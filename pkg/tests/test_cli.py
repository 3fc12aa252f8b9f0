import json
import subprocess
import sys

import pytest

from redostore import cli
from redostore.sim.disk import VirtualDisk


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr().out
    return code, out


def run_json(capsys, *argv):
    code, out = run(capsys, *argv, "--json")
    return code, json.loads(out)


@pytest.fixture
def disk(tmp_path, capsys):
    path = tmp_path / "disk"
    code, _ = run(capsys, "workload", "--disk", path, "--deterministic", "--txns", 60, "--seed", 3)
    assert code == 0
    return path


class TestUsage:
    def test_no_command(self, capsys):
        with pytest.raises(SystemExit) as exc:
            cli.main([])
        assert exc.value.code == cli.EXIT_USAGE

    def test_bad_mix(self, capsys):
        with pytest.raises(SystemExit) as exc:
            cli.main(["workload", "--mix", "scan=1"])
        assert exc.value.code == cli.EXIT_USAGE

    def test_missing_disk(self, tmp_path, capsys):
        code = cli.main(["verify", str(tmp_path / "nowhere")])
        assert code == cli.EXIT_USAGE
        assert "no disk image" in capsys.readouterr().err

    def test_exit_codes_are_distinct(self):
        codes = [cli.EXIT_ORACLE, cli.EXIT_COMMITTED_DISK, cli.EXIT_REDO_ONLY, cli.EXIT_LOG_FORMAT]
        assert codes == [10, 11, 12, 13]

    def test_module_entry_point(self):
        proc = subprocess.run([sys.executable, "-m", "redostore.cli", "--help"], capture_output=True, text=True)
        assert proc.returncode == 0
        assert "crash-test" in proc.stdout


class TestWorkload:
    def test_deterministic_matches_oracle(self, capsys):
        code, report = run_json(capsys, "workload", "--deterministic", "--txns", 50, "--seed", 2)
        assert code == 0
        assert report["oracle_match"] is True
        assert report["committed"] + report["aborted"] == 50

    def test_threaded(self, capsys):
        code, report = run_json(capsys, "workload", "--txns", 40, "--threads", 4)
        assert code == 0 and report["oracle_match"]

    def test_continues_existing_disk(self, disk, capsys):
        code, report = run_json(capsys, "workload", "--disk", disk, "--deterministic", "--txns", 30, "--seed", 4)
        assert code == 0 and report["oracle_match"]

    def test_text_report(self, capsys):
        code, out = run(capsys, "workload", "--deterministic", "--txns", 20)
        assert code == 0
        assert "oracle: match" in out


class TestCrashTest:
    def test_same_seed_same_json(self, capsys):
        argv = ("crash-test", "--seed", 7, "--txns", 60)
        a = run_json(capsys, *argv)
        b = run_json(capsys, *argv)
        assert a == b
        code, report = a
        assert code == 0
        (v,) = report["verdicts"]
        assert v["crashed"] and v["recovered_state_ok"] and v["undo_ops_during_recovery"] == 0

    def test_several_runs(self, capsys):
        code, report = run_json(capsys, "crash-test", "--seed", 1, "--runs", 3, "--txns", 40)
        assert code == 0
        assert [v["seed"] for v in report["verdicts"]] == [1, 2, 3]

    def test_explicit_crash_point(self, capsys):
        code, report = run_json(capsys, "crash-test", "--txns", 40, "--crash-after-writes", 5)
        assert code == 0
        assert report["verdicts"][0]["crash_after_writes"] == 5

    def test_text_report(self, capsys):
        code, out = run(capsys, "crash-test", "--txns", 30)
        assert code == 0 and "-> ok" in out


class TestVerify:
    def test_clean_shutdown_has_nothing_in_doubt(self, disk, capsys):
        code, report = run_json(capsys, "verify", disk)
        assert code == 0
        assert report["in_doubt"] == {}
        assert report["valid_end"] == report["log_size"]
        assert not report["committed_disk_violations"] and not report["chain_violations"]

    def test_corrupted_page_is_reported(self, disk, capsys):
        image = VirtualDisk.load(disk)
        pid = max(p for p in image.pages if p != 0)
        bad = bytearray(image.pages[pid])
        bad[-1] ^= 0xFF
        image.pages[pid] = bytes(bad)
        image.save(disk)
        code, _ = run(capsys, "verify", disk)
        assert code == cli.EXIT_COMMITTED_DISK


class TestDumpLog:
    def test_groups_end_in_commit(self, disk, capsys):
        code, report = run_json(capsys, "dump-log", disk)
        assert code == 0
        rows = report["records"]
        assert rows and report["torn_tail_bytes"] == 0
        pos = 0
        open_txn = None
        for row in rows:
            assert row["lsn"] == pos
            pos += row["size"]
            if row["type"] == "UPDATE":
                assert open_txn in (None, row["txn"])
                open_txn = row["txn"]
            elif row["type"] in ("COMMIT", "SYSTEM_COMMIT"):
                assert open_txn in (None, row["txn"])
                open_txn = None
        assert open_txn is None
        assert pos == report["end"]

    def test_text_lists_updates(self, disk, capsys):
        code, out = run(capsys, "dump-log", disk)
        assert code == 0 and "UPDATE" in out and "COMMIT" in out


class TestCheckpointAndRead:
    def test_checkpoint(self, disk, capsys):
        code, report = run_json(capsys, "checkpoint", disk)
        assert code == 0
        image = VirtualDisk.load(disk)
        assert image.read_master() == report["checkpoint_lsn"]
        assert report["pages_flushed"] == 0

    def test_read_current_and_as_of(self, tmp_path, capsys):
        from redostore import Engine, EngineConfig

        eng = Engine(VirtualDisk(), EngineConfig(threaded=False, checkpoint_interval=0))
        txn = eng.begin()
        rid = eng.insert(txn, b"old")
        eng.commit(txn)
        mid = eng.plog.durable_lsn - 1
        txn = eng.begin()
        eng.update(txn, rid, b"new")
        eng.commit(txn)
        eng.shutdown()
        eng.disk.save(tmp_path / "d")
        code, out = run(capsys, "read", tmp_path / "d", rid, "--text")
        assert code == 0 and out.strip() == "new"
        code, out = run(capsys, "read", tmp_path / "d", rid, "--text", "--as-of", mid)
        assert code == 0 and out.strip() == "old"

    def test_read_missing(self, disk, capsys):
        code, report = run_json(capsys, "read", disk, "900:0")
        assert code == 0 and report["found"] is False
