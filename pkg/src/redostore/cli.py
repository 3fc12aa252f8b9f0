"""redostore command line: workloads, crash tests, verification and log inspection."""

from __future__ import annotations

import argparse
import json
import sys

from .engine import Engine, EngineConfig
from .errors import EngineError, IntegrityError, NotFound
from .logrecord import NULL_LSN, RecordType
from .plog import PersistentLog
from .propagation import decode_checkpoint
from .recovery import analyze
from .sim.disk import RawDiskView, VirtualDisk
from .sim.invariants import CommittedDiskChecker, check_chains, check_log_types
from .sim.oracle import Oracle, RawLog
from .sim.scheduler import WorkloadSpec, crash_test, run_deterministic, run_threaded
from .store import RecordId

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_ORACLE = 10
EXIT_COMMITTED_DISK = 11
EXIT_REDO_ONLY = 12
EXIT_LOG_FORMAT = 13


def _engine_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("engine")
    g.add_argument("--checkpoint-interval", type=int, default=256)
    g.add_argument("--spr-wait", type=float, default=0.0, help="seconds a flusher waits after copying a page")
    g.add_argument("--pool-frames", type=int, default=1024)
    g.add_argument("--extent-size", type=int, default=64 * 1024)
    g.add_argument("--json", action="store_true", help="machine-readable report")


def _workload_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("workload")
    g.add_argument("--seed", type=int, default=1)
    g.add_argument("--threads", type=int, default=4)
    g.add_argument("--txns", type=int, default=200)
    g.add_argument("--mix", type=WorkloadSpec.parse_mix, default=None,
                   help="operation weights, e.g. insert=4,update=3,delete=1,read=2")
    g.add_argument("--abort-prob", type=float, default=0.1)
    g.add_argument("--savepoint-prob", type=float, default=0.1)
    g.add_argument("--readers", type=int, default=0, help="snapshot reader intensity")


def _config(args, **overrides) -> EngineConfig:
    cfg = EngineConfig(
        pool_frames=args.pool_frames,
        extent_size=args.extent_size,
        spr_wait=args.spr_wait,
        checkpoint_interval=args.checkpoint_interval,
    )
    for k, v in overrides.items():
        setattr(cfg, k, v)
    return cfg


def _spec(args) -> WorkloadSpec:
    spec = WorkloadSpec(seed=args.seed, threads=args.threads, txns=args.txns, abort_prob=args.abort_prob,
                        savepoint_prob=args.savepoint_prob, readers=args.readers)
    if args.mix:
        spec.mix = args.mix
    return spec


def _emit(args, report: dict, lines: list[str]) -> None:
    if args.json:
        print(json.dumps(report, indent=2, sort_keys=True, default=str))
    else:
        for line in lines:
            print(line)


def _load_disk(path: str) -> VirtualDisk:
    if not VirtualDisk.exists(path):
        raise FileNotFoundError(f"no disk image at {path}")
    return VirtualDisk.load(path)


# -- subcommands -----------------------------------------------------------


def cmd_workload(args) -> int:
    spec = _spec(args)
    disk = VirtualDisk.load(args.disk) if args.disk and VirtualDisk.exists(args.disk) else VirtualDisk()
    cfg = _config(args)
    base = _committed_records(disk, args) if disk.log_size() else {}
    if args.deterministic:
        result = run_deterministic(spec, cfg, disk=disk)
    else:
        result = run_threaded(spec, cfg, disk=disk)
    expected = Oracle(committed=base)
    for txn_id, ops in result.oracle.history:
        expected.ack(txn_id, ops)
    state = _committed_records(disk, args)
    match = state == expected.committed
    if args.disk:
        disk.save(args.disk)
    tps = result.committed / result.elapsed if result.elapsed else 0.0
    report = {
        "committed": result.committed, "aborted": result.aborted, "lock_aborts": result.lock_aborts,
        "partial_rollbacks": result.partial_rollbacks, "elapsed_s": round(result.elapsed, 4),
        "txn_per_s": round(tps, 1), "syncs": disk.stats["syncs"], "page_writes": disk.stats["page_writes"],
        "oracle_match": match, "records": len(state),
    }
    _emit(args, report, [
        f"committed {result.committed}  aborted {result.aborted}  lock-aborts {result.lock_aborts}"
        f"  partial-rollbacks {result.partial_rollbacks}",
        f"{tps:.0f} txn/s over {result.elapsed:.3f}s, {disk.stats['syncs']} log syncs,"
        f" {disk.stats['page_writes']} page writes",
        f"oracle: {'match' if match else 'MISMATCH'} ({len(state)} records)",
    ])
    return EXIT_OK if match else EXIT_ORACLE


def _committed_records(disk: VirtualDisk, args) -> dict:
    """Records on a copy of ``disk``, restarted as after a crash."""
    probe = Engine(VirtualDisk.from_view(disk.freeze()), _config(args, threaded=False))
    state = {tuple(k): v for k, v in probe.store.scan_all().items()}
    probe.shutdown()
    return state


def cmd_crash_test(args) -> int:
    worst = EXIT_OK
    verdicts = []
    lines = []
    for seed in range(args.seed, args.seed + args.runs):
        spec = _spec(args)
        spec.seed = seed
        spec.freeze_prob = args.freeze_prob
        v = crash_test(spec, args.crash_after_writes, args.crash_seed, _config(args))
        code = _verdict_code(v)
        worst = worst or code
        verdicts.append({**{k: getattr(v, k) for k in (
            "seed", "crash_after_writes", "total_writes", "crashed", "recovered_state_ok",
            "undo_ops_during_recovery", "log_types_ok", "committed_disk_ok", "chains_ok",
            "freeze_samples", "committed_acks")}, "exit_code": code, "details": v.details[:10]})
        lines.append(
            f"seed {seed}: crash after {v.crash_after_writes}/{v.total_writes} writes,"
            f" {v.committed_acks} acked commits -> {'ok' if code == 0 else 'FAIL'}"
            f" (state={'ok' if v.recovered_state_ok else 'bad'}, undo={v.undo_ops_during_recovery},"
            f" disk={'ok' if v.committed_disk_ok else 'bad'}, log={'ok' if v.log_types_ok else 'bad'})")
        lines.extend("    " + d for d in v.details[:5])
    _emit(args, {"verdicts": verdicts, "exit_code": worst}, lines)
    return worst


def _verdict_code(v) -> int:
    if not v.recovered_state_ok:
        return EXIT_ORACLE
    if not v.committed_disk_ok or not v.chains_ok:
        return EXIT_COMMITTED_DISK
    if v.undo_ops_during_recovery:
        return EXIT_REDO_ONLY
    if not v.log_types_ok:
        return EXIT_LOG_FORMAT
    return EXIT_OK


def cmd_verify(args) -> int:
    disk = _load_disk(args.disk)
    view = disk.freeze()
    plog = PersistentLog(disk, threaded=False)
    try:
        analysis = analyze(plog)
    except IntegrityError as exc:
        _emit(args, {"error": str(exc)}, [f"log integrity: {exc}"])
        return EXIT_LOG_FORMAT
    raw = RawLog()
    raw.feed(view.log[:analysis.valid_end])
    types = check_log_types(raw)
    disk_report = CommittedDiskChecker().check(
        RawDiskView(view.pages, view.log[:analysis.valid_end], analysis.valid_end, view.master))
    chains = check_chains(view, raw)
    report = {
        "valid_end": analysis.valid_end, "log_size": len(view.log), "checkpoint_lsn": analysis.checkpoint_lsn,
        "in_doubt": {str(k): v for k, v in sorted(analysis.in_doubt.items())}, "redo_start": analysis.redo_start,
        "committed_disk_violations": disk_report.violations, "chain_violations": chains.violations,
        "log_format_violations": types.violations,
    }
    lines = [
        f"log: {len(view.log)} bytes, intact to {analysis.valid_end}, checkpoint at {analysis.checkpoint_lsn}",
        f"in-doubt pages: {len(analysis.in_doubt)}"
        + (f" {sorted(analysis.in_doubt)} redo from {analysis.redo_start}" if analysis.in_doubt else ""),
        f"committed-disk scan: {len(disk_report.violations)} violations over {len(view.pages)} pages",
        f"chain check: {len(chains.violations)} violations",
    ]
    lines.extend("  " + v for v in disk_report.violations + chains.violations + types.violations)
    _emit(args, report, lines)
    if types.violations:
        return EXIT_LOG_FORMAT
    if disk_report.violations or chains.violations:
        return EXIT_COMMITTED_DISK
    return EXIT_OK


def _fmt_lsn(lsn: int) -> str:
    return "-" if lsn == NULL_LSN else str(lsn)


def cmd_dump_log(args) -> int:
    disk = _load_disk(args.disk)
    plog = PersistentLog(disk, threaded=False)
    scan = plog.scan_from(0)
    rows, lines = [], []
    for rec in scan:
        row = {"lsn": rec.lsn, "type": rec.type.name, "txn": rec.txn_id, "size": rec.size}
        if rec.type == RecordType.UPDATE:
            row.update(page=rec.page_id, prev_page_lsn=_fmt_lsn(rec.prev_page_lsn),
                       undo_len=len(rec.undo), redo_len=len(rec.redo))
            lines.append(f"{rec.lsn:>10}  UPDATE        txn {rec.txn_id:<6} page {rec.page_id:<6}"
                         f" prev {_fmt_lsn(rec.prev_page_lsn):>10}  undo {len(rec.undo)}B redo {len(rec.redo)}B")
        elif rec.type == RecordType.CHECKPOINT:
            next_txn, entries = decode_checkpoint(rec.redo)
            row.update(next_txn_id=next_txn, unpropagated=[list(e) for e in entries])
            lines.append(f"{rec.lsn:>10}  CHECKPOINT    next txn {next_txn}, {len(entries)} unpropagated pages")
        else:
            lines.append(f"{rec.lsn:>10}  {rec.type.name:<13} txn {rec.txn_id}")
        rows.append(row)
    tail = disk.log_size() - scan.end
    if tail:
        lines.append(f"{scan.end:>10}  <torn tail: {tail} bytes>")
    _emit(args, {"records": rows, "end": scan.end, "torn_tail_bytes": tail, "master": disk.read_master()}, lines)
    return EXIT_OK


def cmd_checkpoint(args) -> int:
    disk = _load_disk(args.disk)
    engine = Engine(disk, _config(args, threaded=False))
    flushed = engine.flush_all()
    engine.shutdown()  # final flush and checkpoint
    lsn = disk.read_master()
    disk.save(args.disk)
    _emit(args, {"checkpoint_lsn": lsn, "pages_flushed": flushed},
          [f"checkpoint at lsn {lsn}, {flushed} pages flushed"])
    return EXIT_OK


def cmd_read(args) -> int:
    disk = _load_disk(args.disk)
    engine = Engine(disk, _config(args, threaded=False))
    rid = RecordId.parse(args.rid)
    try:
        if args.as_of is None or args.as_of >= engine.plog.durable_lsn:
            payload = engine.store.read_snapshot(engine.snapshot_begin(), rid)
        else:
            payload = engine.store.read_version(rid, args.as_of)
    except NotFound as exc:
        _emit(args, {"rid": str(rid), "found": False, "as_of": args.as_of}, [str(exc)])
        return EXIT_OK
    finally:
        engine.shutdown()
    text = payload.decode("utf-8", "replace") if args.text else payload.hex()
    _emit(args, {"rid": str(rid), "found": True, "as_of": args.as_of, "payload_hex": payload.hex()}, [text])
    return EXIT_OK


# -- entry point -----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="redostore", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("workload", help="run a workload and check it against the oracle")
    _workload_flags(p)
    _engine_flags(p)
    p.add_argument("--disk", help="disk image directory (created or continued)")
    p.add_argument("--deterministic", action="store_true", help="single-thread interleaved scheduler")
    p.set_defaults(func=cmd_workload)

    p = sub.add_parser("crash-test", help="run, crash, recover and compare with the oracle")
    _workload_flags(p)
    _engine_flags(p)
    p.add_argument("--crash-after-writes", type=int, default=None,
                   help="writes that succeed before the crash (default: drawn from the seed)")
    p.add_argument("--crash-seed", type=int, default=0, help="seed for the torn-tail length")
    p.add_argument("--runs", type=int, default=1, help="consecutive seeds to test")
    p.add_argument("--freeze-prob", type=float, default=0.1, help="chance per step of a raw-disk sample")
    p.set_defaults(func=cmd_crash_test, checkpoint_interval=32, pool_frames=64)

    p = sub.add_parser("verify", help="read-only log analysis and committed-disk scan")
    p.add_argument("disk")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("dump-log", help="print log records with their page chain links")
    p.add_argument("disk")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_dump_log)

    p = sub.add_parser("checkpoint", help="recover if needed, flush, and write a checkpoint")
    p.add_argument("disk")
    _engine_flags(p)
    p.set_defaults(func=cmd_checkpoint)

    p = sub.add_parser("read", help="read a record, optionally as of an earlier LSN")
    p.add_argument("disk")
    p.add_argument("rid", help="page:slot")
    p.add_argument("--as-of", type=int, default=None, help="include only commit groups ending at or below this LSN")
    p.add_argument("--text", action="store_true", help="print the payload as text instead of hex")
    _engine_flags(p)
    p.set_defaults(func=cmd_read)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except BrokenPipeError:
        sys.stderr.close()
        return EXIT_OK
    except (FileNotFoundError, ValueError) as exc:
        print(f"redostore: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except EngineError as exc:
        print(f"redostore: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_LOG_FORMAT if isinstance(exc, IntegrityError) else 1


if __name__ == "__main__":
    sys.exit(main())
