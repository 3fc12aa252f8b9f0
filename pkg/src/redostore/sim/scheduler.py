"""Workload drivers.

``run_deterministic`` interleaves several logical workers in one OS thread, so a
seed fixes the whole schedule, every disk write and therefore every crash point.
Commits are queued and processed in batches at scheduler-chosen instants, which
gives real group commits. ``run_threaded`` runs the same kind of workload on OS
threads with the commit daemon.
"""

from __future__ import annotations

import random
import threading
import time
from dataclasses import dataclass, field

from ..engine import Engine, EngineConfig
from ..errors import EngineError, LockTimeout, NotFound, ResourceError, SimulatedCrash
from ..page import MAX_PAYLOAD
from ..store import RecordId
from .disk import FaultPlan, VirtualDisk
from .invariants import CommittedDiskChecker, Report, check_chains, check_log_types
from .oracle import Oracle, RawLog

DEFAULT_MIX = {"insert": 4, "update": 3, "delete": 1, "read": 2}


@dataclass
class WorkloadSpec:
    seed: int = 1
    threads: int = 4
    txns: int = 200
    mix: dict = field(default_factory=lambda: dict(DEFAULT_MIX))
    abort_prob: float = 0.1
    savepoint_prob: float = 0.1
    readers: int = 0  # snapshot reads interleaved per worker step, as a rate in [0, 1]
    max_ops: int = 6
    payload_max: int = 64
    lock_retries: int = 6
    freeze_prob: float = 0.0

    @staticmethod
    def parse_mix(text: str) -> dict:
        """``"insert=4,update=3,delete=1,read=2"`` -> weights."""
        mix = {}
        for part in text.split(","):
            name, _, weight = part.partition("=")
            name = name.strip()
            if name not in DEFAULT_MIX:
                raise ValueError(f"unknown operation {name!r} in mix")
            mix[name] = float(weight)
        if not mix or sum(mix.values()) <= 0:
            raise ValueError("mix needs a positive weight")
        return mix


@dataclass
class RunResult:
    engine: Engine | None
    disk: VirtualDisk
    oracle: Oracle
    committed: int = 0
    aborted: int = 0
    partial_rollbacks: int = 0
    lock_aborts: int = 0
    crashed: bool = False
    freeze_samples: int = 0
    invariant: Report = field(default_factory=Report)
    read_anomalies: list[str] = field(default_factory=list)
    elapsed: float = 0.0


class _Worker:
    def __init__(self, wid: int):
        self.wid = wid
        self.txn = None
        self.ops_left = 0
        self.doom = False
        self.done_ops = 0
        self.savepoint_at = -1
        self.rollback_at = -1
        self.savepoint_ops = None
        self.ops: list = []
        self.pending_op = None
        self.retries = 0
        self.request = None

    @property
    def waiting(self) -> bool:
        return self.request is not None and not self.request.done.is_set()


def _payload(rng: random.Random, spec: WorkloadSpec) -> bytes:
    n = rng.randint(1, min(spec.payload_max, MAX_PAYLOAD))
    return bytes(rng.getrandbits(8) for _ in range(n))


class DeterministicRun:
    def __init__(self, spec: WorkloadSpec, config: EngineConfig | None = None, plan: FaultPlan | None = None,
                 disk: VirtualDisk | None = None):
        self.spec = spec
        self.rng = random.Random(spec.seed)
        cfg = config or EngineConfig(pool_frames=64, checkpoint_interval=32)
        cfg.threaded = False
        self.disk = disk if disk is not None else VirtualDisk(plan or FaultPlan())
        self.engine: Engine | None = None
        self.cfg = cfg
        self.oracle = Oracle()
        self.checker = CommittedDiskChecker()
        self.workers = [_Worker(i) for i in range(spec.threads)]
        self.ops_by_txn: dict[int, list] = {}
        self.result = RunResult(None, self.disk, self.oracle)
        self.started = 0
        names = sorted(spec.mix)
        self._op_names = names
        self._op_weights = [spec.mix[n] for n in names]

    # -- oracle feed -----------------------------------------------------

    def _on_durable(self, txn) -> None:
        ops = self.ops_by_txn.pop(txn.txn_id, None)
        if ops is not None:
            self.oracle.ack(txn.txn_id, ops)

    # -- worker steps ----------------------------------------------------

    def _begin(self, w: _Worker) -> None:
        rng, spec = self.rng, self.spec
        w.txn = self.engine.begin()
        w.ops_left = rng.randint(1, spec.max_ops)
        w.doom = rng.random() < spec.abort_prob
        w.ops = []
        self.ops_by_txn[w.txn.txn_id] = w.ops
        w.savepoint_at = w.rollback_at = -1
        w.savepoint_ops = None
        if w.ops_left >= 2 and rng.random() < spec.savepoint_prob:
            w.savepoint_at = rng.randrange(0, w.ops_left - 1)
            w.rollback_at = rng.randint(w.savepoint_at + 1, w.ops_left)
        w.done_ops = 0
        w.pending_op = None
        w.retries = 0
        self.started += 1

    def _choose_rid(self, w: _Worker):
        pool = sorted(self.oracle.committed)
        own = [op[1] for op in w.ops if op[0] == "put"]
        pool.extend(own)
        if not pool:
            return None
        return self.rng.choice(pool)

    def _next_op(self, w: _Worker):
        kind = self.rng.choices(self._op_names, self._op_weights)[0]
        if kind == "insert":
            return ("insert", None, _payload(self.rng, self.spec))
        rid = self._choose_rid(w)
        if rid is None:
            return ("insert", None, _payload(self.rng, self.spec))
        payload = _payload(self.rng, self.spec) if kind == "update" else None
        return (kind, rid, payload)

    def _expected_view(self, w: _Worker, rid):
        value = self.oracle.committed.get(rid)
        for op in w.ops:
            if op[1] == rid:
                value = op[2] if op[0] == "put" else None
        return value

    def _apply(self, w: _Worker, op) -> None:
        eng, txn = self.engine, w.txn
        kind, rid, payload = op
        if kind == "insert":
            rid = eng.insert(txn, payload, lock_timeout=0)
            w.ops.append(("put", tuple(rid), payload))
            return
        key = RecordId(*rid)
        try:
            if kind == "update":
                eng.update(txn, key, payload, lock_timeout=0)
                w.ops.append(("put", tuple(rid), payload))
            elif kind == "delete":
                eng.delete(txn, key, lock_timeout=0)
                w.ops.append(("del", tuple(rid)))
            else:
                got = eng.read(txn, key, lock_timeout=0)
                want = self._expected_view(w, tuple(rid))
                if got != want:
                    self.result.read_anomalies.append(f"txn {txn.txn_id} read {rid}: {got!r} != {want!r}")
        except NotFound:
            if kind == "read" and self._expected_view(w, tuple(rid)) is not None:
                self.result.read_anomalies.append(f"txn {txn.txn_id} could not read committed {rid}")

    def _step(self, w: _Worker) -> None:
        eng = self.engine
        if w.txn is None:
            if self.started >= self.spec.txns:
                return
            self._begin(w)
            return
        if w.done_ops == w.savepoint_at and w.savepoint_ops is None and w.pending_op is None:
            eng.savepoint(w.txn, "sp")
            w.savepoint_ops = len(w.ops)
        if w.done_ops == w.rollback_at and w.pending_op is None and w.savepoint_ops is not None:
            eng.rollback_to(w.txn, "sp")
            del w.ops[w.savepoint_ops:]
            w.rollback_at = -1
            self.result.partial_rollbacks += 1
        if w.done_ops < w.ops_left:
            op = w.pending_op or self._next_op(w)
            try:
                self._apply(w, op)
            except LockTimeout:
                w.retries += 1
                if w.retries > self.spec.lock_retries:
                    self.result.lock_aborts += 1
                    self._abort(w)
                else:
                    w.pending_op = op
                return
            except ResourceError:
                self._abort(w)
                return
            w.pending_op = None
            w.retries = 0
            w.done_ops += 1
            return
        if w.doom:
            self._abort(w)
            return
        w.request = eng.commit(w.txn, wait=False)
        if w.request is None:
            self._finished(w)

    def _abort(self, w: _Worker) -> None:
        self.ops_by_txn.pop(w.txn.txn_id, None)
        self.engine.abort(w.txn)
        self.result.aborted += 1
        w.txn = None

    def _finished(self, w: _Worker) -> None:
        req, w.request = w.request, None
        if req is not None:
            req.wait(0)
            self.engine.after_commit(w.txn)
        self.result.committed += 1
        w.txn = None

    # -- scheduler -------------------------------------------------------

    def _sample(self) -> None:
        view = self.disk.freeze()
        self.result.freeze_samples += 1
        self.result.invariant.extend(self.checker.check(view))

    def _snapshot_probe(self) -> None:
        eng = self.engine
        if not self.oracle.history:
            return
        handle = eng.snapshot_begin()
        expected = self.oracle.expected_state()
        rids = sorted(expected)
        for rid in self.rng.sample(rids, min(3, len(rids))):
            got = eng.store.read_snapshot(handle, RecordId(*rid))
            if got != expected[rid]:
                self.result.read_anomalies.append(f"snapshot {handle.as_of} read {rid}: {got!r}")

    def _tick(self) -> bool:
        rng = self.rng
        busy = [w for w in self.workers if w.txn is not None]
        for w in busy:
            if w.request is not None and w.request.done.is_set():
                self._finished(w)
        runnable = [w for w in self.workers if not w.waiting and (w.txn is not None or self.started < self.spec.txns)]
        waiting = [w for w in self.workers if w.waiting]
        if not runnable and not waiting:
            return False
        if self.spec.freeze_prob and rng.random() < self.spec.freeze_prob:
            self._sample()
        roll = rng.random()
        if waiting and (not runnable or roll < 0.25):
            self.engine.process_pending()
        elif roll < 0.30:
            self.engine.propagator.clean_pass(rng.randint(1, 4))
        elif roll < 0.30 + 0.05 * self.spec.readers:
            self._snapshot_probe()
        elif runnable:
            self._step(rng.choice(runnable))
        return True

    def run(self) -> RunResult:
        t0 = time.perf_counter()
        try:
            self.engine = Engine(self.disk, self.cfg)
            self.result.engine = self.engine
            self.engine.durable_listeners.append(self._on_durable)
            while self._tick():
                pass
            self.engine.shutdown()
            if self.spec.freeze_prob:
                self._sample()
        except SimulatedCrash:
            self.result.crashed = True
        except EngineError:
            if not self.disk.crashed:
                raise
            self.result.crashed = True
        self.result.elapsed = time.perf_counter() - t0
        return self.result


def run_deterministic(spec: WorkloadSpec, config: EngineConfig | None = None, plan: FaultPlan | None = None,
                      disk: VirtualDisk | None = None) -> RunResult:
    return DeterministicRun(spec, config, plan, disk).run()


@dataclass
class CrashVerdict:
    seed: int
    crash_after_writes: int
    total_writes: int
    crashed: bool
    recovered_state_ok: bool
    undo_ops_during_recovery: int
    log_types_ok: bool
    committed_disk_ok: bool
    chains_ok: bool
    freeze_samples: int
    committed_acks: int
    details: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return (self.recovered_state_ok and self.undo_ops_during_recovery == 0 and self.log_types_ok
                and self.committed_disk_ok and self.chains_ok)


def recover_and_check(disk: VirtualDisk, oracle: Oracle, config: EngineConfig | None = None):
    """Restart on a crashed disk and compare against the oracle. Returns
    (engine, state_ok, undo_ops, details)."""
    cfg = config or EngineConfig(pool_frames=64)
    cfg.threaded = False
    engine = Engine(disk, cfg)
    state = {tuple(k): v for k, v in engine.store.scan_all().items()}
    expected = oracle.expected_state()
    details = []
    if state != expected:
        missing = sorted(set(expected) - set(state))[:5]
        extra = sorted(set(state) - set(expected))[:5]
        wrong = sorted(k for k in set(state) & set(expected) if state[k] != expected[k])[:5]
        details.append(f"state mismatch: missing={missing} extra={extra} wrong={wrong}")
    return engine, state == expected, engine.stats["undo_ops_during_recovery"], details


def crash_test(spec: WorkloadSpec, crash_after_writes: int | None = None, crash_seed: int = 0,
               config: EngineConfig | None = None) -> CrashVerdict:
    """Run the workload, crash it at a write count (drawn from the seed when not
    given), restart, and check the recovered state and persistent invariants."""
    cfg = config or EngineConfig(pool_frames=64, checkpoint_interval=32)
    dry = run_deterministic(spec, _copy_config(cfg))
    total = dry.disk.writes
    if crash_after_writes is None:
        crash_after_writes = random.Random(spec.seed * 7919 + crash_seed).randrange(total)
    plan = FaultPlan(crash_after_writes=crash_after_writes, seed=crash_seed)
    run = run_deterministic(spec, _copy_config(cfg), plan)
    details = list(run.invariant.violations) + list(dry.invariant.violations) + run.read_anomalies
    image = run.disk.crash_image() if run.crashed else VirtualDisk.from_view(run.disk.freeze())
    engine, state_ok, undo_ops, more = recover_and_check(image, run.oracle, _copy_config(cfg))
    details.extend(more)
    engine.shutdown()
    view = image.freeze()
    raw = RawLog()
    raw.feed(view.log)
    types = check_log_types(raw)
    disk_report = CommittedDiskChecker().check(view)
    chains = check_chains(view, raw)
    for rep in (types, disk_report, chains):
        details.extend(rep.violations)
    return CrashVerdict(
        seed=spec.seed,
        crash_after_writes=crash_after_writes,
        total_writes=total,
        crashed=run.crashed,
        recovered_state_ok=state_ok and not run.read_anomalies,
        undo_ops_during_recovery=undo_ops,
        log_types_ok=types.ok,
        committed_disk_ok=disk_report.ok and run.invariant.ok and dry.invariant.ok,
        chains_ok=chains.ok,
        freeze_samples=dry.freeze_samples,
        committed_acks=len(run.oracle.history),
        details=details,
    )


def _copy_config(cfg: EngineConfig) -> EngineConfig:
    return EngineConfig(**vars(cfg))


# -- real threads ----------------------------------------------------------


def run_threaded(spec: WorkloadSpec, config: EngineConfig | None = None, disk: VirtualDisk | None = None,
                 engine: Engine | None = None) -> RunResult:
    """Workers on OS threads, commits through the daemon. Not reproducible
    schedule-wise, but every commit ack is still recorded atomically with its sync."""
    cfg = config or EngineConfig()
    cfg.threaded = True
    disk = disk if disk is not None else VirtualDisk()
    oracle = Oracle()
    result = RunResult(None, disk, oracle)
    ops_by_txn: dict[int, list] = {}
    counter_lock = threading.Lock()
    budget = [spec.txns]

    def on_durable(txn):
        ops = ops_by_txn.pop(txn.txn_id, None)
        if ops is not None:
            oracle.ack(txn.txn_id, ops)

    t0 = time.perf_counter()
    try:
        eng = engine or Engine(disk, cfg)
    except SimulatedCrash:
        result.crashed = True
        return result
    result.engine = eng
    eng.durable_listeners.append(on_durable)
    names = sorted(spec.mix)
    weights = [spec.mix[n] for n in names]

    def worker(wid: int):
        rng = random.Random(spec.seed * 1000 + wid)
        while True:
            with counter_lock:
                if budget[0] <= 0 or disk.crashed:
                    return
                budget[0] -= 1
            try:
                txn = eng.begin()
            except EngineError:
                return
            ops: list = []
            ops_by_txn[txn.txn_id] = ops
            try:
                for _ in range(rng.randint(1, spec.max_ops)):
                    kind = rng.choices(names, weights)[0]
                    known = sorted(oracle.committed)
                    if kind == "insert" or not known:
                        payload = _payload(rng, spec)
                        rid = eng.insert(txn, payload)
                        ops.append(("put", tuple(rid), payload))
                        continue
                    rid = rng.choice(known)
                    try:
                        if kind == "update":
                            payload = _payload(rng, spec)
                            eng.update(txn, RecordId(*rid), payload)
                            ops.append(("put", rid, payload))
                        elif kind == "delete":
                            eng.delete(txn, RecordId(*rid))
                            ops.append(("del", rid))
                        else:
                            eng.read(txn, RecordId(*rid))
                    except NotFound:
                        pass
                if rng.random() < spec.abort_prob:
                    ops_by_txn.pop(txn.txn_id, None)
                    eng.abort(txn)
                    with counter_lock:
                        result.aborted += 1
                else:
                    eng.commit(txn)
                    with counter_lock:
                        result.committed += 1
            except LockTimeout:
                ops_by_txn.pop(txn.txn_id, None)
                try:
                    eng.abort(txn)
                except EngineError:
                    return
                with counter_lock:
                    result.aborted += 1
                    result.lock_aborts += 1
            except EngineError:
                if disk.crashed or eng.plog.dead is not None:
                    return
                raise

    threads = [threading.Thread(target=worker, args=(i,), name=f"worker-{i}") for i in range(spec.threads)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if disk.crashed or eng.plog.dead is not None:
        result.crashed = True
        eng.closed = True
        eng._stop_threads()
    else:
        eng.shutdown()
    result.elapsed = time.perf_counter() - t0
    return result
