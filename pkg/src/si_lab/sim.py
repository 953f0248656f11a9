"""Workload generation, deployment wiring and history recording.

``run`` drives ``concurrency`` client sessions through ``txn_num`` random
transactions against a standalone engine, a replica set or a sharded
cluster, and returns the history as the clients observed it.
``interleave_directed`` executes a hand-written interleaving instead.
"""

from __future__ import annotations

import itertools
import random
from collections import deque
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Callable

from .model import ABORTED, COMMITTED, History, Op, R, Transaction, Ts, W
from .rs import RsPrimary, RsSecondary, PullOplog, start_replica_set
from .sc import ScCluster
from .sched import Simulator, Sleep
from .wt import Result, WtEngine

DEPLOYMENTS = ("wt", "rs", "sc")
# Chosen so that at concurrency 9 roughly 40-50% of committed transactions
# overlap another in real time; replicated commits take longer, so their
# clients think longer.
DEFAULT_THINK_NANOS = {"wt": (0, 6_000_000), "rs": (0, 30_000_000), "sc": (0, 50_000_000)}


@dataclass
class SimConfig:
    deployment: str = "wt"
    seed: int = 0
    txn_num: int = 3000
    concurrency: int = 9
    max_txn_len: int = 12
    key_count: int = 10
    max_writes_per_key: int = 128
    key_dist: str = "exponential"
    replica_count: int = 3
    shard_count: int = 2
    mongos_count: int = 2
    replication_delay_mode: str = "eager"
    # Simulated time ranges in nanoseconds, drawn uniformly.
    # Think time defaults per deployment (see DEFAULT_THINK_NANOS).
    think_nanos: tuple[int, int] | None = None
    op_nanos: tuple[int, int] = (20_000, 200_000)
    net_nanos: tuple[int, int] = (50_000, 150_000)
    commit_gap_nanos: tuple[int, int] = (0, 40_000)
    repl_delay_nanos: tuple[int, int] = (0, 2_000_000)
    clock_skew_nanos: int = 3_000_000

    def __post_init__(self) -> None:
        if self.deployment not in DEPLOYMENTS:
            raise ValueError(f"deployment must be one of {DEPLOYMENTS}")
        if self.think_nanos is None and self.deployment in DEFAULT_THINK_NANOS:
            self.think_nanos = DEFAULT_THINK_NANOS[self.deployment]
        for name in ("think_nanos", "op_nanos", "net_nanos", "commit_gap_nanos", "repl_delay_nanos"):
            setattr(self, name, tuple(getattr(self, name)))
        self.validate()

    def validate(self) -> None:
        if self.deployment not in DEPLOYMENTS:
            raise ValueError(f"deployment must be one of {DEPLOYMENTS}")
        if self.key_dist not in ("uniform", "exponential"):
            raise ValueError("key distribution must be uniform or exponential")
        if self.replication_delay_mode not in ("eager", "randomized"):
            raise ValueError("replication delay mode must be eager or randomized")
        for name in ("txn_num", "concurrency", "max_txn_len", "key_count", "max_writes_per_key",
                     "replica_count", "shard_count", "mongos_count"):
            if getattr(self, name) < (0 if name == "txn_num" else 1):
                raise ValueError(f"{name} is out of range")
        if self.commit_gap_nanos[1] >= self.net_nanos[0]:
            # A longer gap would let the majority frontier overtake a pending local commit.
            raise ValueError("commit gap must stay below the minimum network delay")

    def to_dict(self) -> dict[str, Any]:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            head, *rest = f.name.split("_")
            out[head + "".join(w.title() for w in rest)] = list(v) if isinstance(v, tuple) else v
        return out

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SimConfig":
        names = {f.name: f.name for f in fields(cls)}
        for f in fields(cls):
            head, *rest = f.name.split("_")
            names[head + "".join(w.title() for w in rest)] = f.name
        return cls(**{names[k]: v for k, v in d.items() if k in names})


class KeySpace:
    """Live keys by rank, with per-key write budgets and unique values."""

    def __init__(self, cfg: SimConfig):
        self.cfg = cfg
        self.live = [f"k{i}" for i in range(cfg.key_count)]
        self.next_key = cfg.key_count
        self.writes: dict[str, int] = {}
        self.retired: set[str] = set()
        if cfg.key_dist == "exponential":
            self.weights = [0.5 ** i for i in range(cfg.key_count)]
        else:
            self.weights = [1.0] * cfg.key_count
        self.cum = list(itertools.accumulate(self.weights))

    def pick_rank(self, rng: random.Random) -> int:
        return rng.choices(range(len(self.live)), cum_weights=self.cum)[0]

    def next_write(self, rank: int) -> tuple[str, int]:
        key = self.live[rank]
        n = self.writes.get(key, 0) + 1
        self.writes[key] = n
        if n >= self.cfg.max_writes_per_key:
            self.retired.add(key)
            self.live[rank] = f"k{self.next_key}"
            self.next_key += 1
        return key, n


def generate_txn(rng: random.Random, cfg: SimConfig, keys: KeySpace) -> list[Op]:
    """Random operations; reads carry value None until executed."""
    out = []
    for _ in range(rng.randint(1, cfg.max_txn_len)):
        rank = keys.pick_rank(rng)
        if rng.random() < 0.5:
            out.append(Op("r", keys.live[rank], None))  # type: ignore[arg-type]
        else:
            out.append(W(*keys.next_write(rank)))
    return out


def generate_workload(cfg: SimConfig) -> list[list[Op]]:
    rng = random.Random(f"workload-{cfg.seed}")
    keys = KeySpace(cfg)
    return [generate_txn(rng, cfg, keys) for _ in range(cfg.txn_num)]


@dataclass
class Outcome:
    committed: bool
    ops: list[Op]
    start: int | None = None
    commit: int | None = None
    read_ts: Ts | None = None
    commit_ts: Ts | None = None
    tid: int | None = None
    lamport: int | None = None
    shard_tids: dict[int, int] | None = None


@dataclass
class SimResult:
    history: History
    sim: Simulator
    primaries: list[RsPrimary] = field(default_factory=list)
    wt: WtEngine | None = None
    trace: list[dict[str, Any]] | None = None


def _wt_txn(sim: Simulator, cfg: SimConfig, wt: WtEngine, sid: int, ops: list[Op]):
    wt.wt_start(sid)
    start = sim.stamp()
    seen: list[Op] = []
    for i, op in enumerate(ops):
        if i:
            yield Sleep(sim.uniform(cfg.op_nanos))
        if op.is_read:
            value, _ = wt.wt_read(sid, op.key)
            seen.append(R(op.key, value))
        else:
            if wt.wt_update(sid, op.key, op.value) is Result.ROLLBACK:
                return Outcome(False, seen, start)
            seen.append(op)
    yield Sleep(sim.uniform(cfg.op_nanos))
    tid = wt.sessions[sid].tid
    wt.wt_commit(sid)
    return Outcome(True, seen, start, sim.stamp(), tid=tid, lamport=sim.steps)


def _rs_txn(sim: Simulator, cfg: SimConfig, primary: RsPrimary, sid: int, ops: list[Op]):
    seen: list[Op] = []
    hop = lambda: sim.uniform(cfg.net_nanos)  # noqa: E731
    yield Sleep(hop())
    for i, op in enumerate(ops):
        if i:
            yield Sleep(hop() + sim.uniform(cfg.op_nanos) + hop())
        if op.is_read:
            value = yield from primary.rs_read(sid, op.key)
            seen.append(R(op.key, value))
        else:
            res = yield from primary.rs_update(sid, op.key, op.value)
            if res is Result.ROLLBACK:
                primary.rs_rollback(sid)
                return Outcome(False, seen)
            seen.append(op)
    yield Sleep(hop() + sim.uniform(cfg.op_nanos) + hop())
    info = yield from primary.rs_commit(sid)
    yield Sleep(hop())
    return Outcome(True, seen, info.start, info.commit, info.read_ts, info.commit_ts,
                   info.tid, sim.steps)


def _client(sim: Simulator, cfg: SimConfig, sid: int, queue: deque, ids: Callable[[], int],
            execute: Callable, records: list[Transaction]):
    while queue:
        ops = queue.popleft()
        txn_id = ids()
        yield Sleep(sim.uniform(cfg.think_nanos))
        out = yield from execute(sid, ops)
        records.append(Transaction(
            txn_id=txn_id, session_id=sid, ops=tuple(out.ops),
            status=COMMITTED if out.committed else ABORTED,
            start=out.start if out.committed else None,
            commit=out.commit if out.committed else None,
            read_ts=out.read_ts, commit_ts=out.commit_ts if out.committed else None,
            wt_tid=out.tid if out.committed else None,
            lamport=out.lamport if out.committed else None,
            shard_tids=out.shard_tids if out.committed else None,
        ))


class _ScClient:
    def __init__(self, cluster: ScCluster, cfg: SimConfig):
        self.cluster = cluster
        self.cfg = cfg
        self.ct: dict[int, Ts] = {}

    def execute(self, sid: int, ops: list[Op]):
        cl = self.cluster
        mongos = cl.mongos[sid % len(cl.mongos)]
        plan = [(op.kind, op.key, op.value) for op in ops]
        out = yield from cl.execute(mongos, sid, self.ct.get(sid, Ts(0, 0)), plan, self.cfg.op_nanos)
        if mongos.clock.ct > self.ct.get(sid, Ts(0, 0)):
            self.ct[sid] = mongos.clock.ct
        seen = [Op(k, key, v) for k, key, v in out.ops]
        if not out.committed:
            return Outcome(False, seen, read_ts=out.read_ts)
        tids = out.shard_tids
        tid = next(iter(tids.values()), 0)
        return Outcome(True, seen, out.start, out.commit, out.read_ts, out.commit_ts,
                       tid, out.lamport, dict(tids))


def run_detailed(cfg: SimConfig, trace: bool = False) -> SimResult:
    sim = Simulator(cfg.seed)
    rng = random.Random(f"cluster-{cfg.seed}")
    events: list[dict[str, Any]] | None = [] if trace else None
    sink = events.append if events is not None else None
    queue = deque(generate_workload(cfg))
    counter = itertools.count(1)
    ids = lambda: next(counter)  # noqa: E731
    records: list[Transaction] = []
    result = SimResult(History([], cfg.deployment), sim, trace=events)
    repl_delay = cfg.repl_delay_nanos if cfg.replication_delay_mode == "randomized" else None

    if cfg.deployment == "wt":
        wt = WtEngine(sink)
        result.wt = wt
        execute = lambda sid, ops: _wt_txn(sim, cfg, wt, sid, ops)  # noqa: E731
    elif cfg.deployment == "rs":
        primary = RsPrimary(sim, 0, cfg.replica_count, commit_gap=cfg.commit_gap_nanos, trace=sink)
        start_replica_set(sim, primary, cfg.net_nanos, repl_delay)
        result.primaries = [primary]
        execute = lambda sid, ops: _rs_txn(sim, cfg, primary, sid, ops)  # noqa: E731
    else:
        skews = [rng.randint(-cfg.clock_skew_nanos, cfg.clock_skew_nanos)
                 for _ in range(cfg.shard_count)]
        cluster = ScCluster(sim, cfg.shard_count, cfg.replica_count, cfg.mongos_count,
                            cfg.net_nanos, skews, cfg.commit_gap_nanos, repl_delay)
        for shard in cluster.shards:
            shard.wt.trace = sink
        result.primaries = cluster.shards
        execute = _ScClient(cluster, cfg).execute

    for sid in range(1, cfg.concurrency + 1):
        sim.spawn(_client(sim, cfg, sid, queue, ids, execute, records), name=f"client-{sid}")
    sim.run()
    header = {"config": cfg.to_dict(), "seed": cfg.seed}
    if cfg.deployment == "sc":
        header["shardCount"] = cfg.shard_count
    result.history = History(records, cfg.deployment, header)
    return result


def run(cfg: SimConfig) -> History:
    return run_detailed(cfg).history


# --- directed interleavings -----------------------------------------------

class ScriptError(ValueError):
    pass


@dataclass
class _ScriptTxn:
    txn_id: int
    session: int
    ops: list[Op] = field(default_factory=list)
    start: int | None = None
    commit: int | None = None
    read_ts: Ts | None = None
    commit_ts: Ts | None = None
    tid: int | None = None
    lamport: int | None = None
    status: str | None = None
    stage: str = "open"


def _drive(gen):
    """Run a handler generator that must not block."""
    try:
        cmd = next(gen)
    except StopIteration as stop:
        return stop.value
    raise ScriptError(f"handler would block here ({cmd!r})")


def interleave_directed(script: str) -> History:
    """Execute a line-per-handler script exactly in the order written.

    Commands (``S`` is a declared session name)::

        deployment wt|rs        replicas N          session S
        begin S                 read S KEY          write S KEY VALUE
        commit S                abort S
        commit-ts S             commit-local S      finish S      (rs only)
        replicate SECONDARY     (rs only, e.g. ``replicate s1``)

    In rs scripts ``commit`` is ``commit-ts`` plus ``commit-local``: the
    commit is logged and applied locally but the client is not answered until
    ``finish``, which requires the entry to be majority replicated.
    """
    sim = Simulator(0)
    deployment, replicas = "wt", 3
    sessions: dict[str, int] = {}
    active: dict[int, _ScriptTxn] = {}
    done: list[_ScriptTxn] = []
    wt: WtEngine | None = None
    primary: RsPrimary | None = None
    secondaries: dict[str, RsSecondary] = {}
    ids = itertools.count(1)

    def engine_ready() -> None:
        nonlocal wt, primary
        if wt is None and primary is None:
            if deployment == "wt":
                wt = WtEngine()
            else:
                primary = RsPrimary(sim, 0, replicas)
                for sec_id in primary.secondary_ids:
                    secondaries[f"s{sec_id}"] = RsSecondary(sec_id)

    def txn_of(name: str, lineno: int) -> _ScriptTxn:
        if name not in sessions:
            raise ScriptError(f"line {lineno}: unknown session {name!r}")
        sid = sessions[name]
        if sid not in active:
            raise ScriptError(f"line {lineno}: session {name!r} has no open transaction")
        return active[sid]

    for lineno, raw in enumerate(script.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        sim.now += 1000
        cmd, *args = line.split()
        try:
            if cmd == "deployment":
                if args[0] not in ("wt", "rs"):
                    raise ScriptError(f"line {lineno}: directed scripts support wt and rs")
                deployment = args[0]
            elif cmd == "replicas":
                replicas = int(args[0])
            elif cmd == "session":
                sessions[args[0]] = len(sessions) + 1
            elif cmd == "begin":
                engine_ready()
                if args[0] not in sessions:
                    raise ScriptError(f"line {lineno}: unknown session {args[0]!r}")
                sid = sessions[args[0]]
                if sid in active:
                    raise ScriptError(f"line {lineno}: session {args[0]!r} already in a transaction")
                t = active[sid] = _ScriptTxn(next(ids), sid)
                if wt is not None:
                    wt.wt_start(sid)
                    t.start = sim.stamp()
            elif cmd in ("read", "write"):
                t = txn_of(args[0], lineno)
                key = args[1]
                if wt is not None:
                    if cmd == "read":
                        t.ops.append(R(key, wt.wt_read(t.session, key)[0]))
                    elif wt.wt_update(t.session, key, int(args[2])) is Result.ROLLBACK:
                        t.status = ABORTED
                    else:
                        t.ops.append(W(key, int(args[2])))
                else:
                    assert primary is not None
                    if primary.open_wt_session(t.session):
                        t.start = primary.starts[t.session]
                        t.read_ts = primary.read_ts_of(t.session)
                    if cmd == "read":
                        t.ops.append(R(key, _drive(primary.rs_read(t.session, key))))
                    elif _drive(primary.rs_update(t.session, key, int(args[2]))) is Result.ROLLBACK:
                        primary.rs_rollback(t.session)
                        t.status = ABORTED
                    else:
                        t.ops.append(W(key, int(args[2])))
                if t.status == ABORTED:
                    done.append(active.pop(t.session))
            elif cmd == "abort":
                t = txn_of(args[0], lineno)
                if wt is not None:
                    wt.wt_rollback(t.session)
                else:
                    primary.rs_rollback(t.session)  # type: ignore[union-attr]
                t.status = ABORTED
                done.append(active.pop(t.session))
            elif cmd in ("commit", "commit-ts", "commit-local", "finish"):
                t = txn_of(args[0], lineno)
                if wt is not None:
                    if cmd != "commit":
                        raise ScriptError(f"line {lineno}: {cmd} is an rs command")
                    t.tid = wt.sessions[t.session].tid
                    wt.wt_commit(t.session)
                    t.commit, t.lamport, t.status = sim.stamp(), sim.steps + lineno, COMMITTED
                    done.append(active.pop(t.session))
                    continue
                assert primary is not None
                if cmd in ("commit", "commit-ts"):
                    if t.stage != "open":
                        raise ScriptError(f"line {lineno}: commit already started")
                    if primary.open_wt_session(t.session):
                        t.start = primary.starts[t.session]
                        t.read_ts = primary.read_ts_of(t.session)
                    primary.starts.pop(t.session, None)
                    t.commit_ts, t.tid, _ = primary.commit_begin(t.session)
                    t.stage = "logged"
                if cmd in ("commit", "commit-local"):
                    if t.stage != "logged":
                        raise ScriptError(f"line {lineno}: commit-local needs commit-ts first")
                    primary.commit_local(t.session)
                    t.stage = "local"
                if cmd == "finish":
                    if t.stage != "local":
                        raise ScriptError(f"line {lineno}: finish needs a local commit first")
                    if primary.last_majority_committed < t.commit_ts:  # type: ignore[operator]
                        raise ScriptError(f"line {lineno}: commit {t.commit_ts} is not majority "
                                          f"committed (frontier {primary.last_majority_committed})")
                    t.commit, t.lamport, t.status = sim.stamp(), lineno, COMMITTED
                    done.append(active.pop(t.session))
            elif cmd == "replicate":
                engine_ready()
                if args[0] not in secondaries:
                    raise ScriptError(f"line {lineno}: unknown secondary {args[0]!r}")
                sec = secondaries[args[0]]
                push = primary.primary_handle_pull(sec.sec_id, PullOplog(sec.last_pulled))  # type: ignore[union-attr]
                primary.primary_handle_ack(sec.sec_id, sec.apply_push(push))  # type: ignore[union-attr]
            else:
                raise ScriptError(f"line {lineno}: unknown command {cmd!r}")
        except (IndexError, ValueError) as exc:
            if isinstance(exc, ScriptError):
                raise
            raise ScriptError(f"line {lineno}: malformed command {line!r}") from exc

    for t in active.values():
        t.status = ABORTED
        done.append(t)
    txns = [Transaction(
        txn_id=t.txn_id, session_id=t.session, ops=tuple(t.ops), status=t.status or ABORTED,
        start=t.start if t.status == COMMITTED else None,
        commit=t.commit if t.status == COMMITTED else None,
        read_ts=t.read_ts, commit_ts=t.commit_ts if t.status == COMMITTED else None,
        wt_tid=t.tid if t.status == COMMITTED else None,
        lamport=t.lamport if t.status == COMMITTED else None,
    ) for t in done]
    return History(txns, deployment, {"script": True})


def script_from_history(h: History) -> str:
    """A sequential script replaying the committed transactions of ``h`` in commit order."""
    lines = [f"deployment {h.deployment or 'wt'}"]
    if h.deployment == "rs":
        cfg = h.header.get("config", {})
        lines.append(f"replicas {cfg.get('replicaCount', 3)}")
        secs = [f"s{i}" for i in range(1, cfg.get("replicaCount", 3))]
    else:
        secs = []
    sessions = sorted({t.session_id for t in h.committed() if t.txn_id})
    lines += [f"session c{s}" for s in sessions]
    for t in sorted((t for t in h.committed() if t.txn_id), key=lambda t: t.commit):
        name = f"c{t.session_id}"
        lines.append(f"begin {name}")
        for op in t.ops:
            lines.append(f"read {name} {op.key}" if op.is_read else f"write {name} {op.key} {op.value}")
        lines.append(f"commit {name}")
        if h.deployment == "rs":
            lines += [f"replicate {s}" for s in secs]
            lines.append(f"finish {name}")
    return "\n".join(lines) + "\n"
