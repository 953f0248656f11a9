"""Replica-set transactions on top of the storage engine.

The primary serves every transaction.  Reads come from the latest locally
committed data (the gap-free oplog frontier at start), and the commit waits
until its oplog entry is majority replicated.  Secondaries pull the oplog
and acknowledge how far they have read.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from typing import Any, Callable, NamedTuple

from .model import TS_MIN, Ts
from .sched import Simulator, Sleep, Until
from .wt import Phase, Result, WtEngine

NODE_STRIDE = 64  # logical components of different nodes never collide


class Hlc:
    """Hybrid logical clock whose ticks are unique across nodes.

    The physical part is the node's skewed simulated clock in milliseconds.
    Every tick's logical part is congruent to the node id modulo
    ``NODE_STRIDE``.
    """

    def __init__(self, node_id: int, skew_nanos: int = 0):
        if not 0 <= node_id < NODE_STRIDE:
            raise ValueError("node id out of range")
        self.node_id = node_id
        self.skew = skew_nanos
        self.ct = TS_MIN

    def physical(self, now: int) -> int:
        return max(0, now + self.skew) // 1_000_000

    def tick(self, now: int) -> Ts:
        pt = self.physical(now)
        if pt > self.ct.physical:
            self.ct = Ts(pt, self.node_id)
        else:
            nxt = self.ct.logical + 1
            nxt += (self.node_id - nxt) % NODE_STRIDE
            self.ct = Ts(self.ct.physical, nxt)
        return self.ct

    def merge(self, other: Ts | None) -> None:
        if other is not None and other > self.ct:
            self.ct = other


class Ops(NamedTuple):
    ops: tuple[tuple[str, int], ...]


class Noop(NamedTuple):
    note: str = ""


class CommitMarker(NamedTuple):
    cts: Ts


class OplogEntry(NamedTuple):
    ts: Ts
    payload: Ops | Noop | CommitMarker


class PullOplog(NamedTuple):
    last_pulled: Ts


class PushOplog(NamedTuple):
    entries: tuple[OplogEntry, ...]
    ct: Ts


class ReplicateAck(NamedTuple):
    last_pulled: Ts


@dataclass
class CommitInfo:
    read_ts: Ts | None
    commit_ts: Ts
    tid: int
    start: int | None
    commit: int


@dataclass
class RsSecondary:
    sec_id: int
    oplog: list[OplogEntry] = field(default_factory=list)
    last_pulled: Ts = TS_MIN
    clock: Hlc | None = None

    def apply_push(self, msg: PushOplog) -> ReplicateAck:
        self.oplog.extend(msg.entries)
        self.last_pulled = msg.ct
        if self.clock is not None:
            self.clock.merge(msg.ct)
        return ReplicateAck(self.last_pulled)


class RsPrimary:
    """Primary of one replica set.

    ``sc_mode`` switches on the sharded-cluster behaviour: the read
    timestamp is supplied by the router and updates pre-read their key so
    they wait out prepared writers.
    """

    def __init__(self, sim: Simulator, node_id: int = 0, replica_count: int = 3,
                 sc_mode: bool = False, skew_nanos: int = 0, commit_gap: tuple[int, int] = (0, 0),
                 trace: Callable[[dict[str, Any]], None] | None = None):
        self.sim = sim
        self.node_id = node_id
        self.replica_count = replica_count
        self.sc_mode = sc_mode
        self.commit_gap = commit_gap
        self.wt = WtEngine(trace)
        self.clock = Hlc(node_id, skew_nanos)
        self.oplog: list[OplogEntry] = []
        self._oplog_ts: list[Ts] = []
        self.rs_wt_conns: dict[int, int] = {}
        self.txn_ops: dict[int, list[tuple[str, int]]] = {}
        self.starts: dict[int, int] = {}
        self.last_pulled_acks: dict[int, Ts] = {}
        self.secondary_ids = list(range(1, replica_count))
        self.last_majority_committed = TS_MIN
        self.self_ack = TS_MIN
        self.frontier_trace: list[Ts] = []
        self.majority_order: list[Ts] = []
        self._wt_sids = 0

    # clock and log ---------------------------------------------------------
    @property
    def ct(self) -> Ts:
        return self.clock.ct

    def tick(self) -> Ts:
        return self.clock.tick(self.sim.now)

    def last_oplog_ts(self) -> Ts:
        return self.oplog[-1].ts if self.oplog else TS_MIN

    def append_oplog(self, ts: Ts, payload: Ops | Noop | CommitMarker) -> None:
        if self.oplog and ts <= self.oplog[-1].ts:
            raise RuntimeError(f"oplog must grow: {ts} after {self.oplog[-1].ts}")
        self.oplog.append(OplogEntry(ts, payload))
        self._oplog_ts.append(ts)
        # Every oplog write is a committed storage write at that timestamp.
        self.wt.note_commit_ts(ts)
        self.self_ack = ts
        self._recompute_majority()

    def _recompute_majority(self) -> None:
        acks = [self.self_ack] + [self.last_pulled_acks.get(s, TS_MIN) for s in self.secondary_ids]
        acks.sort(reverse=True)
        cand = acks[self.replica_count // 2]
        if cand > self.last_majority_committed:
            self.last_majority_committed = cand
            self.frontier_trace.append(cand)

    def wait_majority(self, ts: Ts, label: str = ""):
        yield Until(lambda: self.last_majority_committed >= ts,
                    f"node {self.node_id} majority >= {ts} {label}", priority=ts)

    # replication -----------------------------------------------------------
    def primary_handle_pull(self, sec_id: int, msg: PullOplog) -> PushOplog:
        entries = tuple(self.oplog[bisect.bisect_right(self._oplog_ts, msg.last_pulled):])
        return PushOplog(entries, self.ct)

    def primary_handle_ack(self, sec_id: int, msg: ReplicateAck) -> None:
        prev = self.last_pulled_acks.get(sec_id, TS_MIN)
        if msg.last_pulled > prev:
            self.last_pulled_acks[sec_id] = msg.last_pulled
        self._recompute_majority()

    # transactions ----------------------------------------------------------
    def has_session(self, sid: int) -> bool:
        return sid in self.rs_wt_conns

    def wt_sid(self, sid: int) -> int:
        return self.rs_wt_conns[sid]

    def open_wt_session(self, sid: int, read_ts: Ts | None = None) -> bool:
        """Bind a fresh storage session on the first operation; True if opened."""
        if sid in self.rs_wt_conns:
            return False
        self._wt_sids += 1
        wsid = self._wt_sids
        self.rs_wt_conns[sid] = wsid
        self.txn_ops[sid] = []
        self.wt.wt_start(wsid)
        if not self.sc_mode:
            read_ts = self.wt.all_committed()
        self.wt.wt_set_read_ts(wsid, read_ts)
        self.starts[sid] = self.sim.stamp()
        return True

    def read_ts_of(self, sid: int) -> Ts | None:
        return self.wt.sessions[self.rs_wt_conns[sid]].read_ts

    def tid_of(self, sid: int) -> int:
        return self.wt.sessions[self.rs_wt_conns[sid]].tid

    def rs_read(self, sid: int, k: str):
        self.open_wt_session(sid)
        wsid = self.rs_wt_conns[sid]
        while True:
            value, phase = self.wt.wt_read(wsid, k)
            if phase is not Phase.PREPARE_IN_PROGRESS:
                return value
            yield Until(lambda: self.wt.wt_read(wsid, k)[1] is not Phase.PREPARE_IN_PROGRESS,
                        f"node {self.node_id} read {k} waits for prepared writer")

    def rs_update(self, sid: int, k: str, v: int):
        self.open_wt_session(sid)
        if self.sc_mode:
            yield from self.rs_read(sid, k)
        res = self.wt.wt_update(self.rs_wt_conns[sid], k, v)
        if res is Result.OK:
            self.txn_ops[sid].append((k, v))
        else:
            self._forget(sid)
        return res

    def _forget(self, sid: int) -> None:
        self.rs_wt_conns.pop(sid, None)
        self.txn_ops.pop(sid, None)

    def commit_begin(self, sid: int) -> tuple[Ts, int, Ts | None]:
        """Tick, take the commit timestamp and log the transaction, atomically."""
        wsid = self.rs_wt_conns[sid]
        txn = self.wt.sessions[wsid]
        ct = self.tick()
        txn.commit_ts = ct
        self.wt.wt_set_commit_ts(wsid)
        ops = self.txn_ops[sid]
        self.append_oplog(ct, Ops(tuple(ops)) if ops else Noop())
        return ct, txn.tid, txn.read_ts

    def commit_local(self, sid: int) -> None:
        self.wt.wt_commit(self.rs_wt_conns[sid])
        self._forget(sid)

    def rs_commit(self, sid: int):
        start = self.starts.pop(sid, None)
        ct, tid, read_ts = self.commit_begin(sid)
        gap = self.sim.uniform(self.commit_gap)
        if gap:
            yield Sleep(gap)
        self.commit_local(sid)
        yield from self.wait_majority(ct, f"commit of session {sid}")
        self.majority_order.append(ct)
        return CommitInfo(read_ts, ct, tid, start, self.sim.stamp())

    def rs_rollback(self, sid: int) -> None:
        wsid = self.rs_wt_conns.get(sid)
        if wsid is not None and self.wt.has_txn(wsid):
            self.wt.wt_rollback(wsid)
        self.starts.pop(sid, None)
        self._forget(sid)


def secondary_loop(sim: Simulator, primary: RsPrimary, sec: RsSecondary,
                   net: tuple[int, int], extra_delay: tuple[int, int] | None = None):
    """Pull whenever the primary has something new; acknowledge each pull."""
    chan_to, chan_from = ("pull", primary.node_id, sec.sec_id), ("push", primary.node_id, sec.sec_id)
    while True:
        yield Until(lambda: primary.last_oplog_ts() > sec.last_pulled,
                    f"secondary {sec.sec_id} idle", daemon=True)
        if extra_delay is not None:
            yield Sleep(sim.uniform(extra_delay))
        yield Sleep(sim.channel_delay(chan_to, sim.uniform(net)))
        push = primary.primary_handle_pull(sec.sec_id, PullOplog(sec.last_pulled))
        yield Sleep(sim.channel_delay(chan_from, sim.uniform(net)))
        ack = sec.apply_push(push)
        yield Sleep(sim.channel_delay(chan_to, sim.uniform(net)))
        primary.primary_handle_ack(sec.sec_id, ack)


def start_replica_set(sim: Simulator, primary: RsPrimary, net: tuple[int, int],
                      extra_delay: tuple[int, int] | None = None) -> list[RsSecondary]:
    secs = []
    for sid in primary.secondary_ids:
        sec = RsSecondary(sid)
        secs.append(sec)
        sim.spawn(secondary_loop(sim, primary, sec, net, extra_delay),
                  name=f"secondary-{primary.node_id}-{sid}")
    return secs
