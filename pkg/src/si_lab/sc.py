"""Sharded-cluster transactions.

A router (mongos) picks the read timestamp from its cluster time and sends
each operation to the shard owning the key.  The first shard touched
coordinates a two-phase commit that always commits once entered; the commit
timestamp is the largest prepare timestamp.  Shards wait in four places:
catching their clock up to the read timestamp, filling oplog holes below
it, and reading or updating a key whose newest visible version is prepared.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import NamedTuple

from .model import Ts
from .rs import CommitMarker, Hlc, Noop, Ops, RsPrimary, start_replica_set
from .sched import Simulator, Sleep, Until
from .wt import Result


class Prepare(NamedTuple):
    sc_sid: int
    ct: Ts


class PrepareAck(NamedTuple):
    prepare_ts: Ts


class Commit(NamedTuple):
    sc_sid: int
    commit_ts: Ts


class Abort(NamedTuple):
    sc_sid: int


class DecAck(NamedTuple):
    sc_sid: int


class TwoPcAck(NamedTuple):
    ct: Ts


def shard_of(key: str, shard_count: int) -> int:
    return zlib.crc32(key.encode()) % shard_count


@dataclass
class Mongos:
    node_id: int
    clock: Hlc
    read_ts: dict[int, Ts] = field(default_factory=dict)
    shards: dict[int, list[int]] = field(default_factory=dict)
    coordinator: dict[int, int] = field(default_factory=dict)

    def mongos_begin(self, sid: int, client_ct: Ts) -> Ts:
        if sid in self.read_ts:
            raise RuntimeError(f"session {sid} already has an active transaction")
        self.clock.merge(client_ct)
        self.read_ts[sid] = self.clock.ct
        self.shards[sid] = []
        return self.clock.ct

    def end(self, sid: int) -> None:
        self.read_ts.pop(sid, None)
        self.shards.pop(sid, None)
        self.coordinator.pop(sid, None)


@dataclass
class ScOutcome:
    committed: bool
    ops: list[tuple[str, str, int]]
    read_ts: Ts
    commit_ts: Ts | None = None
    lamport: int | None = None
    shard_tids: dict[int, int] = field(default_factory=dict)
    prepare_ts: dict[int, Ts] = field(default_factory=dict)
    start: int = 0
    commit: int | None = None


class ScCluster:
    def __init__(self, sim: Simulator, shard_count: int, replica_count: int, mongos_count: int,
                 net: tuple[int, int], skews: list[int], commit_gap: tuple[int, int] = (0, 0),
                 repl_delay: tuple[int, int] | None = None):
        self.sim = sim
        self.net = net
        self.shard_count = shard_count
        self.shards = [RsPrimary(sim, node_id=i, replica_count=replica_count, sc_mode=True,
                                 skew_nanos=skews[i], commit_gap=commit_gap)
                       for i in range(shard_count)]
        for shard in self.shards:
            start_replica_set(sim, shard, net, repl_delay)
        self.mongos = [Mongos(shard_count + i, Hlc(shard_count + i)) for i in range(mongos_count)]

    def _hop(self, chan) -> Sleep:
        return Sleep(self.sim.channel_delay(chan, self.sim.uniform(self.net)))

    def route(self, key: str) -> int:
        return shard_of(key, self.shard_count)

    # shard-side handlers -------------------------------------------------
    def sc_start_on_shard(self, shard: RsPrimary, sid: int, read_ts: Ts):
        shard.open_wt_session(sid, read_ts)
        if shard.ct < read_ts:
            # Clock behind the snapshot: log a noop at the read timestamp.
            shard.clock.merge(read_ts)
            shard.append_oplog(read_ts, Noop("read-concern"))
        yield Until(lambda: shard.wt.all_committed() >= read_ts,
                    f"shard {shard.node_id} holes below {read_ts}")

    def shard_handle_prepare(self, shard: RsPrimary, msg: Prepare):
        shard.clock.merge(msg.ct)
        pts = shard.tick()
        shard.wt.wt_prepare(shard.wt_sid(msg.sc_sid), pts)
        ops = shard.txn_ops[msg.sc_sid]
        shard.append_oplog(pts, Ops(tuple(ops)) if ops else Noop())
        yield from shard.wait_majority(pts, f"prepare of session {msg.sc_sid}")
        return PrepareAck(pts)

    def shard_handle_commit(self, shard: RsPrimary, msg: Commit):
        shard.clock.merge(msg.commit_ts)
        ct = shard.tick()
        wsid = shard.wt_sid(msg.sc_sid)
        shard.wt.wt_commit_prepare_ts(wsid, msg.commit_ts)
        shard.wt.wt_commit_prepare(wsid)
        shard.rs_wt_conns.pop(msg.sc_sid, None)
        shard.txn_ops.pop(msg.sc_sid, None)
        shard.starts.pop(msg.sc_sid, None)
        shard.append_oplog(ct, CommitMarker(msg.commit_ts))
        yield from shard.wait_majority(ct, f"commit marker of session {msg.sc_sid}")
        return DecAck(msg.sc_sid)

    def shard_handle_abort(self, shard: RsPrimary, msg: Abort):
        if not shard.has_session(msg.sc_sid):
            return DecAck(msg.sc_sid)
        shard.rs_rollback(msg.sc_sid)
        yield from shard.wait_majority(shard.ct, f"abort of session {msg.sc_sid}")
        return DecAck(msg.sc_sid)

    # fan-out helpers -----------------------------------------------------
    def _call(self, shard_id: int, sid: int, handler, results: dict, key):
        """Deliver a request to a shard, run the handler there, carry the reply back."""
        yield self._hop(("req", sid, shard_id))
        reply = yield from handler
        ct = self.shards[shard_id].ct
        yield self._hop(("rep", sid, shard_id))
        results[key] = (reply, ct)

    def _gather(self, sid: int, calls: list[tuple[int, object]], label: str):
        results: dict = {}
        for shard_id, handler in calls:
            self.sim.spawn(self._call(shard_id, sid, handler, results, shard_id),
                           name=f"{label}-{sid}-{shard_id}")
        yield Until(lambda: len(results) == len(calls), f"session {sid} awaiting {label}")
        return results

    # router --------------------------------------------------------------
    def execute(self, mongos: Mongos, sid: int, client_ct: Ts, ops, op_delay: tuple[int, int]):
        """Run one transaction for a client; the generator returns an ScOutcome."""
        sim = self.sim
        yield self._hop(("client", sid))
        read_ts = mongos.mongos_begin(sid, client_ct)
        out = ScOutcome(False, [], read_ts, start=sim.stamp())
        parts = mongos.shards[sid]
        for i, (kind, key, value) in enumerate(ops):
            if i:
                yield Sleep(sim.uniform(op_delay))
                yield self._hop(("client", sid))
            shard_id = self.route(key)
            shard = self.shards[shard_id]
            yield self._hop(("req", sid, shard_id))
            if not shard.has_session(sid):
                if not parts:
                    mongos.coordinator[sid] = shard_id
                parts.append(shard_id)
                yield from self.sc_start_on_shard(shard, sid, read_ts)
            if kind == "r":
                value = yield from shard.rs_read(sid, key)
                res = Result.OK
            else:
                tid_before = shard.tid_of(sid)
                res = yield from shard.rs_update(sid, key, value)
                if res is Result.OK and tid_before == 0:
                    out.shard_tids[shard_id] = shard.tid_of(sid)
            reply_ct = shard.ct
            yield self._hop(("rep", sid, shard_id))
            mongos.clock.merge(reply_ct)
            if res is Result.ROLLBACK:
                others = [p for p in parts if p != shard_id]
                if others:
                    yield from self._gather(sid, [(p, self.shard_handle_abort(self.shards[p], Abort(sid)))
                                                  for p in others], "abort")
                mongos.end(sid)
                yield self._hop(("client", sid))
                return out
            out.ops.append((kind, key, value))
        yield Sleep(sim.uniform(op_delay))
        yield self._hop(("client", sid))
        if not out.shard_tids:
            results = yield from self._gather(
                sid, [(p, self.shards[p].rs_commit(sid)) for p in parts], "local-commit")
            for _, ct in results.values():
                mongos.clock.merge(ct)
            out.commit_ts = read_ts
            out.lamport = sim.steps
        else:
            coord = mongos.coordinator[sid]
            yield self._hop(("req", sid, coord))
            ack = yield from self.two_phase_commit(self.shards[coord], sid, parts, mongos.clock.ct, out)
            yield self._hop(("rep", sid, coord))
            mongos.clock.merge(ack.ct)
        mongos.end(sid)
        yield self._hop(("client", sid))
        out.committed = True
        out.commit = sim.stamp()
        return out

    def two_phase_commit(self, coord: RsPrimary, sid: int, parts: list[int], router_ct: Ts,
                         out: ScOutcome):
        coord.clock.merge(router_ct)
        ts = coord.tick()
        coord.append_oplog(ts, Noop(f"participants {parts}"))
        yield from coord.wait_majority(ts, f"participant record of session {sid}")
        acks = yield from self._gather(
            sid, [(p, self.shard_handle_prepare(self.shards[p], Prepare(sid, coord.ct)))
                  for p in parts], "prepare")
        for p, (ack, _) in acks.items():
            out.prepare_ts[p] = ack.prepare_ts
            coord.clock.merge(ack.prepare_ts)
        cts = max(out.prepare_ts.values())
        out.commit_ts = cts
        out.lamport = self.sim.steps
        ts = coord.tick()
        coord.append_oplog(ts, Noop(f"decision {cts}"))
        yield from coord.wait_majority(ts, f"decision record of session {sid}")
        yield from self._gather(
            sid, [(p, self.shard_handle_commit(self.shards[p], Commit(sid, cts))) for p in parts],
            "commit")
        return TwoPcAck(coord.ct)
