"""Single-node multi-version storage engine with tid-based snapshots.

Each session runs at most one transaction.  A transaction's snapshot is
fixed when it starts: writers that were active then (``concur``) or that
obtain a tid later (``>= upper_limit``) stay invisible for its whole life.
When the caller sets a read timestamp the engine also filters versions by
commit timestamp, which is how the replica-set and sharded layers use it.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Any, Callable

from .model import INITIAL_VALUE, TS_MIN, Ts

TID_UNASSIGNED = 0
TID_ABORTED = -1


class Phase(enum.Enum):
    NORMAL = "-"
    PREPARE_IN_PROGRESS = "PrepareInProgress"
    PREPARE_RESOLVED = "PrepareResolved"


class Result(enum.Enum):
    OK = "Ok"
    ROLLBACK = "Rollback"


class WtError(RuntimeError):
    pass


class ActiveTxnExists(WtError):
    pass


class NoActiveTxn(WtError):
    pass


class NotPrepared(WtError):
    pass


class CommitTsUnset(WtError):
    pass


@dataclass
class VersionEntry:
    tid: int
    value: int
    ts: Ts | None
    phase: Phase = Phase.NORMAL


@dataclass
class WtTxn:
    upper_limit: int
    concur: frozenset[int]
    tid: int = TID_UNASSIGNED
    mods: list[tuple[str, int]] = field(default_factory=list)
    read_ts: Ts | None = None
    commit_ts: Ts | None = None
    prepare_ts: Ts | None = None
    prepared: bool = False
    touched: bool = False
    read_ts_set: bool = False


class WtEngine:
    def __init__(self, trace: Callable[[dict[str, Any]], None] | None = None):
        self.current_tid = 1
        self.sessions: dict[int, WtTxn] = {}
        self.txn_global: dict[int, tuple[int | None, Ts | None]] = {}
        self.store: dict[str, list[VersionEntry]] = {}
        self.max_commit_ts: Ts | None = None
        self.trace = trace

    def _emit(self, handler: str, s: int, **fields: Any) -> None:
        if self.trace is not None:
            self.trace({"handler": handler, "session": s, **fields})

    def _txn(self, s: int) -> WtTxn:
        txn = self.sessions.get(s)
        if txn is None:
            raise NoActiveTxn(f"no active transaction on wt session {s}")
        return txn

    def _reset_global(self, s: int) -> None:
        # An absent entry stands for (NONE, NONE); dropping it keeps scans short.
        self.txn_global.pop(s, None)

    def has_txn(self, s: int) -> bool:
        return s in self.sessions

    def wt_start(self, s: int) -> WtTxn:
        if s in self.sessions:
            raise ActiveTxnExists(f"wt session {s} already has an active transaction")
        concur = frozenset(tid for tid, _ in self.txn_global.values() if tid is not None)
        txn = WtTxn(upper_limit=self.current_tid, concur=concur)
        self.sessions[s] = txn
        self._emit("wt_start", s, concur=sorted(concur), upper_limit=txn.upper_limit)
        return txn

    @staticmethod
    def txn_visible(t: WtTxn, tid: int, ts: Ts | None) -> bool:
        if tid == TID_ABORTED or tid in t.concur:
            return False
        if tid == t.tid:
            # A transaction always sees its own writes.
            return True
        if tid >= t.upper_limit:
            return False
        if t.read_ts is not None:
            return ts is not None and ts <= t.read_ts
        return True

    def wt_read(self, s: int, k: str) -> tuple[int, Phase]:
        txn = self._txn(s)
        txn.touched = True
        for e in self.store.get(k, ()):
            if self.txn_visible(txn, e.tid, e.ts):
                return e.value, e.phase
        return INITIAL_VALUE, Phase.NORMAL

    def wt_update(self, s: int, k: str, v: int) -> Result:
        txn = self._txn(s)
        txn.touched = True
        versions = self.store.setdefault(k, [])
        for e in versions:
            if e.tid != TID_ABORTED and not self.txn_visible(txn, e.tid, e.ts):
                self._emit("wt_update", s, key=k, value=v, result="Rollback", blocker=e.tid)
                self.wt_rollback(s)
                return Result.ROLLBACK
        if txn.tid == TID_UNASSIGNED:
            txn.tid = self.current_tid
            self.current_tid += 1
            self.txn_global[s] = (txn.tid, None)
        txn.mods.append((k, v))
        versions.insert(0, VersionEntry(txn.tid, v, None))
        self._emit("wt_update", s, key=k, value=v, result="Ok", tid=txn.tid)
        return Result.OK

    def _own_entries(self, txn: WtTxn):
        for k in dict.fromkeys(k for k, _ in txn.mods):
            for e in self.store[k]:
                if e.tid == txn.tid:
                    yield e

    def wt_commit(self, s: int) -> None:
        txn = self._txn(s)
        if txn.prepared:
            raise WtError("prepared transactions commit via wt_commit_prepare")
        if txn.tid != TID_UNASSIGNED:
            for e in self._own_entries(txn):
                e.ts = txn.commit_ts
        self._reset_global(s)
        del self.sessions[s]
        self._emit("wt_commit", s, tid=txn.tid, commit_ts=txn.commit_ts)

    def wt_rollback(self, s: int) -> None:
        txn = self._txn(s)
        if txn.tid != TID_UNASSIGNED:
            for e in list(self._own_entries(txn)):
                e.tid = TID_ABORTED
        self._reset_global(s)
        del self.sessions[s]
        self._emit("wt_rollback", s, tid=txn.tid)

    def wt_set_read_ts(self, s: int, rts: Ts | None) -> None:
        txn = self._txn(s)
        if txn.read_ts_set or txn.touched:
            raise WtError("read timestamp may be set once, before the first operation")
        txn.read_ts = rts
        txn.read_ts_set = True

    def wt_set_commit_ts(self, s: int) -> None:
        txn = self._txn(s)
        if txn.commit_ts is None:
            raise CommitTsUnset(f"wt session {s} has no commit timestamp")
        c = txn.commit_ts
        if self.max_commit_ts is None or c > self.max_commit_ts:
            self.max_commit_ts = c
        self.txn_global[s] = (txn.tid, c)

    def note_commit_ts(self, c: Ts) -> None:
        """Advance maxCommitTs for a write that bypasses the transaction path."""
        if self.max_commit_ts is None or c > self.max_commit_ts:
            self.max_commit_ts = c

    def all_committed(self) -> Ts:
        """Largest timestamp at or below which every commit has finished.

        This is maxCommitTs itself unless a transaction holding a smaller
        commit timestamp has not finished committing, in which case it is the
        predecessor of the smallest such pinned timestamp.
        """
        if self.max_commit_ts is None:
            return TS_MIN
        frontier = self.max_commit_ts
        for _, c in self.txn_global.values():
            if c is not None and c <= frontier:
                frontier = c.pred()
        return frontier

    def wt_prepare(self, s: int, pts: Ts) -> Result:
        txn = self._txn(s)
        if txn.prepared:
            raise WtError(f"wt session {s} is already prepared")
        txn.prepared = True
        txn.prepare_ts = pts
        if txn.tid != TID_UNASSIGNED:
            for e in self._own_entries(txn):
                e.ts = pts
                e.phase = Phase.PREPARE_IN_PROGRESS
        self._reset_global(s)
        self._emit("wt_prepare", s, tid=txn.tid, prepare_ts=pts)
        return Result.OK

    def wt_commit_prepare_ts(self, s: int, cts: Ts) -> None:
        txn = self._txn(s)
        if not txn.prepared:
            raise NotPrepared(f"wt session {s} is not prepared")
        if cts < txn.prepare_ts:
            raise WtError(f"commit timestamp {cts} precedes prepare timestamp {txn.prepare_ts}")
        txn.commit_ts = cts
        self.txn_global[s] = (txn.tid, cts)

    def wt_commit_prepare(self, s: int) -> None:
        txn = self._txn(s)
        if not txn.prepared:
            raise NotPrepared(f"wt session {s} is not prepared")
        if txn.commit_ts is None:
            raise CommitTsUnset(f"wt session {s} has no commit timestamp")
        if txn.tid != TID_UNASSIGNED:
            for e in self._own_entries(txn):
                e.ts = txn.commit_ts
                e.phase = Phase.PREPARE_RESOLVED
        self._reset_global(s)
        self.note_commit_ts(txn.commit_ts)
        del self.sessions[s]
        self._emit("wt_commit_prepare", s, tid=txn.tid, commit_ts=txn.commit_ts)
