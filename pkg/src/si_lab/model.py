"""Transactions, histories, relations and abstract executions.

A history holds every transaction the simulator (or an importer) recorded,
including aborted ones.  Checking only ever looks at the committed part plus
the synthetic initial transaction ``T0`` (txn id 0), which writes the initial
value of every key and precedes everything else in real time.

Relations are exposed as sets of ``(a, b)`` pairs over transaction ids.  They
are backed by a dense boolean matrix because the checker routinely works with
a few thousand transactions and needs whole-relation operations to be cheap.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Iterator, NamedTuple, Sequence

import numpy as np

TOOL_VERSION = "0.1.0"
INITIAL_VALUE = 0
T0_ID = 0
T0_SESSION = 0

MAX_LOGICAL = 2**32 - 1


class MalformedHistory(ValueError):
    """Raised when a history lacks data a computation needs."""


class Ts(NamedTuple):
    """Hybrid logical clock value, ordered lexicographically."""

    physical: int
    logical: int

    def pred(self) -> "Ts":
        if self.logical > 0:
            return Ts(self.physical, self.logical - 1)
        if self.physical == 0:
            raise ValueError("the minimum timestamp has no predecessor")
        return Ts(self.physical - 1, MAX_LOGICAL)

    def key(self) -> int:
        """Order-preserving integer packing, used for vectorised comparisons."""
        return (self.physical << 32) | self.logical

    def __str__(self) -> str:
        return f"({self.physical},{self.logical})"


TS_MIN = Ts(0, 0)


class Op(NamedTuple):
    kind: str  # "r" or "w"
    key: str
    value: int

    @property
    def is_read(self) -> bool:
        return self.kind == "r"

    @property
    def is_write(self) -> bool:
        return self.kind == "w"

    def __str__(self) -> str:
        return f"{'R' if self.kind == 'r' else 'W'}({self.key},{self.value})"


def R(key: str, value: int) -> Op:
    return Op("r", key, value)


def W(key: str, value: int) -> Op:
    return Op("w", key, value)


class Event(NamedTuple):
    eid: tuple[int, int]  # (txn id, position in program order)
    op: Op


COMMITTED = "committed"
ABORTED = "aborted"


@dataclass(frozen=True)
class RealTimeStamps:
    start: int
    commit: int


@dataclass(frozen=True)
class Transaction:
    txn_id: int
    session_id: int
    ops: tuple[Op, ...]
    status: str = COMMITTED
    start: int | None = None
    commit: int | None = None
    read_ts: Ts | None = None
    commit_ts: Ts | None = None
    wt_tid: int | None = None
    lamport: int | None = None
    shard_tids: dict[int, int] | None = field(default=None, compare=False)

    @property
    def committed(self) -> bool:
        return self.status == COMMITTED

    @property
    def events(self) -> list[Event]:
        return [Event((self.txn_id, i), op) for i, op in enumerate(self.ops)]

    @property
    def is_update(self) -> bool:
        return any(op.is_write for op in self.ops)

    def write_keys(self) -> set[str]:
        return {op.key for op in self.ops if op.is_write}

    def last_writes(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for op in self.ops:
            if op.is_write:
                out[op.key] = op.value
        return out

    def external_reads(self) -> dict[str, int]:
        """Keys read before any other access in the txn, with the value returned."""
        seen: set[str] = set()
        out: dict[str, int] = {}
        for op in self.ops:
            if op.key not in seen and op.is_read:
                out[op.key] = op.value
            seen.add(op.key)
        return out

    def with_(self, **changes: Any) -> "Transaction":
        return replace(self, **changes)


def txn_last_write(t: Transaction, k: str) -> int | None:
    return t.last_writes().get(k)


def txn_first_read(t: Transaction, k: str) -> int | None:
    for op in t.ops:
        if op.key == k:
            return op.value if op.is_read else None
    return None


def conflict(s: Transaction, t: Transaction) -> bool:
    return not s.write_keys().isdisjoint(t.write_keys())


class Relation:
    """A binary relation over a fixed, ordered node set."""

    __slots__ = ("nodes", "index", "m")

    def __init__(self, nodes: Sequence[int], matrix: np.ndarray | None = None,
                 index: dict[int, int] | None = None):
        self.nodes = tuple(nodes)
        self.index = index if index is not None else {n: i for i, n in enumerate(self.nodes)}
        n = len(self.nodes)
        if matrix is None:
            matrix = np.zeros((n, n), dtype=bool)
        elif matrix.shape != (n, n):
            raise ValueError("matrix shape does not match node count")
        self.m = matrix.astype(bool, copy=False)

    @classmethod
    def from_pairs(cls, nodes: Sequence[int], pairs: Iterable[tuple[int, int]]) -> "Relation":
        rel = cls(nodes)
        for a, b in pairs:
            rel.m[rel.index[a], rel.index[b]] = True
        return rel

    def _like(self, matrix: np.ndarray) -> "Relation":
        return Relation(self.nodes, matrix, self.index)

    def _check(self, other: "Relation") -> None:
        if other.nodes != self.nodes:
            raise ValueError("relations are over different node sets")

    def __contains__(self, pair: tuple[int, int]) -> bool:
        a, b = pair
        ia, ib = self.index.get(a), self.index.get(b)
        if ia is None or ib is None:
            return False
        return bool(self.m[ia, ib])

    def __iter__(self) -> Iterator[tuple[int, int]]:
        rows, cols = np.nonzero(self.m)
        for i, j in zip(rows.tolist(), cols.tolist()):
            yield self.nodes[i], self.nodes[j]

    def pairs(self) -> set[tuple[int, int]]:
        return set(self)

    def __len__(self) -> int:
        return int(self.m.sum())

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Relation):
            return NotImplemented
        return self.nodes == other.nodes and bool(np.array_equal(self.m, other.m))

    def __le__(self, other: "Relation") -> bool:
        self._check(other)
        return not bool((self.m & ~other.m).any())

    def __or__(self, other: "Relation") -> "Relation":
        self._check(other)
        return self._like(self.m | other.m)

    def __and__(self, other: "Relation") -> "Relation":
        self._check(other)
        return self._like(self.m & other.m)

    def __sub__(self, other: "Relation") -> "Relation":
        self._check(other)
        return self._like(self.m & ~other.m)

    def __repr__(self) -> str:
        return f"Relation({sorted(self)})"

    def successors(self, a: int) -> set[int]:
        row = self.m[self.index[a]]
        return {self.nodes[j] for j in np.flatnonzero(row).tolist()}

    def predecessors(self, b: int) -> set[int]:
        """R^-1(b)."""
        col = self.m[:, self.index[b]]
        return {self.nodes[i] for i in np.flatnonzero(col).tolist()}

    def inverse(self) -> "Relation":
        return self._like(self.m.T.copy())

    def compose(self, other: "Relation") -> "Relation":
        """{(a, c) | a self b and b other c}."""
        self._check(other)
        prod = self.m.astype(np.float32) @ other.m.astype(np.float32)
        return self._like(prod > 0)

    def restrict(self, subset: Iterable[int]) -> "Relation":
        """Keep pairs whose first component lies in ``subset``."""
        keep = np.zeros(len(self.nodes), dtype=bool)
        for a in subset:
            keep[self.index[a]] = True
        return self._like(self.m & keep[:, None])

    def closure(self) -> "Relation":
        m = self.m.copy()
        for k in range(len(self.nodes)):
            m |= m[:, k:k + 1] & m[k:k + 1, :]
        return self._like(m)

    def is_irreflexive(self) -> bool:
        return not bool(np.diagonal(self.m).any())

    def is_transitive(self) -> bool:
        return self.compose(self) <= self

    def is_acyclic(self) -> bool:
        # Kahn's algorithm on the dense matrix.
        indeg = self.m.sum(axis=0).astype(np.int64)
        alive = np.ones(len(self.nodes), dtype=bool)
        frontier = list(np.flatnonzero(indeg == 0))
        removed = 0
        while frontier:
            i = frontier.pop()
            alive[i] = False
            removed += 1
            succ = np.flatnonzero(self.m[i] & alive)
            indeg[succ] -= 1
            frontier.extend(j for j in succ if indeg[j] == 0)
        return removed == len(self.nodes)

    def is_total(self) -> bool:
        """Every pair of distinct nodes is related in some direction."""
        n = len(self.nodes)
        both = self.m | self.m.T
        return bool(both.sum() - np.diagonal(both).sum() == n * (n - 1))

    def is_strict_partial_order(self) -> bool:
        return self.is_irreflexive() and self.is_transitive()

    def is_strict_total_order(self) -> bool:
        if not self.is_irreflexive() or (self.m & self.m.T).any() or not self.is_total():
            return False
        # A tournament is transitive iff its out-degrees are exactly 0..n-1.
        out = np.sort(self.m.sum(axis=1))
        return bool(np.array_equal(out, np.arange(len(self.nodes))))

    def total_order(self) -> list[int]:
        """Nodes listed from least to greatest; only meaningful for a total order."""
        out = self.m.sum(axis=1)
        return [self.nodes[i] for i in np.argsort(-out, kind="stable").tolist()]


@dataclass
class History:
    """A recorded run: every transaction plus provenance."""

    transactions: list[Transaction]
    deployment: str | None = None
    header: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        ids = [t.txn_id for t in self.transactions]
        if len(set(ids)) != len(ids):
            raise MalformedHistory("duplicate transaction ids")
        if T0_ID not in ids:
            self.transactions.insert(0, make_t0(self.keys_of(self.transactions)))
        self.transactions.sort(key=lambda t: t.txn_id)
        self._by_id = {t.txn_id: t for t in self.transactions}
        self._committed = [t for t in self.transactions if t.committed]

    @staticmethod
    def keys_of(txns: Iterable[Transaction]) -> list[str]:
        return sorted({op.key for t in txns for op in t.ops})

    @property
    def t0(self) -> Transaction:
        return self._by_id[T0_ID]

    def __getitem__(self, txn_id: int) -> Transaction:
        return self._by_id[txn_id]

    def __len__(self) -> int:
        """Committed transactions, not counting T0."""
        return len(self._committed) - 1

    def committed(self) -> list[Transaction]:
        """Committed transactions including T0, ordered by id."""
        return self._committed

    def aborted(self) -> list[Transaction]:
        return [t for t in self.transactions if not t.committed]

    def node_ids(self) -> list[int]:
        return [t.txn_id for t in self._committed]

    def keys(self) -> list[str]:
        return self.keys_of(self.transactions)

    @property
    def real_time(self) -> dict[int, RealTimeStamps]:
        out = {}
        for t in self._committed:
            if t.start is None or t.commit is None:
                raise MalformedHistory(f"txn {t.txn_id} lacks real-time stamps")
            out[t.txn_id] = RealTimeStamps(t.start, t.commit)
        return out

    def session_groups(self) -> dict[int, list[int]]:
        groups: dict[int, list[int]] = {}
        for t in self._committed:
            if t.txn_id != T0_ID:
                groups.setdefault(t.session_id, []).append(t.txn_id)
        return groups

    def session_order(self) -> Relation:
        rel = Relation(self.node_ids())
        for ids in self.session_groups().values():
            idx = np.array([rel.index[i] for i in ids])
            if len(idx) > 1:
                upper = np.triu(np.ones((len(idx), len(idx)), dtype=bool), k=1)
                rel.m[np.ix_(idx, idx)] |= upper
        return rel

    def replace_txn(self, txn: Transaction) -> "History":
        txns = [txn if t.txn_id == txn.txn_id else t for t in self.transactions]
        return History(txns, self.deployment, dict(self.header))

    def subhistory(self, keep: Iterable[int]) -> "History":
        """Committed transactions in ``keep`` (T0 is always retained)."""
        keep = set(keep) | {T0_ID}
        txns = [t for t in self._committed if t.txn_id in keep]
        return History(txns, self.deployment, dict(self.header))


def make_t0(keys: Iterable[str]) -> Transaction:
    return Transaction(
        txn_id=T0_ID, session_id=T0_SESSION,
        ops=tuple(W(k, INITIAL_VALUE) for k in sorted(keys)),
        start=-1, commit=0, read_ts=TS_MIN, commit_ts=TS_MIN, wt_tid=0, lamport=0,
    )


def _stamp_arrays(h: History) -> tuple[np.ndarray, np.ndarray]:
    rt = h.real_time
    ids = h.node_ids()
    start = np.array([rt[i].start for i in ids], dtype=np.int64)
    commit = np.array([rt[i].commit for i in ids], dtype=np.int64)
    return start, commit


def returns_before(h: History) -> Relation:
    start, commit = _stamp_arrays(h)
    return Relation(h.node_ids(), commit[:, None] < start[None, :])


def commits_before(h: History) -> Relation:
    _, commit = _stamp_arrays(h)
    return Relation(h.node_ids(), commit[:, None] < commit[None, :])


@dataclass
class AbstractExecution:
    history: History
    vis: Relation
    ar: Relation

    def is_well_formed(self) -> bool:
        return (self.ar.is_strict_total_order() and self.vis <= self.ar
                and self.vis.is_irreflexive())


# --- serialization -------------------------------------------------------

def _ts_out(ts: Ts | None) -> list[int] | None:
    return None if ts is None else [ts.physical, ts.logical]


def _ts_in(raw: Any, field_name: str) -> Ts | None:
    if raw is None:
        return None
    if (not isinstance(raw, list) or len(raw) != 2
            or not all(isinstance(x, int) for x in raw)):
        raise MalformedHistory(f"{field_name} must be a two-int array or null")
    return Ts(raw[0], raw[1])


def txn_to_record(t: Transaction, deployment: str | None) -> dict[str, Any]:
    rec: dict[str, Any] = {
        "txnId": t.txn_id,
        "sessionId": t.session_id,
        "status": t.status,
        "ops": [{"t": op.kind, "k": op.key, "v": op.value} for op in t.ops],
        "startNanos": t.start,
        "commitNanos": t.commit,
        "readTs": _ts_out(t.read_ts),
        "commitTs": _ts_out(t.commit_ts),
        "wtTid": t.wt_tid,
        "lamport": t.lamport,
        "deployment": deployment,
    }
    if t.shard_tids is not None:
        rec["shardTids"] = {str(k): v for k, v in sorted(t.shard_tids.items())}
    return rec


def txn_from_record(rec: dict[str, Any]) -> Transaction:
    try:
        ops = []
        for op in rec["ops"]:
            if op["t"] not in ("r", "w") or not isinstance(op["v"], int):
                raise MalformedHistory(f"bad op {op!r}")
            ops.append(Op(op["t"], str(op["k"]), op["v"]))
        status = rec["status"]
        if status not in (COMMITTED, ABORTED):
            raise MalformedHistory(f"bad status {status!r}")
        shard_tids = rec.get("shardTids")
        return Transaction(
            txn_id=int(rec["txnId"]), session_id=int(rec["sessionId"]),
            ops=tuple(ops), status=status,
            start=rec.get("startNanos"), commit=rec.get("commitNanos"),
            read_ts=_ts_in(rec.get("readTs"), "readTs"),
            commit_ts=_ts_in(rec.get("commitTs"), "commitTs"),
            wt_tid=rec.get("wtTid"), lamport=rec.get("lamport"),
            shard_tids=None if shard_tids is None else {int(k): v for k, v in shard_tids.items()},
        )
    except (KeyError, TypeError) as exc:
        raise MalformedHistory(f"bad transaction record: {exc}") from exc


def dumps_history(h: History) -> str:
    """JSON Lines: a header record, then one record per non-initial transaction."""
    header = {"type": "header", "tool": "si-lab", "version": TOOL_VERSION,
              "deployment": h.deployment, **h.header}
    lines = [json.dumps(header, sort_keys=True)]
    for t in h.transactions:
        if t.txn_id != T0_ID:
            lines.append(json.dumps(txn_to_record(t, h.deployment), sort_keys=True))
    return "\n".join(lines) + "\n"


def loads_history(text: str) -> History:
    header: dict[str, Any] = {}
    txns: list[Transaction] = []
    deployment = None
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedHistory(f"line {lineno}: {exc}") from exc
        if not isinstance(rec, dict):
            raise MalformedHistory(f"line {lineno}: expected an object")
        if rec.get("type") == "header":
            header = {k: v for k, v in rec.items() if k not in ("type", "tool", "version")}
            deployment = header.pop("deployment", None)
            continue
        txn = txn_from_record(rec)
        if txn.txn_id == T0_ID:
            raise MalformedHistory("txn id 0 is reserved for the initial transaction")
        txns.append(txn)
        deployment = deployment or rec.get("deployment")
    if deployment not in (None, "wt", "rs", "sc"):
        raise MalformedHistory(f"unknown deployment {deployment!r}")
    return History(txns, deployment, header)


def save_history(h: History, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_history(h))


def load_history(path: str) -> History:
    with open(path, encoding="utf-8") as fh:
        return loads_history(fh.read())
