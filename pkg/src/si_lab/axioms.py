"""Consistency axioms, the snapshot-isolation models built from them, and a
brute-force membership oracle for small histories."""

from __future__ import annotations

import enum
import itertools
import time
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .model import (
    INITIAL_VALUE, T0_ID, AbstractExecution, History, MalformedHistory, Relation,
    Transaction,
)


class Axiom(enum.Enum):
    INT = "INT"
    EXT = "EXT"
    SESSION = "SESSION"
    PREFIX = "PREFIX"
    NOCONFLICT = "NOCONFLICT"
    RB = "RB"
    INRB = "INRB"
    REALTIMESNAPSHOT = "REALTIMESNAPSHOT"
    CB = "CB"


A = Axiom
_SI = (A.INT, A.EXT, A.PREFIX, A.NOCONFLICT)


class Model(enum.Enum):
    SI = ("si", _SI)
    SESSION_SI = ("session-si", _SI + (A.SESSION,))
    REALTIME_SI = ("realtime-si", _SI + (A.RB, A.CB))
    STRONG_SI = ("strong-si", _SI + (A.REALTIMESNAPSHOT, A.CB))
    GSI = ("gsi", _SI + (A.INRB, A.CB))

    def __init__(self, cli_name: str, axioms: tuple[Axiom, ...]):
        self.cli_name = cli_name
        self.axioms = axioms

    @classmethod
    def parse(cls, name: str) -> "Model":
        for m in cls:
            if name in (m.cli_name, m.name, m.name.lower()):
                return m
        raise ValueError(f"unknown model {name!r}")

    def primitive_axioms(self) -> list[Axiom]:
        """Axioms actually evaluated, in enum order (REALTIMESNAPSHOT = RB + INRB)."""
        wanted = set(self.axioms)
        if A.REALTIMESNAPSHOT in wanted:
            wanted |= {A.RB, A.INRB}
            wanted.discard(A.REALTIMESNAPSHOT)
        return [a for a in Axiom if a in wanted]


class SizeLimitExceeded(ValueError):
    pass


@dataclass
class Violation:
    axiom: Axiom
    witness: dict[str, Any]
    message: str

    def to_dict(self) -> dict[str, Any]:
        return {"axiom": self.axiom.value, "witness": self.witness, "message": self.message}


@dataclass
class CheckReport:
    model: Model
    violations: list[Violation]
    axioms: dict[str, bool]
    stats: dict[str, Any] = field(default_factory=dict)
    real_time_error_nanos: int | None = None
    cross_check: list[Violation] = field(default_factory=list)
    elapsed_nanos: int = 0

    @property
    def verdict(self) -> bool:
        return not self.violations

    def violated_axioms(self) -> set[Axiom]:
        return {v.axiom for v in self.violations}

    def to_dict(self, timings: bool = False) -> dict[str, Any]:
        out: dict[str, Any] = {
            "model": self.model.cli_name,
            "verdict": self.verdict,
            "axioms": self.axioms,
            "violations": [v.to_dict() for v in self.violations],
            "stats": self.stats,
            "tidCrossCheck": [v.to_dict() for v in self.cross_check],
        }
        if self.real_time_error_nanos is not None:
            out["realTimeErrorNanos"] = self.real_time_error_nanos
        if timings:
            out["elapsedNanos"] = self.elapsed_nanos
        return out

    def render(self) -> str:
        lines = [f"model {self.model.cli_name}: {'PASS' if self.verdict else 'FAIL'}"]
        for name, ok in self.axioms.items():
            lines.append(f"  {name:<17} {'ok' if ok else 'VIOLATED'}")
        for k, v in self.stats.items():
            lines.append(f"  {k}: {v}")
        if self.real_time_error_nanos is not None:
            lines.append(f"  real-time error: {self.real_time_error_nanos} ns")
        for v in self.violations:
            lines.append(f"- {v.axiom.value}: {v.message}")
        if self.cross_check:
            lines.append(f"tid cross-check: {len(self.cross_check)} violation(s)")
            for v in self.cross_check:
                lines.append(f"- {v.message}")
        return "\n".join(lines) + "\n"


# --- single-axiom checks ----------------------------------------------------

def _take(found: list[Violation], all_violations: bool) -> list[Violation]:
    return found if all_violations else found[:1]


def check_int(h: History, all_violations: bool = False) -> list[Violation]:
    out: list[Violation] = []
    for t in h.committed():
        last: dict[str, tuple[int, int]] = {}
        for i, op in enumerate(t.ops):
            prev = last.get(op.key)
            if op.is_read and prev is not None and prev[1] != op.value:
                out.append(Violation(
                    A.INT,
                    {"txn": t.txn_id, "event": i, "key": op.key, "read": op.value,
                     "expected": prev[1], "previousEvent": prev[0]},
                    f"txn {t.txn_id} reads {op.key}={op.value} at position {i} but its "
                    f"own previous access at position {prev[0]} has value {prev[1]}"))
                if not all_violations:
                    return out
            last[op.key] = (i, op.value)
    return out


def ar_ranks(ar: Relation) -> np.ndarray:
    """Position of each node in a total order ar (0 = least)."""
    return ar.m.sum(axis=0)


def _writers_by_key(txns: list[Transaction]) -> dict[str, list[int]]:
    out: dict[str, list[int]] = {}
    for i, t in enumerate(txns):
        for k in t.write_keys():
            out.setdefault(k, []).append(i)
    return out


def check_ext(ae: AbstractExecution, all_violations: bool = False) -> list[Violation]:
    txns = ae.history.committed()
    ids = [t.txn_id for t in txns]
    rank = ar_ranks(ae.ar)
    writers = _writers_by_key(txns)
    last_writes = [t.last_writes() for t in txns]
    readers: dict[str, list[tuple[int, int]]] = {}
    for j, t in enumerate(txns):
        for k, v in t.external_reads().items():
            readers.setdefault(k, []).append((j, v))
    out: list[Violation] = []
    for k in sorted(readers):
        rd = readers[k]
        cols = np.array([j for j, _ in rd])
        ws = np.array(sorted(writers.get(k, []), key=lambda i: -rank[i]), dtype=np.int64)
        if len(ws):
            sub = ae.vis.m[np.ix_(ws, cols)]
            has = sub.any(axis=0)
            first = sub.argmax(axis=0)
        else:
            has = np.zeros(len(cols), dtype=bool)
            first = has
        for n, (j, v) in enumerate(rd):
            if has[n]:
                w = int(ws[first[n]])
                expected = last_writes[w][k]
                writer: int | None = ids[w]
            else:
                expected, writer = INITIAL_VALUE, None
            if v != expected:
                out.append(Violation(
                    A.EXT,
                    {"txn": ids[j], "key": k, "read": v, "expected": expected, "writer": writer},
                    f"txn {ids[j]} reads {k}={v} but the ar-last visible writer "
                    f"{writer if writer is not None else '(none)'} wrote {expected}"))
    out.sort(key=lambda v: (v.witness["txn"], v.witness["key"]))
    return _take(out, all_violations)


def _edge_violations(bad: np.ndarray, nodes: tuple[int, ...], axiom: Axiom, what: str,
                     all_violations: bool) -> list[Violation]:
    hits = np.argwhere(bad)
    if not all_violations:
        hits = hits[:1]
    return [Violation(axiom, {"edge": [nodes[i], nodes[j]]},
                      f"({nodes[i]}, {nodes[j]}) {what}")
            for i, j in hits.tolist()]


def check_session(ae: AbstractExecution, all_violations: bool = False) -> list[Violation]:
    so = ae.history.session_order()
    return _edge_violations(so.m & ~ae.vis.m, so.nodes, A.SESSION,
                            "is in session order but not in vis", all_violations)


def check_prefix(ae: AbstractExecution, all_violations: bool = False) -> list[Violation]:
    nodes = ae.vis.nodes
    if ae.ar.is_strict_total_order():
        # vis^-1(C) must be a downward-closed segment of ar for every C.
        order = np.argsort(ar_ranks(ae.ar), kind="stable")
        v = ae.vis.m[np.ix_(order, order)]
        bad = v[1:, :] & ~v[:-1, :]
        hits = np.argwhere(bad)
        if not all_violations:
            hits = hits[:1]
        out = []
        for i, c in hits.tolist():
            a, b, cc = nodes[order[i]], nodes[order[i + 1]], nodes[order[c]]
            out.append(Violation(A.PREFIX, {"triple": [a, b, cc]},
                                 f"{a} ar {b} vis {cc} but not {a} vis {cc}"))
        return out
    comp = ae.ar.compose(ae.vis)
    return _edge_violations(comp.m & ~ae.vis.m, nodes, A.PREFIX,
                            "is in ar;vis but not in vis", all_violations)


def check_noconflict(ae: AbstractExecution, all_violations: bool = False) -> list[Violation]:
    txns = ae.history.committed()
    ids = [t.txn_id for t in txns]
    out: list[Violation] = []
    seen: set[tuple[int, int]] = set()
    for k, ws in sorted(_writers_by_key(txns).items()):
        if len(ws) < 2:
            continue
        idx = np.array(ws)
        sub = ae.vis.m[np.ix_(idx, idx)]
        related = sub | sub.T
        np.fill_diagonal(related, True)
        for a, b in np.argwhere(~np.triu(related) & np.triu(np.ones_like(related), 1)).tolist():
            pair = (ids[idx[a]], ids[idx[b]])
            if pair in seen:
                continue
            seen.add(pair)
            out.append(Violation(A.NOCONFLICT, {"pair": list(pair), "key": k},
                                 f"txns {pair[0]} and {pair[1]} both write {k} "
                                 f"but neither is visible to the other"))
    out.sort(key=lambda v: tuple(v.witness["pair"]))
    return _take(out, all_violations)


def _stamps(h: History) -> tuple[np.ndarray, np.ndarray]:
    rt = h.real_time
    ids = h.node_ids()
    return (np.array([rt[i].start for i in ids], dtype=np.int64),
            np.array([rt[i].commit for i in ids], dtype=np.int64))


def check_rt_axiom(ae: AbstractExecution, which: Axiom, all_violations: bool = False,
                   tolerance_nanos: int = 0) -> list[Violation]:
    """RB, INRB, REALTIMESNAPSHOT (= RB and INRB) or CB.

    A positive tolerance relaxes real-time comparisons by that many
    nanoseconds in the direction that forgives clock error.
    """
    start, commit = _stamps(ae.history)
    nodes = ae.vis.nodes
    vis = ae.vis.m
    if which is A.REALTIMESNAPSHOT:
        return (check_rt_axiom(ae, A.RB, all_violations, tolerance_nanos)
                + check_rt_axiom(ae, A.INRB, all_violations, tolerance_nanos))
    if which is A.RB:
        rb = commit[:, None] + tolerance_nanos < start[None, :]
        return _edge_violations(rb & ~vis, nodes, A.RB,
                                "returns before but is not visible", all_violations)
    if which is A.INRB:
        rb = commit[:, None] < start[None, :] + tolerance_nanos
        return _edge_violations(vis & ~rb, nodes, A.INRB,
                                "is visible but does not return before", all_violations)
    if which is A.CB:
        cb = commit[:, None] + tolerance_nanos < commit[None, :]
        return _edge_violations(cb & ~ae.ar.m, nodes, A.CB,
                                "commits before in real time but not in ar", all_violations)
    raise ValueError(f"{which} is not a real-time axiom")


def check_axiom(ae: AbstractExecution, axiom: Axiom, all_violations: bool = False,
                tolerance_nanos: int = 0) -> list[Violation]:
    if axiom is A.INT:
        return check_int(ae.history, all_violations)
    if axiom is A.EXT:
        return check_ext(ae, all_violations)
    if axiom is A.SESSION:
        return check_session(ae, all_violations)
    if axiom is A.PREFIX:
        return check_prefix(ae, all_violations)
    if axiom is A.NOCONFLICT:
        return check_noconflict(ae, all_violations)
    return check_rt_axiom(ae, axiom, all_violations, tolerance_nanos)


def check_well_formed(ae: AbstractExecution) -> None:
    if not ae.ar.is_strict_total_order():
        raise MalformedHistory("ar is not a strict total order")
    if not ae.vis <= ae.ar:
        raise MalformedHistory("vis is not contained in ar")
    if not ae.vis.is_irreflexive():
        raise MalformedHistory("vis is reflexive")


def check_model(ae: AbstractExecution, m: Model, all_violations: bool = False,
                tolerance_nanos: int = 0) -> CheckReport:
    t0 = time.perf_counter_ns()
    check_well_formed(ae)
    violations: list[Violation] = []
    verdicts: dict[str, bool] = {}
    for axiom in m.primitive_axioms():
        found = check_axiom(ae, axiom, all_violations, tolerance_nanos)
        verdicts[axiom.value] = not found
        violations.extend(found)
    if A.REALTIMESNAPSHOT in m.axioms:
        verdicts[A.REALTIMESNAPSHOT.value] = verdicts["RB"] and verdicts["INRB"]
    return CheckReport(
        model=m, violations=violations, axioms=verdicts,
        stats={"committed": len(ae.history), "aborted": len(ae.history.aborted())},
        elapsed_nanos=time.perf_counter_ns() - t0,
    )


# --- brute-force oracle ------------------------------------------------------

@dataclass
class _Facts:
    ids: list[int]
    txns: list[Transaction]
    ext_reads: list[dict[str, int]]
    last_writes: list[dict[str, int]]
    so_preds: list[set[int]]
    rb_preds: list[set[int]] | None
    commit: list[int] | None
    conflicts: list[set[int]]


def _facts(h: History, need_rt: bool) -> _Facts:
    txns = [t for t in h.committed() if t.txn_id != T0_ID]
    ids = [t.txn_id for t in txns]
    pos = {tid: i for i, tid in enumerate(ids)}
    so_preds: list[set[int]] = [set() for _ in txns]
    for group in h.session_groups().values():
        for i, a in enumerate(group):
            for b in group[i + 1:]:
                so_preds[pos[b]].add(pos[a])
    rb_preds = commit = None
    if need_rt:
        rt = h.real_time
        commit = [rt[i].commit for i in ids]
        rb_preds = [{j for j, s in enumerate(ids) if rt[s].commit < rt[t].start} for t in ids]
    wk = [t.write_keys() for t in txns]
    conflicts = [{j for j in range(len(txns)) if j != i and wk[i] & wk[j]}
                 for i in range(len(txns))]
    return _Facts(ids, txns, [t.external_reads() for t in txns],
                  [t.last_writes() for t in txns], so_preds, rb_preds, commit, conflicts)


def _prefix_ok(f: _Facts, axioms: set[Axiom], perm: tuple[int, ...], c: int, p: int) -> bool:
    """Can txn at position c of perm see exactly perm[:p] (plus T0)?"""
    visible = perm[:p]
    vis_set = set(visible)
    me = perm[c]
    for k, v in f.ext_reads[me].items():
        expected = INITIAL_VALUE
        for w in reversed(visible):
            if k in f.last_writes[w]:
                expected = f.last_writes[w][k]
                break
        if v != expected:
            return False
    if A.SESSION in axioms and not f.so_preds[me] <= vis_set:
        return False
    if A.NOCONFLICT in axioms:
        before = set(perm[:c])
        if not (f.conflicts[me] & before) <= vis_set:
            return False
    if A.RB in axioms and not f.rb_preds[me] <= vis_set:  # type: ignore[index]
        return False
    if A.INRB in axioms and not vis_set <= f.rb_preds[me]:  # type: ignore[index]
        return False
    return True


def brute_force_satisfies(h: History, m: Model, cap: int = 6
                          ) -> tuple[bool, tuple[Relation, Relation] | None]:
    """Search every (vis, ar) over the committed transactions.

    Every model includes PREFIX and requires vis within ar, so for a fixed ar
    each transaction's visible set is a prefix of ar; those prefixes can be
    chosen independently per transaction, which keeps the search small.
    T0 is the initial transaction, so it comes first in ar; making it visible
    to everyone then loses no generality because it writes only initial
    values.
    """
    n = len(h)
    if n > cap:
        raise SizeLimitExceeded(f"{n} committed transactions exceeds the oracle cap of {cap}")
    axioms = set(m.primitive_axioms())
    if check_int(h):
        return False, None
    f = _facts(h, need_rt=bool(axioms & {A.RB, A.INRB, A.CB}))
    if A.CB in axioms:
        perms: Any = [tuple(sorted(range(n), key=lambda i: f.commit[i]))]  # type: ignore[index]
    else:
        perms = itertools.permutations(range(n))
    for perm in perms:
        choice: list[int] = []
        for c in range(n):
            ok = [p for p in range(c, -1, -1) if _prefix_ok(f, axioms, perm, c, p)]
            if not ok:
                break
            choice.append(ok[0])
        else:
            return True, _witness(h, f, perm, choice)
    return False, None


def _witness(h: History, f: _Facts, perm: tuple[int, ...], choice: list[int]
             ) -> tuple[Relation, Relation]:
    nodes = h.node_ids()
    order = [T0_ID] + [f.ids[i] for i in perm]
    ar = Relation.from_pairs(nodes, [(a, b) for i, a in enumerate(order) for b in order[i + 1:]])
    pairs = [(T0_ID, f.ids[i]) for i in perm]
    for c, p in enumerate(choice):
        pairs += [(f.ids[perm[j]], f.ids[perm[c]]) for j in range(p)]
    return Relation.from_pairs(nodes, pairs), ar
