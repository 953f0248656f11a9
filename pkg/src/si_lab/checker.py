"""White-box checking of simulator histories.

Each deployment's protocol leaves enough metadata behind to rebuild the
visibility and arbitration relations directly, which turns checking into a
polynomial matrix computation:

* standalone engine: vis is returns-before and ar is commits-before;
* replica set: S is visible to T iff ``S.commitTs <= T.readTs``, and ar
  orders by commit timestamp;
* sharded cluster: like the replica set but with a strict comparison and a
  Lamport-clock tie-break, and read-only transactions commit at their read
  timestamp.
"""

from __future__ import annotations

import random
import time
from dataclasses import dataclass
from typing import Any

import numpy as np

from .axioms import (
    A, Axiom, CheckReport, Model, Violation, check_axiom, check_model,
)
from .model import (
    T0_ID, AbstractExecution, History, MalformedHistory, Op, Relation, Transaction,
    commits_before, returns_before,
)
from .sc import shard_of

TARGET_MODEL = {"wt": Model.STRONG_SI, "rs": Model.REALTIME_SI, "sc": Model.SESSION_SI}


@dataclass
class ExtractedExecution:
    ae: AbstractExecution
    deployment: str
    real_time_error_nanos: int | None = None

    @property
    def target(self) -> Model:
        return TARGET_MODEL[self.deployment]


def _require(h: History, deployment: str, *fields: str) -> None:
    if h.deployment != deployment:
        raise MalformedHistory(f"expected a {deployment} history, got {h.deployment!r}")
    for t in h.committed():
        for f in fields:
            if getattr(t, f) is None:
                raise MalformedHistory(f"txn {t.txn_id} lacks {f}")


def _ts_keys(h: History, attr: str) -> np.ndarray:
    return np.array([getattr(t, attr).key() for t in h.committed()], dtype=np.int64)


def _no_diag(m: np.ndarray) -> np.ndarray:
    np.fill_diagonal(m, False)
    return m


def extract_wt(h: History) -> ExtractedExecution:
    _require(h, "wt", "start", "commit")
    ae = AbstractExecution(h, returns_before(h), commits_before(h))
    return ExtractedExecution(ae, "wt")


def extract_rs(h: History) -> ExtractedExecution:
    _require(h, "rs", "read_ts", "commit_ts")
    cts, rts = _ts_keys(h, "commit_ts"), _ts_keys(h, "read_ts")
    nodes = h.node_ids()
    vis = _no_diag(cts[:, None] <= rts[None, :])
    ar = _no_diag(cts[:, None] < cts[None, :])
    return ExtractedExecution(AbstractExecution(h, Relation(nodes, vis), Relation(nodes, ar)), "rs")


def _lex_less(a: np.ndarray, la: np.ndarray, b: np.ndarray, lb: np.ndarray) -> np.ndarray:
    return (a[:, None] < b[None, :]) | ((a[:, None] == b[None, :]) & (la[:, None] < lb[None, :]))


def extract_sc(h: History) -> ExtractedExecution:
    _require(h, "sc", "read_ts", "commit_ts", "lamport")
    cts, rts = _ts_keys(h, "commit_ts"), _ts_keys(h, "read_ts")
    lam = np.array([t.lamport for t in h.committed()], dtype=np.int64)
    nodes = h.node_ids()
    vis = _no_diag(_lex_less(cts, lam, rts, lam))
    ar = _no_diag(_lex_less(cts, lam, cts, lam))
    return ExtractedExecution(AbstractExecution(h, Relation(nodes, vis), Relation(nodes, ar)), "sc")


EXTRACTORS = {"wt": extract_wt, "rs": extract_rs, "sc": extract_sc}


def extract(h: History) -> ExtractedExecution:
    if h.deployment not in EXTRACTORS:
        raise MalformedHistory(f"unknown deployment {h.deployment!r}")
    return EXTRACTORS[h.deployment](h)


def writers_by_value(h: History) -> dict[tuple[str, int], int]:
    """Map each written (key, value) to the committed transaction that wrote it."""
    out: dict[tuple[str, int], int] = {}
    for t in h.committed():
        if t.txn_id == T0_ID:
            continue
        for k, v in t.last_writes().items():
            if (k, v) in out:
                raise MalformedHistory(f"value {v} written to {k} by txns {out[(k, v)]} and {t.txn_id}")
            out[(k, v)] = t.txn_id
    return out


def real_time_error(h: History) -> int:
    """Largest amount by which a reader started before the writer it read from committed."""
    writers = writers_by_value(h)
    rt = h.real_time
    worst = 0
    for t in h.committed():
        if t.txn_id == T0_ID:
            continue
        start = rt[t.txn_id].start
        for k, v in t.external_reads().items():
            w = writers.get((k, v))
            if w is None or w == t.txn_id:
                continue
            worst = max(worst, rt[w].commit - start)
    return worst


def _ar_rank(ex: ExtractedExecution) -> dict[int, int]:
    return {n: i for i, n in enumerate(ex.ae.ar.total_order())}


def tid_cross_check(h: History, ex: ExtractedExecution | None = None) -> list[Violation]:
    """Conflicting writers must be arbitrated in the order of their engine tids."""
    ex = ex or extract(h)
    rank = _ar_rank(ex)
    shards = h.header.get("shardCount") if h.deployment == "sc" else None
    by_key: dict[str, list[Transaction]] = {}
    for t in h.committed():
        if t.txn_id != T0_ID:
            for k in t.write_keys():
                by_key.setdefault(k, []).append(t)
    out = []
    for k in sorted(by_key):
        ws = sorted(by_key[k], key=lambda t: rank[t.txn_id])
        for a, b in zip(ws, ws[1:]):
            if shards:
                s = shard_of(k, shards)
                ta = (a.shard_tids or {}).get(s)
                tb = (b.shard_tids or {}).get(s)
            else:
                ta, tb = a.wt_tid, b.wt_tid
            if ta is None or tb is None:
                raise MalformedHistory(f"txn {a.txn_id if ta is None else b.txn_id} lacks a tid for {k}")
            if not ta < tb:
                out.append(Violation(A.NOCONFLICT, {"key": k, "pair": [a.txn_id, b.txn_id],
                                                    "tids": [ta, tb]},
                                     f"txn {a.txn_id} precedes {b.txn_id} in ar on {k} "
                                     f"but has tid {ta} >= {tb}"))
    return out


def ar_prefix(h: History, n: int) -> History:
    """The first ``n`` committed transactions in arbitration order.

    Whatever a kept transaction observes precedes it in ar, so the prefix is
    itself a history of the same deployment.
    """
    order = [i for i in extract(h).ae.ar.total_order() if i != T0_ID]
    return h.subhistory(order[:n])


def check_deployment(h: History, model: Model | None = None, all_violations: bool = False,
                     tolerance_nanos: int = 0) -> CheckReport:
    t0 = time.perf_counter_ns()
    ex = extract(h)
    report = check_model(ex.ae, model or ex.target, all_violations, tolerance_nanos)
    report.stats["deployment"] = h.deployment
    if h.deployment == "wt":
        report.real_time_error_nanos = real_time_error(h)
    report.cross_check = tid_cross_check(h, ex)
    report.elapsed_nanos = time.perf_counter_ns() - t0
    return report


# --- mutation operators --------------------------------------------------------

class MutationError(ValueError):
    pass


# For each operator: the deployments it applies to and the model that
# exposes it there.  Stamp-based operators need an extraction whose vis and
# ar do not depend on the real-time stamps being edited.
MUTATIONS: dict[Axiom, dict[str, Model]] = {
    A.INT: dict(TARGET_MODEL),
    A.EXT: dict(TARGET_MODEL),
    A.SESSION: {"sc": Model.SESSION_SI},
    A.NOCONFLICT: dict(TARGET_MODEL),
    A.RB: {"rs": Model.REALTIME_SI},
    A.INRB: {"rs": Model.STRONG_SI},
    A.CB: {"rs": Model.REALTIME_SI},
}


def parse_mutation(name: str) -> Axiom:
    try:
        axiom = Axiom(name.upper())
    except ValueError:
        axiom = None
    if axiom not in MUTATIONS:
        raise MutationError(f"no mutation operator for {name!r}; "
                            f"choose from {', '.join(a.value.lower() for a in MUTATIONS)}")
    return axiom  # type: ignore[return-value]


def mutation_model(deployment: str | None, axiom: Axiom) -> Model:
    models = MUTATIONS[axiom]
    if deployment not in models:
        raise MutationError(f"{axiom.value} mutation does not apply to {deployment} histories")
    return models[deployment]


_BOGUS = -1  # never written: the generator only writes positive values


def _pick(rng: random.Random, cands: list[Any], what: str) -> Any:
    if not cands:
        raise MutationError(f"history has no {what}")
    return cands[rng.randrange(len(cands))]


def _user_txns(h: History) -> list[Transaction]:
    return [t for t in h.committed() if t.txn_id != T0_ID]


def _mut_int(h: History, ex: ExtractedExecution, rng: random.Random) -> Transaction:
    cands = []
    for t in _user_txns(h):
        seen: set[str] = set()
        for i, op in enumerate(t.ops):
            if op.is_read and op.key in seen:
                cands.append((t, i))
            seen.add(op.key)
    if cands:
        t, i = _pick(rng, cands, "internal read")
        ops = list(t.ops)
        ops[i] = Op("r", ops[i].key, _BOGUS)
        return t.with_(ops=tuple(ops))
    writes = [(t, i) for t in _user_txns(h) for i, op in enumerate(t.ops) if op.is_write]
    t, i = _pick(rng, writes, "write to read back")
    ops = list(t.ops)
    ops.insert(i + 1, Op("r", ops[i].key, _BOGUS))
    return t.with_(ops=tuple(ops))


def _mut_ext(h: History, ex: ExtractedExecution, rng: random.Random) -> Transaction:
    cands = []
    for t in _user_txns(h):
        seen: set[str] = set()
        for i, op in enumerate(t.ops):
            if op.is_read and op.key not in seen:
                cands.append((t, i))
            seen.add(op.key)
    if cands:
        t, i = _pick(rng, cands, "external read")
        ops = list(t.ops)
        ops[i] = Op("r", ops[i].key, _BOGUS)
        return t.with_(ops=tuple(ops))
    t = _pick(rng, _user_txns(h), "committed transaction")
    return t.with_(ops=(Op("r", t.ops[0].key, _BOGUS),) + t.ops)


def _vis_pairs(ex: ExtractedExecution, cond) -> list[tuple[Transaction, Transaction]]:
    h = ex.ae.history
    return [(h[a], h[b]) for a, b in ex.ae.vis if a != T0_ID and cond(h[a], h[b])]


def _mut_session(h: History, ex: ExtractedExecution, rng: random.Random) -> Transaction:
    so = h.session_order()
    cands = [(s, t) for s, t in _vis_pairs(ex, lambda s, t: True)
             if (s.txn_id, t.txn_id) in so and s.commit_ts.key() > 0]
    s, t = _pick(rng, cands, "visible session predecessor")
    return t.with_(read_ts=s.commit_ts.pred())


def _mut_noconflict(h: History, ex: ExtractedExecution, rng: random.Random) -> Transaction:
    cands = _vis_pairs(ex, lambda s, t: bool(s.write_keys() & t.write_keys()))
    s, t = _pick(rng, cands, "visible conflicting pair")
    if h.deployment == "wt":
        return t.with_(start=s.commit - 1)
    return t.with_(read_ts=s.commit_ts.pred())


def _mut_rb(h: History, ex: ExtractedExecution, rng: random.Random) -> Transaction:
    vis = ex.ae.vis
    cands = [(s, t) for s in _user_txns(h) for t in _user_txns(h)
             if s is not t and (s.txn_id, t.txn_id) not in vis and s.commit + 1 < t.commit
             and t.start <= s.commit]
    s, t = _pick(rng, cands, "invisible pair to move apart in real time")
    return t.with_(start=s.commit + 1)


def _mut_inrb(h: History, ex: ExtractedExecution, rng: random.Random) -> Transaction:
    cands = _vis_pairs(ex, lambda s, t: s.commit < t.start)
    s, t = _pick(rng, cands, "visible pair to overlap in real time")
    return t.with_(start=s.commit - 1)


def _mut_cb(h: History, ex: ExtractedExecution, rng: random.Random) -> list[Transaction]:
    order = [h[i] for i in ex.ae.ar.total_order() if i != T0_ID]
    cands = [(a, b) for a, b in zip(order, order[1:]) if a.commit < b.commit and b.start < a.commit]
    if not cands:
        cands = [(a, b) for i, a in enumerate(order) for b in order[i + 1:]
                 if a.commit < b.commit and b.start < a.commit]
    a, b = _pick(rng, cands, "arbitration-ordered pair whose commit stamps can swap")
    return [a.with_(commit=b.commit), b.with_(commit=a.commit)]


_OPERATORS = {A.INT: _mut_int, A.EXT: _mut_ext, A.SESSION: _mut_session,
              A.NOCONFLICT: _mut_noconflict, A.RB: _mut_rb, A.INRB: _mut_inrb, A.CB: _mut_cb}


def mutate(h: History, axiom: Axiom | str, seed: int = 0) -> History:
    """Minimally perturb ``h`` so that the named axiom fails under its extraction.

    The history must satisfy the axiom beforehand; the returned history's
    header records which transaction was changed.
    """
    if isinstance(axiom, str):
        axiom = parse_mutation(axiom)
    model = mutation_model(h.deployment, axiom)
    ex = extract(h)
    if check_axiom(ex.ae, axiom):
        raise MutationError(f"history already violates {axiom.value}")
    rng = random.Random(seed)
    changed = _OPERATORS[axiom](h, ex, rng)
    changed = changed if isinstance(changed, list) else [changed]
    out = h
    for t in changed:
        out = out.replace_txn(t)
    out.header = dict(h.header)
    out.header["mutation"] = {"axiom": axiom.value, "txns": [t.txn_id for t in changed],
                              "seed": seed, "model": model.cli_name}
    return out
