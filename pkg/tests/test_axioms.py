import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from si_lab.axioms import (
    A, Model, SizeLimitExceeded, brute_force_satisfies, check_axiom, check_ext, check_int,
    check_model, check_noconflict, check_prefix, check_rt_axiom, check_session,
)
from si_lab.model import (
    AbstractExecution, History, MalformedHistory, R, Relation, W, commits_before, returns_before,
)

from conftest import txn


def ae_of(h, vis_pairs, ar_order):
    nodes = h.node_ids()
    ar = [(a, b) for i, a in enumerate(ar_order) for b in ar_order[i + 1:]]
    return AbstractExecution(h, Relation.from_pairs(nodes, vis_pairs), Relation.from_pairs(nodes, ar))


def chain_ae(h):
    order = h.node_ids()
    pairs = [(a, b) for i, a in enumerate(order) for b in order[i + 1:]]
    return ae_of(h, pairs, order)


# --- reference semantics, written directly from the axiom statements ------------

def ref_int(h):
    for t in h.committed():
        for i, op in enumerate(t.ops):
            prior = [p for p in t.ops[:i] if p.key == op.key]
            if op.is_read and prior and prior[-1].value != op.value:
                return False
    return True


def ref_ext(h, vis, ar):
    by_id = {t.txn_id: t for t in h.committed()}
    for t in h.committed():
        seen = set()
        for op in t.ops:
            if op.is_read and op.key not in seen:
                ws = [s for (s, u) in vis if u == t.txn_id and op.key in by_id[s].write_keys()]
                if not ws:
                    expected = 0
                else:
                    last = [w for w in ws if not any((w, o) in ar for o in ws)][0]
                    expected = by_id[last].last_writes()[op.key]
                if op.value != expected:
                    return False
            seen.add(op.key)
    return True


def ref_prefix(nodes, vis, ar):
    return all((a, c) in vis for a, b in ar for b2, c in vis if b == b2)


def ref_noconflict(h, vis):
    ts = h.committed()
    return all((s.txn_id, t.txn_id) in vis or (t.txn_id, s.txn_id) in vis
               for s, t in itertools.combinations(ts, 2) if s.write_keys() & t.write_keys())


def ref_session(h, vis):
    return h.session_order().pairs() <= vis


def ref_model(h, vis, ar, m):
    rt = h.real_time if any(a in m.primitive_axioms() for a in (A.RB, A.INRB, A.CB)) else None
    nodes = h.node_ids()
    rb = {(a, b) for a in nodes for b in nodes if rt and rt[a].commit < rt[b].start}
    cb = {(a, b) for a in nodes for b in nodes if rt and rt[a].commit < rt[b].commit}
    checks = {
        A.INT: lambda: ref_int(h),
        A.EXT: lambda: ref_ext(h, vis, ar),
        A.SESSION: lambda: ref_session(h, vis),
        A.PREFIX: lambda: ref_prefix(nodes, vis, ar),
        A.NOCONFLICT: lambda: ref_noconflict(h, vis),
        A.RB: lambda: rb <= vis,
        A.INRB: lambda: vis <= rb,
        A.CB: lambda: cb <= ar,
    }
    return all(checks[a]() for a in m.primitive_axioms())


# --- random small executions ------------------------------------------------------

ops_st = st.lists(st.tuples(st.sampled_from("rw"), st.sampled_from("xy"), st.integers(0, 3)),
                  min_size=1, max_size=4)


@st.composite
def histories(draw, max_txns=4, stamped=True):
    n = draw(st.integers(1, max_txns))
    stamps = draw(st.lists(st.integers(1, 10_000), min_size=2 * n, max_size=2 * n, unique=True))
    txns = []
    for i in range(1, n + 1):
        ops = [R(k, v) if kind == "r" else W(k, v) for kind, k, v in draw(ops_st)]
        s, c = sorted(stamps[2 * i - 2:2 * i])
        txns.append(txn(i, ops, session=draw(st.integers(1, 2)),
                        start=s if stamped else None, commit=c if stamped else None))
    return History(txns)


@st.composite
def executions(draw, max_txns=4):
    h = draw(histories(max_txns))
    order = draw(st.permutations(h.node_ids()))
    ar = {(a, b) for i, a in enumerate(order) for b in order[i + 1:]}
    vis = draw(st.sets(st.sampled_from(sorted(ar)))) if ar else set()
    return h, vis, ar, list(order)


@settings(max_examples=300, deadline=None)
@given(executions())
def test_axioms_match_reference(ex):
    h, vis, ar, order = ex
    ae = ae_of(h, vis, order)
    nodes = h.node_ids()
    assert (not check_int(h)) == ref_int(h)
    assert (not check_ext(ae)) == ref_ext(h, vis, ar)
    assert (not check_prefix(ae)) == ref_prefix(nodes, vis, ar)
    assert (not check_noconflict(ae)) == ref_noconflict(h, vis)
    assert (not check_session(ae)) == ref_session(h, vis)
    rb, cb = returns_before(h).pairs(), commits_before(h).pairs()
    assert (not check_rt_axiom(ae, A.RB)) == (rb <= vis)
    assert (not check_rt_axiom(ae, A.INRB)) == (vis <= rb)
    assert (not check_rt_axiom(ae, A.REALTIMESNAPSHOT)) == (vis == rb)
    assert (not check_rt_axiom(ae, A.CB)) == (cb <= ar)


@settings(max_examples=100, deadline=None)
@given(executions())
def test_all_violations_mode_lists_every_edge(ex):
    h, vis, ar, order = ex
    ae = ae_of(h, vis, order)
    rb = returns_before(h).pairs()
    found = {tuple(v.witness["edge"]) for v in check_rt_axiom(ae, A.RB, all_violations=True)}
    assert found == rb - vis


# --- per-axiom examples -------------------------------------------------------------

def test_int_examples():
    assert not check_int(History([txn(1, [W("x", 1), R("x", 1)])]))
    bad = check_int(History([txn(1, [W("x", 1), R("x", 2)])]))
    assert bad and bad[0].witness["previousEvent"] == 0 and bad[0].witness["event"] == 1
    assert not check_int(History([txn(1, [R("x", 5), R("x", 5)])]))
    assert check_int(History([txn(1, [R("x", 5), R("x", 6)])]))


def test_ext_examples():
    h = History([txn(1, [R("x", 0)])])
    assert not check_ext(chain_ae(h))
    h = History([txn(1, [W("x", 1)]), txn(2, [W("x", 2)]), txn(3, [R("x", 2)])])
    assert not check_ext(chain_ae(h))
    h = History([txn(1, [W("x", 1)]), txn(2, [W("x", 2)]), txn(3, [R("x", 1)])])
    assert check_ext(chain_ae(h))[0].witness["expected"] == 2
    # Only an internal read: EXT has nothing to say about x.
    h = History([txn(1, [W("x", 1)]), txn(2, [W("x", 5), R("x", 5)])])
    assert not check_ext(chain_ae(h))


def test_session_examples():
    h = History([txn(1, [], session=1), txn(2, [], session=1)])
    assert not check_session(chain_ae(h))
    assert check_session(ae_of(h, [(0, 1), (0, 2)], [0, 1, 2]))
    h = History([txn(1, []), txn(2, [])])
    assert not check_session(ae_of(h, [], [0, 1, 2]))


def test_prefix_examples():
    h = History([txn(1, [W("x", 1)]), txn(2, [W("y", 1)]), txn(3, [R("y", 1)])])
    assert not check_prefix(chain_ae(h))
    bad = check_prefix(ae_of(h, [(0, 1), (0, 2), (0, 3), (2, 3)], [0, 1, 2, 3]))
    assert bad and bad[0].witness["triple"] == [1, 2, 3]


def test_prefix_without_total_ar_uses_composition():
    h = History([txn(1, []), txn(2, []), txn(3, [])])
    nodes = h.node_ids()
    ae = AbstractExecution(h, Relation.from_pairs(nodes, [(2, 3)]), Relation.from_pairs(nodes, [(1, 2)]))
    assert check_prefix(ae)[0].witness["edge"] == [1, 3]


def test_noconflict_examples():
    h = History([txn(1, [W("x", 1)]), txn(2, [W("x", 2)])])
    assert not check_noconflict(ae_of(h, [(0, 1), (0, 2), (1, 2)], [0, 1, 2]))
    assert check_noconflict(ae_of(h, [(0, 1), (0, 2)], [0, 1, 2]))
    h = History([txn(1, [W("x", 1)]), txn(2, [W("y", 2)])])
    assert not check_noconflict(ae_of(h, [(0, 1), (0, 2)], [0, 1, 2]))


def test_realtime_examples():
    h = History([txn(1, [W("x", 1)], start=1, commit=10), txn(2, [R("x", 1)], start=5, commit=20),
                 txn(3, [R("x", 1)], start=30, commit=40)])
    rb = returns_before(h)
    ae = AbstractExecution(h, rb, commits_before(h))
    for ax in (A.RB, A.INRB, A.REALTIMESNAPSHOT, A.CB):
        assert not check_rt_axiom(ae, ax)
    ae = AbstractExecution(h, rb | Relation.from_pairs(h.node_ids(), [(1, 2)]), commits_before(h))
    assert [v.witness["edge"] for v in check_rt_axiom(ae, A.INRB)] == [[1, 2]]


def test_rt_tolerance_forgives_small_overlaps():
    h = History([txn(1, [W("x", 1)], start=1, commit=10), txn(2, [R("x", 1)], start=8, commit=20)])
    ae = ae_of(h, [(0, 1), (0, 2), (1, 2)], [0, 1, 2])
    assert check_rt_axiom(ae, A.INRB)
    assert not check_rt_axiom(ae, A.INRB, tolerance_nanos=5)


def test_empty_history_passes_every_model():
    h = History([])
    for m in Model:
        assert check_model(chain_ae(h), m).verdict


def test_model_runs_exactly_its_axioms():
    h = History([txn(1, [W("x", 1)], start=1, commit=2)])
    r = check_model(chain_ae(h), Model.STRONG_SI)
    assert list(r.axioms) == ["INT", "EXT", "PREFIX", "NOCONFLICT", "RB", "INRB", "CB",
                              "REALTIMESNAPSHOT"]
    assert set(check_model(chain_ae(h), Model.SESSION_SI).axioms) == {
        "INT", "EXT", "SESSION", "PREFIX", "NOCONFLICT"}


def test_check_model_rejects_ill_formed_executions():
    h = History([txn(1, []), txn(2, [])])
    with pytest.raises(MalformedHistory):
        check_model(ae_of(h, [(2, 1)], [0, 1, 2]), Model.SI)


def test_report_serialization():
    h = History([txn(1, [W("x", 1), R("x", 2)])])
    r = check_model(chain_ae(h), Model.SI)
    d = r.to_dict()
    assert d["verdict"] is False and d["violations"][0]["axiom"] == "INT"
    assert "elapsedNanos" not in d and "elapsedNanos" in r.to_dict(timings=True)
    assert "VIOLATED" in r.render()


@settings(max_examples=200, deadline=None)
@given(executions(), st.sampled_from(list(Model)))
def test_model_strength_order(ex, m):
    h, vis, ar, order = ex
    ae = ae_of(h, vis, order)
    verdict = {mm: check_model(ae, mm).verdict for mm in Model}
    if verdict[Model.STRONG_SI]:
        assert verdict[Model.REALTIME_SI] and verdict[Model.GSI]
    if verdict[Model.REALTIME_SI] and h.session_order() <= returns_before(h):
        assert verdict[Model.SESSION_SI]
    if verdict[Model.SESSION_SI] or verdict[Model.GSI]:
        assert verdict[Model.SI]


# --- brute-force oracle ---------------------------------------------------------------

def exhaustive(h, m):
    """Every total order starting with T0 and every vis within it; tiny histories only."""
    nodes = h.node_ids()
    for rest in itertools.permutations(nodes[1:]):
        order = (0,) + rest
        ar = {(a, b) for i, a in enumerate(order) for b in order[i + 1:]}
        ar_list = sorted(ar)
        for mask in range(1 << len(ar_list)):
            vis = {p for i, p in enumerate(ar_list) if mask >> i & 1}
            if ref_model(h, vis, ar, m):
                return True
    return False


@settings(max_examples=120, deadline=None)
@given(histories(max_txns=3), st.sampled_from(list(Model)))
def test_oracle_matches_exhaustive_search(h, m):
    ok, witness = brute_force_satisfies(h, m)
    assert ok == exhaustive(h, m)
    if ok:
        vis, ar = witness
        assert ref_model(h, vis.pairs(), ar.pairs(), m)
        assert check_model(AbstractExecution(h, vis, ar), m).verdict


def test_oracle_write_then_read_same_session():
    h = History([txn(1, [W("x", 1)], session=1), txn(2, [R("x", 1)], session=1)])
    ok, (vis, _) = brute_force_satisfies(h, Model.SESSION_SI)
    assert ok and (1, 2) in vis


def test_oracle_size_cap():
    h = History([txn(i, [W("x", i)]) for i in range(1, 8)])
    with pytest.raises(SizeLimitExceeded):
        brute_force_satisfies(h, Model.SI)
    assert brute_force_satisfies(h, Model.SI, cap=7)[0]


def test_oracle_requires_stamps_for_realtime_models(example_session):
    with pytest.raises(MalformedHistory):
        brute_force_satisfies(example_session, Model.REALTIME_SI)


def test_separation_session(example_session):
    assert brute_force_satisfies(example_session, Model.SI)[0] is True
    assert brute_force_satisfies(example_session, Model.SESSION_SI)[0] is False


def test_separation_realtime(example_realtime):
    assert brute_force_satisfies(example_realtime, Model.REALTIME_SI)[0] is True
    assert brute_force_satisfies(example_realtime, Model.STRONG_SI)[0] is False
    assert brute_force_satisfies(example_realtime, Model.SESSION_SI)[0] is True


def test_separation_fixtures_agree_with_exhaustive_search(example_session, example_realtime):
    # Independent confirmation of the frozen verdicts: T0 first, the five
    # transactions in every order, vis searched as ar-prefixes.
    def search(h, m):
        nodes = h.node_ids()
        for rest in itertools.permutations(nodes[1:]):
            order = (0,) + rest
            ar = {(a, b) for i, a in enumerate(order) for b in order[i + 1:]}
            pos = {n: i for i, n in enumerate(order)}
            choices = [range(pos[n] + 1) for n in nodes]
            for cut in itertools.product(*choices):
                vis = {(order[j], n) for n, c in zip(nodes, cut) for j in range(c)}
                if ref_model(h, vis, ar, m):
                    return True
        return False

    assert search(example_session, Model.SI) and not search(example_session, Model.SESSION_SI)
    assert search(example_realtime, Model.REALTIME_SI)
    assert not search(example_realtime, Model.STRONG_SI)


def test_check_axiom_dispatch():
    h = History([txn(1, [W("x", 1), R("x", 2)], start=1, commit=2)])
    ae = chain_ae(h)
    assert check_axiom(ae, A.INT)[0].axiom is A.INT
    assert not check_axiom(ae, A.CB)
