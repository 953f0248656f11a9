import pytest

from si_lab.model import COMMITTED, History, R, Transaction, W

# Five transactions shared by the two separation fixtures.  T_a and T_c write
# x and y; T_d writes w and z; T_b and T_e each read one fresh and one stale
# value, which forces the two readers to disagree on the order of writers.
A, B, C, D, E = 1, 2, 3, 4, 5
SEPARATION_OPS = {
    A: (W("x", 1),),
    B: (R("y", 1), R("w", 0)),
    C: (W("y", 1),),
    D: (W("w", 1), W("z", 1)),
    E: (R("x", 0), R("z", 1)),
}

# Directed rs interleavings.  In the first, a reader's snapshot includes a
# write that is applied on the primary but not yet replicated.  In the
# second, the reader starts between the writer taking its commit timestamp
# and the storage commit, so the frontier stays below the pending write.
SPECULATIVE = """
deployment rs
replicas 3
session a
session b
begin a
write a x 1
commit a          # logged and applied on the primary, not yet replicated
begin b
read b x          # the snapshot already includes a's write
commit b
replicate s1
finish a
finish b
"""

COMMIT_GAP = """
deployment rs
session a
session b
begin a
write a x 1
commit-ts a       # timestamp taken and logged, storage commit still pending
begin b
read b x
commit-local a
replicate s1
finish a
commit b
replicate s1
finish b
"""


def txn(tid, ops, session=None, start=None, commit=None, **meta):
    return Transaction(txn_id=tid, session_id=session if session is not None else tid,
                       ops=tuple(ops), status=COMMITTED, start=start, commit=commit, **meta)


def session_not_si_history() -> History:
    """SI holds, but not once T_a and T_b share a session."""
    sessions = {A: 1, B: 1, C: 2, D: 3, E: 4}
    return History([txn(i, SEPARATION_OPS[i], sessions[i]) for i in SEPARATION_OPS])


def realtime_not_strong_history() -> History:
    """RealtimeSI holds, but T_b reads y from T_c while the two overlap."""
    stamps = {C: (10, 40), B: (20, 50), D: (60, 70), E: (80, 90), A: (100, 110)}
    return History([txn(i, SEPARATION_OPS[i], i, *stamps[i]) for i in SEPARATION_OPS])


@pytest.fixture
def example_session():
    return session_not_si_history()


@pytest.fixture
def example_realtime():
    return realtime_not_strong_history()


# --- acceptance summary -------------------------------------------------------
# test_acceptance records one line per criterion here; they are printed after
# the run whether or not output capture is on.
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
