"""A replica-set reader that sees a write before the writer is acknowledged.

The primary applies a commit locally, then waits for a majority before it
answers the client.  A transaction that starts in that window already reads
the new value.  Nothing is lost (the write does become durable), yet the
reader observed a transaction that had not returned: the history satisfies
RealtimeSI but not StrongSI.

    python3 demos/speculative_read.py
"""

from si_lab import Model, check_deployment, interleave_directed

SCRIPT = """
deployment rs
replicas 3
session writer
session reader
begin writer
write writer x 1
commit writer     # applied on the primary; the client is still waiting
begin reader
read reader x     # snapshot taken from the primary's local state
commit reader
replicate s1      # one secondary catches up: now a majority has x=1
finish writer     # the writer's client finally hears back
finish reader
"""

h = interleave_directed(SCRIPT)
print("txn  ops              start  return  readTs       commitTs")
for t in sorted(h.committed(), key=lambda t: t.txn_id):
    if t.txn_id:
        ops = " ".join(str(op) for op in t.ops)
        print(f"{t.txn_id:<4} {ops:<16} {t.start:>5}  {t.commit:>6}  {t.read_ts!s:<12} {t.commit_ts}")

for model in (Model.REALTIME_SI, Model.STRONG_SI):
    rep = check_deployment(h, model, all_violations=True)
    print(f"\n{model.cli_name}: {'PASS' if rep.verdict else 'FAIL'}")
    for v in rep.violations:
        print(f"  {v.axiom.value}: {v.message}")
