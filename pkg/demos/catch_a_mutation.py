"""Plant one anomaly per axiom and watch the checker name it.

Each operator makes a minimal edit to a clean history: a read that returns
a value nobody wrote, a transaction that reads below its own session's last
commit, a start stamp moved across a commit, and so on.  The checker must
report the intended axiom.  For a small prefix the brute-force oracle gives
an independent second opinion on the INT and EXT edits.

    python3 demos/catch_a_mutation.py [seed]
"""

import sys

from si_lab import SimConfig, brute_force_satisfies, check_deployment, mutate, run
from si_lab.axioms import Axiom
from si_lab.checker import MUTATIONS, TARGET_MODEL, MutationError, ar_prefix

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0

for axiom, deployments in MUTATIONS.items():
    for deployment, model in sorted(deployments.items()):
        # The INRB edit needs a history that has no INRB violation to begin with.
        conc = 1 if axiom is Axiom.INRB else 9
        h = run(SimConfig(deployment=deployment, seed=seed, txn_num=200, concurrency=conc))
        try:
            bad = mutate(h, axiom, seed)
        except MutationError as exc:
            print(f"{axiom.value:<10} {deployment}: no candidate ({exc})")
            continue
        rep = check_deployment(bad, model, all_violations=True)
        found = ", ".join(sorted(a.value for a in rep.violated_axioms()))
        ok = "caught" if axiom in rep.violated_axioms() else "MISSED"
        print(f"{axiom.value:<10} {deployment}: edited txns {bad.header['mutation']['txns']}, "
              f"{model.cli_name} reports {found} -> {ok}")

print("\nsecond opinion on 6-transaction prefixes:")
for deployment in ("wt", "rs", "sc"):
    small = ar_prefix(run(SimConfig(deployment=deployment, seed=seed, txn_num=40, key_count=3)), 6)
    model = TARGET_MODEL[deployment]
    for axiom in (Axiom.INT, Axiom.EXT):
        bad = mutate(small, axiom, seed)
        print(f"  {deployment} {axiom.value}: checker {check_deployment(bad).verdict}, "
              f"oracle {brute_force_satisfies(bad, model)[0]} "
              f"(clean prefix: {brute_force_satisfies(small, model)[0]})")
