"""Which models does each deployment's history satisfy?

Runs one seeded workload per deployment and checks it against every model,
printing a pass/fail matrix.  Each deployment should pass its own target and
everything weaker; the failures on the right show what it gives up.

    python3 demos/model_matrix.py [seed] [txn-num]
"""

import sys

from si_lab import Model, SimConfig, check_deployment, run
from si_lab.checker import TARGET_MODEL

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
txn_num = int(sys.argv[2]) if len(sys.argv) > 2 else 600

models = list(Model)
print(f"{'':6}" + "".join(f"{m.cli_name:>13}" for m in models) + "   failing axioms")
for deployment in ("wt", "rs", "sc"):
    h = run(SimConfig(deployment=deployment, seed=seed, txn_num=txn_num))
    cells, missing = [], set()
    for m in models:
        rep = check_deployment(h, m)
        mark = "pass" if rep.verdict else "FAIL"
        if m is TARGET_MODEL[deployment]:
            mark = f"[{mark}]"
        cells.append(f"{mark:>13}")
        missing |= {a.value for a in rep.violated_axioms()}
    print(f"{deployment:6}" + "".join(cells) + "   " + (", ".join(sorted(missing)) or "-"))
print(f"\n{txn_num} transactions per run, seed {seed}; brackets mark each deployment's target.")
