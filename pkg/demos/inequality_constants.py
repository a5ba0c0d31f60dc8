#!/usr/bin/env python3
# Empirical constants of the algebraic inequalities behind the regularity
# estimates, at three exponents.
#
# Each "for some constant c" inequality is turned into a ratio whose supremum
# is estimated from 1e4 and 2e4 admissible samples plus a local search.  The
# freeze estimate is the odd one out: away from p = 2 its ratio grows like
# 1/mu, shown by evaluating one configuration at shrinking mu.
#
# Usage:
#   python3 demos/inequality_constants.py [budget]
import sys

import numpy as np

from degenlab.lemmas import RATIO_IDS, LemmaCase, evaluate_lemma, run_lemma

budget = int(sys.argv[1]) if len(sys.argv) > 1 else 10_000
ps = (1.5, 2.0, 3.0)

print(f"{'id':>11} " + " ".join(f"{'p=' + format(p, 'g'):>22}" for p in ps))
for i in RATIO_IDS:
    cells = []
    for p in ps:
        r = run_lemma(LemmaCase(i, p), budget, seed=0)
        cells.append(f"{r.c_half:9.4g} -> {r.c_emp:9.4g}{'' if r.stable else '*'}")
    print(f"{i:>11} " + " ".join(f"{c:>22}" for c in cells))
print("(* drift above 5% when the budget doubles)")

print("\nfreeze ratio for |xi|_gamma = 1 + mu, affine metric, y - x = 1e-3 mu e1")
x = np.array([0.3, 0.5])
e1 = np.array([[1.0, 0.0], [0.0, 0.0]])
for p in ps:
    vals = []
    for mu in (1e-1, 1e-2, 1e-3, 1e-4):
        P = {"metric": np.array([2]), "x": x[None], "y": (x + [1e-3 * mu, 0])[None], "rows": np.array([1]),
             "mu": np.array([mu]), "s": np.array([1.0]), "dir": e1[None], "eta": e1[None], "eps": np.array([0.0])}
        vals.append(evaluate_lemma(LemmaCase("L2_Bfreeze", p), P)["ratio"][0])
    print(f"  p={p:g}: " + "  ".join(f"{v:10.4g}" for v in vals))
