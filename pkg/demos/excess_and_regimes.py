#!/usr/bin/env python3
# Excess decay diagnostics on the mixed-datum solution.
#
# For balls along the diagonal the script prints the excess of the truncated
# gradient, the fraction of the ball where it is close to its maximum and the
# resulting regime, then Hoelder seminorms of G_delta at two resolutions.
#
# Usage:
#   python3 demos/excess_and_regimes.py
import numpy as np

from degenlab import diagnostics as D
from degenlab.grid import Grid
from degenlab.metric import identity
from degenlab.solver import ProblemSpec, SolveOptions, build_datum, eps_continuation

m = identity(2)
delta, nu = 0.1, 0.5


def solve(res):
    spec = ProblemSpec(Grid(2, res), m, 2.0, build_datum("bilinear", (2.0,)), (1e-1, 1e-2, 1e-3))
    return eps_continuation(spec, SolveOptions(method="newton"))[-1]


coarse, fine = solve(33), solve(65)
print(f"{'center':>12} {'rho':>5} {'phi':>10} {'psi':>10} {'fraction':>8}  regime")
for c in np.linspace(0.2, 0.8, 7):
    for rho in (0.1, 0.2):
        r = D.excess(fine, m, (c, c), rho, delta, nu)
        print(f"({c:.2f}, {c:.2f}) {rho:5.2f} {r.phi:10.4e} {r.psi_delta:10.4e} {r.superlevel_fraction:8.3f}  {r.regime}")

tab = D.holder_estimate(D.g_delta_field(coarse, m, delta), D.g_delta_field(fine, m, delta), [0.25, 0.5, 1.0], 0.25)
print("\nHoelder seminorms of G_delta")
for a, sc, sf, ok in zip(tab.alphas, tab.coarse, tab.fine, tab.stable):
    print(f"  alpha {a:4.2f}: res 33 {sc:.4f}  res 65 {sf:.4f}  {'stable' if ok else 'grows'}")
