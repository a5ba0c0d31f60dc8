#!/usr/bin/env python3
# Congested traffic reading of a scalar solution: sigma = h(|Du|) Du.
#
# For u = 2 x1 the flow is the constant field (1, 0) and the primal energy,
# the congestion cost and the pairing are 1/2, 3/2 and 2.  For a datum with a
# varying gradient the flow is divergence free up to the eps term that the
# regularization adds, which the printout shows shrinking with eps.
#
# Usage:
#   python3 demos/traffic_flow_duality.py
from degenlab import transport as T
from degenlab.grid import Grid
from degenlab.metric import identity
from degenlab.solver import Datum, ProblemSpec, SolveOptions, build_datum, eps_continuation

m = identity(2)


def solve(datum, schedule=(1e-1, 1e-2, 1e-3, 1e-4), res=33):
    spec = ProblemSpec(Grid(2, res), m, 2.0, datum, schedule)
    return eps_continuation(spec, SolveOptions(method="newton"))


sol = solve(build_datum("linear", (2.0, 0.0)))[-1]
for k, v in T.duality_report(T.traffic_flow(sol)).items():
    print(f"{k:>16} = {v:.12g}")

print("\ndatum 2 x1 + 0.5 x1 x2: interior divergence of sigma against eps")
smooth = Datum("smooth", (), lambda x: (2 * x[..., 0] + 0.5 * x[..., 0] * x[..., 1])[..., None], 1)
for st in solve(smooth):
    rep = T.duality_report(T.traffic_flow(st))
    print(f"  eps {st.eps:7.0e}  max |div sigma| {rep.div_norm:.3e}  gap {rep.primal_energy + rep.dual_energy - rep.pairing:.1e}")
