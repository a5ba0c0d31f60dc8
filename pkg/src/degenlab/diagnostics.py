"""Post-processing of regularized solutions: truncated gradients, excess
functionals and the degenerate / nondegenerate regime test on balls, Hoelder
seminorms, the convergence rate in eps and composition with a closure k(x, xi).

Every quantity lives on cell centres and uses the midpoint rule, like the
discrete energy.  Functions accept a :class:`SolutionState` or a bare
:class:`NodalField`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.spatial import cKDTree

from . import kernel
from .grid import Grid, NodalField, grad_array, integrate
from .metric import MetricField, norm_batch

# Hoelder tables treat a relative growth below this under refinement as stable
HOLDER_RTOL = 0.1
EXACT_MATCH_TOL = 1e-14


def _field(sol) -> NodalField:
    return sol.u if hasattr(sol, "u") else sol


def _cell_data(sol, m: MetricField):
    u = _field(sol)
    grid = u.grid
    if m.dim_n != grid.n:
        raise ValueError("metric dimension does not match the grid")
    return grid, m.sample(grid.centers), grad_array(grid, u.values)


@dataclass
class TruncatedGradientField:
    grid: Grid
    delta: float
    values: np.ndarray
    norms: np.ndarray

    @property
    def big_n(self) -> int:
        return self.values.shape[-2]


def g_delta_field(sol, m: MetricField, delta: float) -> TruncatedGradientField:
    """Per-cell truncated gradient (|Du|_gamma - 1 - delta)_+ Du / |Du|_gamma."""
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    grid, G, du = _cell_data(sol, m)
    vals = kernel.truncate_batch(G, du, delta)
    return TruncatedGradientField(grid, float(delta), vals, norm_batch(G, vals))


def u_eps_field(sol, m: MetricField, delta: float) -> np.ndarray:
    """(|Du|_gamma - 1 - delta)_+^2 per cell, computed from |Du|_gamma alone."""
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    _, G, du = _cell_data(sol, m)
    return np.maximum(norm_batch(G, du) - 1.0 - delta, 0.0) ** 2


@dataclass
class ExcessReport:
    x0: tuple
    rho: float
    phi: float
    psi_delta: float
    mu: float
    superlevel_fraction: float
    regime: str
    nu: float
    cells: int
    # (radius, cell count, ball mean of the truncated gradient) at rho, rho/2, rho/4
    nested_means: list = field(default_factory=list)


def _mean_sq_dev(v):
    flat = v.reshape(len(v), -1)
    return float(np.mean(np.sum((flat - flat.mean(axis=0)) ** 2, axis=1)))


def classify(fraction: float, nu: float) -> str:
    """Nondegenerate iff the complement of the super-level set is smaller than nu."""
    return "nondegenerate" if 1.0 - fraction < nu else "degenerate"


def excess(sol, m: MetricField, x0, rho: float, delta: float, nu: float) -> ExcessReport:
    """Excess functionals and regime on the ball B_rho(x0) (cells with centre inside)."""
    if not 0 < nu <= 1:
        raise ValueError("nu must lie in (0, 1]")
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    grid, G, du = _cell_data(sol, m)
    mask = grid.ball_mask(x0, rho)
    if not mask.any():
        raise ValueError(f"ball at {tuple(x0)} with radius {rho} contains no cell centre")
    Gb, db = G[mask], du[mask]
    gd = kernel.truncate_batch(Gb, db, delta)
    level = np.maximum(norm_batch(Gb, db) - 1.0 - delta, 0.0)
    mu = float(level.max())
    frac = float(np.mean(level > (1.0 - nu) * mu))
    nested = []
    full = kernel.truncate_batch(G, du, delta)
    for r in (rho, rho / 2, rho / 4):
        sub = grid.ball_mask(x0, r)
        if sub.any():
            nested.append((r, int(sub.sum()), full[sub].mean(axis=0).tolist()))
    return ExcessReport(tuple(float(c) for c in x0), float(rho), _mean_sq_dev(db), _mean_sq_dev(gd), mu, frac,
                        classify(frac, nu), float(nu), int(mask.sum()), nested)


def random_probes(count: int, seed: int = 0, n: int = 2, rho_range=(0.1, 0.3), nu_range=(0.05, 0.95)):
    """(x0, rho, nu) triples with the ball inside the unit box."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        rho = rng.uniform(*rho_range)
        x0 = rng.uniform(rho, 1.0 - rho, n)
        out.append((tuple(x0), float(rho), float(rng.uniform(*nu_range))))
    return out


def _values_and_grid(fld):
    if isinstance(fld, tuple):
        grid, vals = fld
    else:
        grid, vals = fld.grid, fld.values
    vals = np.asarray(vals, dtype=float)
    return grid, vals.reshape(int(np.prod(grid.cell_shape)), -1)


def _pairs(grid, max_dist):
    pts = grid.centers.reshape(-1, grid.n)
    tree = cKDTree(pts)
    ij = tree.query_pairs(max_dist * (1 + 1e-12), output_type="ndarray")
    if len(ij) == 0:
        raise ValueError("no cell pairs within the distance cap")
    return pts, ij


def holder_seminorms(fld, alphas, max_dist: float) -> dict:
    """sup over cell pairs closer than ``max_dist`` of |f(x) - f(y)| / |x - y|^alpha."""
    grid, vals = _values_and_grid(fld)
    if vals.shape[0] < 2:
        raise ValueError("need at least two cells")
    pts, ij = _pairs(grid, max_dist)
    dist = np.linalg.norm(pts[ij[:, 0]] - pts[ij[:, 1]], axis=1)
    jump = np.linalg.norm(vals[ij[:, 0]] - vals[ij[:, 1]], axis=1)
    return {float(a): float(np.max(jump / dist ** a)) for a in alphas}


@dataclass
class HolderTable:
    alphas: list
    resolutions: tuple
    coarse: list
    fine: list
    stable: list
    best_alpha: float | None

    def rows(self):
        """(alpha, seminorm, resolution) rows, coarse first."""
        out = []
        for res, vals in zip(self.resolutions, (self.coarse, self.fine)):
            out += [(a, s, res) for a, s in zip(self.alphas, vals)]
        return out


def holder_estimate(coarse, fine, alphas, max_dist: float, rtol: float = HOLDER_RTOL) -> HolderTable:
    """Hoelder seminorms on two resolutions of the same field.

    An exponent counts as stable when refining does not raise the seminorm by
    more than ``rtol`` (relative); ``best_alpha`` is the largest stable one.
    """
    alphas = sorted(float(a) for a in alphas)
    sc = holder_seminorms(coarse, alphas, max_dist)
    sf = holder_seminorms(fine, alphas, max_dist)
    stable = [bool(sf[a] <= (1 + rtol) * sc[a] or sf[a] <= EXACT_MATCH_TOL) for a in alphas]
    good = [a for a, s in zip(alphas, stable) if s]
    res = (_values_and_grid(coarse)[0].res, _values_and_grid(fine)[0].res)
    return HolderTable(alphas, res, [sc[a] for a in alphas], [sf[a] for a in alphas], stable,
                       max(good) if good else None)


@dataclass
class RateReport:
    eps: list
    errors: list
    slope: float
    intercept: float
    exact_match: bool
    reference_eps: float


def fit_rate(eps, errors) -> tuple:
    """Least-squares (slope, intercept, exact_match) of log(error) against log(eps)."""
    eps = np.asarray(eps, dtype=float)
    err = np.asarray(errors, dtype=float)
    if len(eps) < 2 or len(eps) != len(err):
        raise ValueError("need at least two (eps, error) pairs")
    if np.all(err < EXACT_MATCH_TOL):
        return float("nan"), float("nan"), True
    if np.any(err <= 0):
        raise ValueError("cannot fit a power law through zero errors")
    slope, intercept = np.polyfit(np.log(eps), np.log(err), 1)
    return float(slope), float(intercept), False


def lp_error(a: TruncatedGradientField, b: TruncatedGradientField, m: MetricField, p: float) -> float:
    """Integral of |a - b|_gamma^p over the unit box."""
    G = m.sample(a.grid.centers)
    return integrate(a.grid, norm_batch(G, a.values - b.values) ** p)


def convergence_rate(states, reference, m: MetricField, delta: float, p: float) -> RateReport:
    """Fit of the L^p error (to the power p) of the truncated gradient against eps.

    The reference state is excluded from the fit; at least three other states
    are required.
    """
    fit = [s for s in states if s.eps != reference.eps]
    if len(fit) < 3:
        raise ValueError("need at least three states besides the reference")
    ref = g_delta_field(reference, m, delta)
    errs = [lp_error(g_delta_field(s, m, delta), ref, m, p) for s in fit]
    eps = [float(s.eps) for s in fit]
    slope, icpt, exact = fit_rate(eps, errs)
    return RateReport(eps, errs, slope, icpt, exact, float(reference.eps))


@dataclass
class KCompose:
    values: np.ndarray
    radii: list
    modulus: list


def spot_check_vanishing(k: Callable, m: MetricField, big_n: int, samples: int = 256, seed: int = 0,
                         tol: float = 1e-12) -> None:
    """Raise unless k(x, xi) = 0 on random samples with |xi|_gamma(x) <= 1."""
    rng = np.random.default_rng(seed)
    n = m.dim_n
    x = rng.uniform(m.lower, m.upper, (samples, n))
    G = m.sample(x)
    xi = rng.standard_normal((samples, big_n, n))
    xi *= (rng.uniform(0, 1, samples) / norm_batch(G, xi))[:, None, None]
    xi[0] = 0.0
    vals = np.asarray(k(x, xi), dtype=float)
    if np.any(np.abs(vals) > tol):
        raise ValueError("k does not vanish on the set |xi|_gamma <= 1")


def modulus_table(grid: Grid, values, radii) -> list:
    """omega(r) = max |f(x) - f(y)| over cell pairs at distance <= r."""
    v = np.asarray(values, dtype=float).reshape(int(np.prod(grid.cell_shape)), -1)
    pts, ij = _pairs(grid, max(radii))
    dist = np.linalg.norm(pts[ij[:, 0]] - pts[ij[:, 1]], axis=1)
    jump = np.linalg.norm(v[ij[:, 0]] - v[ij[:, 1]], axis=1)
    order = np.argsort(dist, kind="stable")
    running = np.maximum.accumulate(jump[order])
    out = []
    for r in radii:
        k = np.searchsorted(dist[order], r * (1 + 1e-12), side="right")
        out.append(float(running[k - 1]) if k else 0.0)
    return out


def k_compose(sol, m: MetricField, k: Callable, radii=None, seed: int = 0) -> KCompose:
    """Cell values k(x, Du(x)) and their discrete modulus of continuity.

    ``k`` takes points ``(m, n)`` and gradients ``(m, N, n)`` and returns ``(m,)``.
    """
    grid, _, du = _cell_data(sol, m)
    spot_check_vanishing(k, m, du.shape[-2], seed=seed)
    x = grid.centers.reshape(-1, grid.n)
    vals = np.asarray(k(x, du.reshape(len(x), du.shape[-2], grid.n)), dtype=float).reshape(grid.cell_shape)
    if radii is None:
        radii = [grid.h_cell * 2 ** j for j in range(5)]
    return KCompose(vals, list(radii), modulus_table(grid, vals, radii))


def k_excess(m: MetricField) -> Callable:
    """k(x, xi) = (|xi|_gamma(x) - 1)_+."""
    return lambda x, xi: np.maximum(norm_batch(m.sample(x), xi) - 1.0, 0.0)


def k_truncated_norm(m: MetricField) -> Callable:
    """k(x, xi) = |G(x, xi)|_gamma(x) computed through the truncation map."""
    def k(x, xi):
        G = m.sample(x)
        return norm_batch(G, kernel.truncate_batch(G, xi, 0.0))
    return k


@dataclass
class DeltaDefect:
    deltas: list
    defect: list
    ratio: list
    stable: bool


def delta_defect(sol, m: MetricField, deltas, rtol: float = 0.1) -> DeltaDefect:
    """max over cells of |G_delta - G_0|_gamma, divided by delta, for each delta."""
    deltas = [float(d) for d in deltas]
    if any(d <= 0 for d in deltas):
        raise ValueError("deltas must be positive")
    G = m.sample(_field(sol).grid.centers)
    base = g_delta_field(sol, m, 0.0).values
    defect = [float(norm_batch(G, g_delta_field(sol, m, d).values - base).max()) for d in deltas]
    ratio = [e / d for e, d in zip(defect, deltas)]
    top = max(ratio)
    return DeltaDefect(deltas, defect, ratio, bool(top > 0 and (top - min(ratio)) <= rtol * top))
