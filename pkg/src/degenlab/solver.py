"""Minimization of the regularized discrete energy

    E_eps(u) = sum_cells [ F(|Du|_gamma) + eps/2 |Du|_gamma^2 ] h^n,

whose stationarity condition is the discrete regularized Euler-Lagrange
system, plus continuation in eps and a closed-form 1D oracle.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.optimize import brentq
from scipy.sparse.linalg import factorized

from . import kernel
from ._io import fmt
from .grid import Grid, NodalField, export_csv, grad_adjoint_array, grad_array
from .metric import MetricField, norm_batch

log = logging.getLogger(__name__)

_MACH = np.finfo(float).eps
# cap on the tangent stiffness h + h't used for the preconditioner when 1 < p < 2
_STIFF_CAP = 1e8


class SolveError(RuntimeError):
    def __init__(self, msg, eps=None, states=None):
        super().__init__(msg)
        self.eps = eps
        self.states = states or []


@dataclass(frozen=True)
class Datum:
    """Boundary datum ``x -> R^N``, vectorized over leading axes of ``x``."""

    name: str
    params: tuple
    fn: Callable = field(compare=False, repr=False)
    big_n: int = 1

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.asarray(self.fn(x), dtype=float)
        return out.reshape(x.shape[:-1] + (self.big_n,))


def build_datum(name: str, params=(), n: int = 2, big_n: int = 1) -> Datum:
    """Library of boundary data.

    ``zero``; ``linear`` with ``N*n`` coefficients ``a[i, a]`` (u^i = a_i . x);
    ``bilinear`` with one coefficient c (u = c x1 x2, n = 2);
    ``quadratic`` with one coefficient c (u = c |x|^2).
    """
    params = tuple(float(v) for v in params)
    if name == "zero":
        return Datum(name, params, lambda x: np.zeros(x.shape[:-1] + (big_n,)), big_n)
    if name == "linear":
        if len(params) != n * big_n:
            raise ValueError(f"linear datum needs {n * big_n} coefficients, got {len(params)}")
        A = np.array(params).reshape(big_n, n)
        return Datum(name, params, lambda x: x @ A.T, big_n)
    if big_n != 1:
        raise ValueError(f"datum {name!r} is scalar (N = 1)")
    c = params[0] if params else 1.0
    if name == "bilinear":
        if n != 2:
            raise ValueError("bilinear datum needs n = 2")
        return Datum(name, params, lambda x: c * x[..., :1] * x[..., 1:2], 1)
    if name == "quadratic":
        return Datum(name, params, lambda x: c * np.sum(x * x, axis=-1, keepdims=True), 1)
    raise ValueError(f"unknown datum {name!r}")


def datum_from_field(u: NodalField, name="reference") -> Datum:
    """Datum that reproduces nodal values of ``u`` bit-for-bit at grid nodes."""
    grid = u.grid
    vals = u.values.copy()

    def fn(x):
        idx = np.rint(np.asarray(x) / grid.h_cell).astype(int)
        idx = np.clip(idx, 0, grid.res - 1)
        return vals[tuple(idx[..., a] for a in range(grid.n))]

    return Datum(name, (), fn, u.big_n)


def estimate_lipschitz(datum: Datum, n: int, samples: int = 2000, seed: int = 0) -> float:
    """Largest Frobenius norm of the central-difference Jacobian over random points."""
    rng = np.random.default_rng(seed)
    step = 1e-5
    x = rng.uniform(step, 1 - step, (samples, n))
    jac = np.empty((samples, datum.big_n, n))
    for a in range(n):
        e = np.zeros(n)
        e[a] = step
        jac[..., a] = (datum(x + e) - datum(x - e)) / (2 * step)
    lip = float(np.sqrt((jac ** 2).sum(axis=(1, 2))).max())
    if not np.isfinite(lip):
        raise ValueError(f"datum {datum.name!r} is not Lipschitz on the sample")
    return lip


@dataclass
class ProblemSpec:
    grid: Grid
    metric: MetricField
    p: float
    datum: Datum
    eps_schedule: tuple = ()

    def __post_init__(self):
        if not self.p > 1:
            raise ValueError("p must exceed 1")
        if self.metric.dim_n != self.grid.n:
            raise ValueError("metric dimension does not match the grid")
        sched = tuple(float(e) for e in self.eps_schedule)
        if any(not 0 < e <= 1 for e in sched):
            raise ValueError("eps schedule entries must lie in (0, 1]")
        if any(b >= a for a, b in zip(sched, sched[1:])):
            raise ValueError("eps schedule must be strictly decreasing")
        self.eps_schedule = sched

    @property
    def big_n(self) -> int:
        return self.datum.big_n

    @cached_property
    def cell_metric(self) -> np.ndarray:
        return self.metric.sample(self.grid.centers)

    @cached_property
    def lipschitz(self) -> float:
        return estimate_lipschitz(self.datum, self.grid.n)

    @property
    def scale(self) -> float:
        return max(1.0, self.lipschitz)

    def spec_hash(self) -> str:
        key = {
            "n": self.grid.n, "res": self.grid.res, "metric": self.metric.name,
            "metric_params": [float(v) for v in self.metric.params], "p": float(self.p),
            "big_n": self.big_n, "datum": self.datum.name, "datum_params": list(self.datum.params),
        }
        return hashlib.sha256(json.dumps(key, sort_keys=True).encode()).hexdigest()[:16]

    def initial_field(self) -> NodalField:
        return NodalField(self.grid, self.datum(self.grid.nodes))


def _values(u):
    return u.values if isinstance(u, NodalField) else np.asarray(u, dtype=float)


def cell_gradients(spec: ProblemSpec, u) -> np.ndarray:
    return grad_array(spec.grid, _values(u))


def energy_parts(spec: ProblemSpec, u, eps: float):
    """(degenerate part, eps part) of the discrete energy."""
    t = norm_batch(spec.cell_metric, cell_gradients(spec, u))
    vol = spec.grid.cell_volume
    return float(kernel.f_integrand(t, spec.p).sum() * vol), float(0.5 * eps * (t * t).sum() * vol)


def energy(spec: ProblemSpec, u, eps: float) -> float:
    a, b = energy_parts(spec, u, eps)
    return a + b


def _flux(spec, du, eps):
    G = spec.cell_metric
    t = norm_batch(G, du)
    w = np.einsum("...ab,...ib->...ia", G, du)
    return t, w, (kernel.h(t, spec.p) + eps)[..., None, None] * w


def _gradient(spec, u, eps):
    du = grad_array(spec.grid, u)
    _, _, flux = _flux(spec, du, eps)
    g = grad_adjoint_array(spec.grid, flux) * spec.grid.cell_volume
    g[spec.grid.boundary_mask] = 0.0
    return g


def residual(spec: ProblemSpec, u, eps: float) -> NodalField:
    """Exact gradient of the energy in the interior nodal values (zero on the boundary)."""
    return NodalField(spec.grid, _gradient(spec, _values(u), eps))


def tangent_matrix(spec: ProblemSpec, u, eps: float) -> sp.csr_matrix:
    """Sparse Hessian of the energy (exact away from |Du|_gamma = 1 for p >= 2).

    Per cell the block is the matrix of the form B_eps(x, Du); for 1 < p < 2 its
    rank-one stiffness is capped so the matrix stays usable as a preconditioner.
    """
    grid, p = spec.grid, spec.p
    du = grad_array(grid, _values(u))
    G = spec.cell_metric
    t, w, _ = _flux(spec, du, eps)
    he = kernel.h(t, p) + eps
    live = t > 1
    tt = np.where(live, t, 2.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        stiff = np.where(live, kernel.stiffness(tt, p), 0.0)
        stiff = np.minimum(stiff, _STIFF_CAP)
        rank = np.where(live, (stiff - kernel.h(tt, p)) / (tt * tt), 0.0)
    big_n, n = du.shape[-2:]
    cells = int(np.prod(grid.cell_shape))
    b = big_n * n
    eye = np.eye(big_n)
    Gf = G.reshape(cells, n, n)
    blocks = he.reshape(cells, 1, 1) * np.einsum("ij,cab->ciajb", eye, Gf).reshape(cells, b, b)
    wf = w.reshape(cells, b)
    blocks += rank.reshape(cells, 1, 1) * np.einsum("ck,cl->ckl", wf, wf)
    T = sp.bsr_matrix((blocks, np.arange(cells), np.arange(cells + 1)), shape=(cells * b, cells * b))
    D = grid.gradient_matrix(big_n)
    return (D.T @ T.tocsr() @ D * grid.cell_volume).tocsr()


@dataclass
class SolveOptions:
    tol: float | None = None
    max_iter: int = 200
    seed: int = 0
    method: str = "ncg"
    init_noise: float = 0.0
    armijo_c: float = 1e-4
    max_backtracks: int = 60


@dataclass
class SolutionState:
    u: NodalField
    eps: float
    energy: float
    residual_norm: float
    iterations: int
    converged: bool
    tol: float = 0.0
    energy_history: list = field(default_factory=list)
    spec: ProblemSpec | None = field(default=None, repr=False)

    @property
    def grad(self) -> np.ndarray:
        return grad_array(self.u.grid, self.u.values)

    @property
    def max_slope(self) -> float:
        """max over cells of |Du|_gamma."""
        return float(norm_batch(self.spec.cell_metric, self.grad).max())


def _interior(spec):
    return np.repeat(~spec.grid.boundary_mask.ravel(), spec.big_n)


def solve_regularized(spec: ProblemSpec, eps: float, opts: SolveOptions | None = None,
                      u0=None) -> SolutionState:
    """Minimize E_eps with the datum's Dirichlet values.

    ``ncg`` is preconditioned Polak-Ribiere+ nonlinear CG whose preconditioner
    is the tangent matrix at the current iterate; ``newton`` (p >= 2 only) drops
    the conjugation.  Both use Armijo backtracking on the energy.
    """
    opts = opts or SolveOptions()
    if not eps > 0:
        raise ValueError("eps must be positive; the eps -> 0 limit is taken through a schedule")
    if opts.method not in ("ncg", "newton"):
        raise ValueError(f"unknown method {opts.method!r}")
    if opts.method == "newton" and spec.p < 2:
        raise ValueError("the Newton path requires p >= 2")
    tol = opts.tol if opts.tol is not None else 1e-8 * spec.scale
    grid = spec.grid

    u = spec.initial_field().values if u0 is None else _values(u0).copy()
    u[grid.boundary_mask] = spec.datum(grid.nodes[grid.boundary_mask])
    if opts.init_noise > 0:
        rng = np.random.default_rng(opts.seed)
        interior = ~grid.boundary_mask
        u[interior] += opts.init_noise * rng.standard_normal(u[interior].shape)

    free = _interior(spec)
    shape = u.shape

    def energy_and_slack(v):
        t = norm_batch(spec.cell_metric, grad_array(grid, v))
        cell = kernel.f_integrand(t, spec.p) + 0.5 * eps * t * t
        e = float(cell.sum() * grid.cell_volume)
        return e, 16 * _MACH * (abs(e) + 1e-300)

    E, slack = energy_and_slack(u)
    g = _gradient(spec, u, eps).ravel()
    history = [E]
    d = z_old = g_old = None
    it = 0
    rnorm = float(np.abs(g).max())
    while rnorm > tol and it < opts.max_iter:
        K = tangent_matrix(spec, u, eps)[free][:, free]
        solve = factorized(K.tocsc())
        z = np.zeros_like(g)
        z[free] = solve(g[free])
        if opts.method == "ncg" and d is not None:
            beta = max(0.0, float(z @ (g - g_old)) / float(z_old @ g_old))
            d_new = -z + beta * d
            if float(d_new @ g) >= 0:
                d_new = -z
        else:
            d_new = -z
        accepted = False
        for attempt in range(2):
            slope = float(d_new @ g)
            alpha = 1.0
            for _ in range(opts.max_backtracks):
                trial = u + alpha * d_new.reshape(shape)
                E_new, _ = energy_and_slack(trial)
                if E_new <= E + opts.armijo_c * alpha * slope + slack:
                    accepted = True
                    break
                alpha *= 0.5
            if accepted or np.array_equal(d_new, -z):
                break
            d_new = -z
        if not accepted:
            log.info("line search stalled at iteration %d (residual %.3e)", it, rnorm)
            break
        u = trial
        E, slack = energy_and_slack(u)
        history.append(E)
        g_old, z_old, d = g, z, d_new
        g = _gradient(spec, u, eps).ravel()
        rnorm = float(np.abs(g).max())
        it += 1
    return SolutionState(NodalField(grid, u), eps, E, rnorm, it, rnorm <= tol, tol, history, spec)


def eps_continuation(spec: ProblemSpec, opts: SolveOptions | None = None, u0=None) -> list:
    """One converged state per schedule entry, each warm-started from the previous one."""
    states = []
    warm = u0
    for eps in spec.eps_schedule:
        st = solve_regularized(spec, eps, opts, warm)
        if not st.converged:
            raise SolveError(f"solve did not converge at eps={eps:g} (residual {st.residual_norm:.3e})",
                             eps=eps, states=states + [st])
        log.info("eps=%g: %d iterations, max slope %.6g", eps, st.iterations, st.max_slope)
        states.append(st)
        warm = st.u
    return states


def solve_1d_oracle(p: float, eps: float, a: float):
    """Slope of the 1D regularized minimizer on [0, 1] with u(0) = 0, u(1) = a.

    The flux h_eps(|u'|) u' is constant and t -> h_eps(t) t is strictly
    increasing wherever it is positive, so the slope is recovered by inverting
    it at the flux of the linear profile.  For eps = 0 and |a| <= 1 every
    monotone 1-Lipschitz profile has zero energy and uniqueness fails.
    """
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    if eps == 0 and abs(a) <= 1:
        return float(a), False
    if a == 0:
        return 0.0, True

    def phi(t):
        return max(t - 1.0, 0.0) ** (p - 1) + eps * t

    target = phi(abs(a))
    hi = 2.0 * abs(a) + 2.0
    lo = 1.0 if eps == 0 else 0.0
    root = brentq(lambda t: phi(t) - target, lo, hi, xtol=1e-15, rtol=4 * _MACH, maxiter=500)
    return float(np.copysign(root, a)), True


def write_checkpoint(path, state: SolutionState) -> None:
    with open(path, "w", newline="\n") as f:
        f.write(f"# spec_hash = {state.spec.spec_hash() if state.spec else ''}\n")
        f.write(f"# eps = {fmt(state.eps)}\n")
        f.write(f"# iterations = {state.iterations}\n")
        f.write(f"# energy = {fmt(state.energy)}\n")
        f.write(f"# residual = {fmt(state.residual_norm)}\n")
        f.write(f"# converged = {int(state.converged)}\n")
        export_csv(f, state.u)


def read_checkpoint(path):
    """Return (header dict, NodalField) from a file written by :func:`write_checkpoint`."""
    header = {}
    grid_info = None
    rows = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line.startswith("# n="):
                grid_info = dict(kv.split("=") for kv in line[2:].split())
            elif line.startswith("#"):
                key, _, val = line[1:].partition("=")
                header[key.strip()] = val.strip()
            elif line and not line[0].isalpha():
                rows.append([float(v) for v in line.split(",")])
    if grid_info is None:
        raise ValueError(f"{path}: missing grid header")
    grid = Grid(int(grid_info["n"]), int(grid_info["res"]))
    data = np.array(rows)
    vals = data[:, grid.n:].reshape(grid.node_shape + (int(grid_info["big_n"]),))
    return header, NodalField(grid, vals)
