"""Randomized checks of the algebraic inequalities behind the regularity theory.

Constant-free inequalities are checked exactly (zero violations at a relative
tolerance).  Inequalities that hold "for some constant c" are turned into a
ratio LHS / (RHS without c) whose supremum estimate ``c_emp`` is reported and
required to be stable when the sample budget doubles.

The supremum is estimated in two stages: random draws from a sampler that
respects the hypotheses, then a seeded local search started from the best
draws.  A search step perturbs the sample parameters and is kept only if the
hypotheses still hold and the ratio grows, so every reported ratio is attained
at an admissible configuration.

Every vector lives in R^{N x n} with n = 2 and N in {1, 2}; an N = 1 sample
is stored with a zero second row, which leaves every norm and form unchanged.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import kernel as K
from ._io import fmt
from .forms import form_a_batch, form_b_batch, form_c_batch, sq_norm_batch
from .metric import MetricField, affine_diagonal, constant_diagonal, identity, inner_batch, norm_batch, rotation

EXACT_IDS = ("L2_5a", "L2_6a", "L2_6b", "L2_7", "L2_8_2")
RATIO_IDS = ("L2_1", "L2_2", "L2_3a", "L2_3b", "L2_4", "L2_5b", "L2_8_1", "L2_8_3",
             "L2_Bfreeze", "L2_9", "L2_10", "L2_11")
ALL_IDS = ("L2_1", "L2_2", "L2_3a", "L2_3b", "L2_4", "L2_5a", "L2_5b", "L2_6a", "L2_6b", "L2_7",
           "L2_8_1", "L2_8_2", "L2_8_3", "L2_Bfreeze", "L2_9", "L2_10", "L2_11")

CSV_COLUMNS = ("id", "mode", "samples", "violations", "c_emp", "stable", "p")

SAMPLER_METRICS = {
    "identity": lambda: identity(2),
    "diagonal": lambda: constant_diagonal([1.0, 2.0]),
    "affine": lambda: affine_diagonal(0.5),
    "rotation": lambda: rotation(1.0, 3.0, 1.0),
}

EXACT_RTOL = 1e-10
STABLE_DRIFT = 0.05
# 1 < p < 2: keep |xi|_gamma away from the singular point of h'
P_LT2_GAP = 1e-6
# truncation level for the lemma whose constant depends on delta
L2_9_DELTA = 0.5
L2_11_GAP = 0.05
MU_RANGE = (1e-3, 1e1)

POLISH_STARTS = 64
POLISH_ROUNDS = 400
SIGMA_START = 0.2
SIGMA_MIN = 1e-4


@dataclass(frozen=True)
class LemmaCase:
    """One lemma at a fixed exponent; ``eps``/``delta`` None means sampled."""

    id: str
    p: float = 2.0
    eps: float | None = None
    delta: float | None = None
    metrics: tuple = tuple(SAMPLER_METRICS)

    def __post_init__(self):
        if self.id not in ALL_IDS:
            raise ValueError(f"unknown lemma id {self.id!r}")
        if not self.p > 1:
            raise ValueError("p must exceed 1")
        if not self.metrics:
            raise ValueError("at least one sampler metric is required")
        unknown = set(self.metrics) - set(SAMPLER_METRICS)
        if unknown:
            raise ValueError(f"unknown sampler metrics {sorted(unknown)}")

    @property
    def mode(self) -> str:
        return "exact" if self.id in EXACT_IDS else "ratio"


@dataclass
class LemmaReport:
    id: str
    mode: str
    samples: int
    violations: int
    c_emp: float
    worst_case: dict = field(default_factory=dict)
    stable: bool = True
    p: float = 2.0
    c_half: float = float("nan")

    @property
    def passed(self) -> bool:
        if self.mode == "exact":
            return self.violations == 0
        return self.violations == 0 and bool(np.isfinite(self.c_emp)) and self.stable

    def csv_row(self) -> list:
        return [self.id, self.mode, str(self.samples), str(self.violations), fmt(self.c_emp),
                str(int(self.stable)), fmt(self.p)]


def write_csv(stream, reports) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in reports:
        w.writerow(r.csv_row())


def _require(mask, what):
    if not np.all(mask):
        raise AssertionError(f"sampler broke the hypotheses of {what} on {int(np.size(mask) - np.sum(mask))} samples")


class _Pool:
    """The sampler metrics, evaluated per sample by index."""

    def __init__(self, names):
        self.metrics = [SAMPLER_METRICS[k]() for k in names]

    def __len__(self):
        return len(self.metrics)

    def at(self, ids, x):
        G = np.empty(x.shape[:-1] + (2, 2))
        for k, mf in enumerate(self.metrics):
            sel = ids == k
            if np.any(sel):
                G[sel] = mf.sample(x[sel])
        return G


class _Sampler:
    def __init__(self, case: LemmaCase, rng: np.random.Generator, pool: _Pool):
        self.case = case
        self.p = case.p
        self.rng = rng
        self.pool = pool

    # -- scalars -------------------------------------------------------------
    def log_uniform(self, lo, hi, m):
        return np.exp(self.rng.uniform(np.log(lo), np.log(hi), m))

    def mags(self, m):
        """Half log-uniform on [1e-3, 1e3], half uniform on [0, 4] (dense near t = 1)."""
        wide = self.log_uniform(1e-3, 1e3, m)
        near = self.rng.uniform(0.0, 4.0, m)
        t = np.where(self.rng.random(m) < 0.5, wide, near)
        return self.guard_scalar(np.maximum(t, 1e-3))

    def guard_scalar(self, t):
        if self.p < 2:
            close = np.abs(t - 1.0) < P_LT2_GAP
            t = np.where(close, 1.0 + np.where(t >= 1.0, 2.0, -2.0) * P_LT2_GAP, t)
        return t

    def above_one(self, m):
        """Positive offsets a - 1 spread over many scales."""
        lo = 2 * P_LT2_GAP
        return np.where(self.rng.random(m) < 0.5, self.log_uniform(lo, 1e3, m), self.rng.uniform(lo, 3.0, m))

    def eps(self, m, positive=False):
        if self.case.eps is not None:
            return np.full(m, float(self.case.eps))
        # log-uniform on [1e-6, 1] with 10% mass on each admissible endpoint
        e = self.log_uniform(1e-6, 1.0, m)
        u = self.rng.random(m)
        e = np.where(u < 0.1, 1.0, e)
        if not positive:
            e = np.where(u > 0.9, 0.0, e)
        return e

    def delta(self, m, positive=False, default=None):
        if self.case.delta is not None:
            return np.full(m, float(self.case.delta))
        if default is not None:
            return np.full(m, default)
        d = self.rng.uniform(0.0, 1.0, m)
        d = np.where(d == 0, 1.0, d)
        if not positive:
            d = np.where(self.rng.random(m) < 0.2, 0.0, d)
        return d

    def mu(self, m):
        return self.log_uniform(*MU_RANGE, m)

    # -- metric and points ---------------------------------------------------
    def common(self, m, margin=0.0):
        ids = self.rng.integers(len(self.pool), size=m)
        x = self.rng.uniform(margin, 1.0 - margin, (m, 2))
        rows = self.rng.integers(1, 3, size=m)
        return ids, x, self.pool.at(ids, x), rows

    def partner_point(self, x):
        m = len(x)
        d = self.rng.standard_normal((m, 2))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        near = np.clip(x + self.log_uniform(1e-4, 0.5, m)[:, None] * d, 0.0, 1.0)
        return np.where((self.rng.random(m) < 0.5)[:, None], near, self.rng.uniform(0.0, 1.0, (m, 2)))

    # -- vectors -------------------------------------------------------------
    def operand(self, rows, shape_tail):
        v = self.rng.standard_normal((len(rows), 2) + shape_tail)
        v[rows == 1, 1] = 0.0
        return v

    def vec(self, G, t, rows):
        v = self.operand(rows, (2,))
        return (t / norm_batch(G, v))[:, None, None] * v

    def guard_vec(self, G, v):
        if self.p >= 2:
            return v
        t = norm_batch(G, v)
        new = self.guard_scalar(t)
        return v * np.where(t > 0, new / np.where(t > 0, t, 1.0), 1.0)[:, None, None]

    def partner(self, G, xi, rows):
        """Second vector: a third independent, a third a relative perturbation of
        size in [1e-4, 1], a third nearly colinear (either orientation)."""
        m = len(rows)
        t = norm_batch(G, xi)
        indep = self.vec(G, self.mags(m), rows)
        local = xi + self.vec(G, self.log_uniform(1e-4, 1.0, m) * t, rows)
        scale = self.log_uniform(1e-3, 1e1, m) * self.rng.choice([-1.0, 1.0], m)
        colin = scale[:, None, None] * xi + self.vec(G, self.log_uniform(1e-6, 1e-1, m) * t, rows)
        u = self.rng.random(m)[:, None, None]
        out = np.where(u < 1 / 3, indep, np.where(u < 2 / 3, local, colin))
        return self.guard_vec(G, out)


def _enorm(v):
    return np.sqrt(np.sum(v.reshape(len(v), -1) ** 2, axis=1))


def _ratio(num, den):
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = num / den
    return np.where(den > 0, r, np.where(num > 0, np.inf, np.nan))


def _gap_ok(p, *ts):
    """For 1 < p < 2 every gamma-norm fed to h' must avoid 1."""
    if p >= 2:
        return np.ones(np.shape(ts[0]), dtype=bool)
    return np.all([np.abs(t - 1.0) >= P_LT2_GAP for t in ts], axis=0)


def _a(G, xi, p, eps):
    return K.a_field_batch(G, xi, p, eps)


def _unit_box(P, *keys):
    return np.all([(P[k] >= 0) & (P[k] <= 1) for k in keys], axis=0)


# --- lemma definitions --------------------------------------------------------
# draw(s, m) -> parameter dict; evaluate(P, p, pool) -> {"ratio"} or
# {"lhs", "rhs", optional "scale"} with the claim lhs <= rhs (extra columns are
# separate checks); hyp(P, p, pool) -> admissibility mask; kinds tell the
# local search how each parameter may move.

@dataclass(frozen=True)
class _Lemma:
    draw: Callable
    evaluate: Callable
    hyp: Callable
    kinds: dict


def _draw_pair(s, m):
    ids, x, G, rows = s.common(m)
    xi = s.vec(G, s.mags(m), rows)
    return {"metric": ids, "x": x, "rows": rows, "xi": xi, "eta": s.partner(G, xi, rows)}


def _hyp_nonzero(P, p, pool):
    G = pool.at(P["metric"], P["x"])
    return (norm_batch(G, P["xi"]) > 0) & (norm_batch(G, P["eta"]) > 0)


def _ev_l2_1(P, p, pool):
    G = pool.at(P["metric"], P["x"])
    xi, eta = P["xi"], P["eta"]
    te, tx = norm_batch(G, eta), norm_batch(G, xi)
    num = _enorm(eta / te[:, None, None] - xi / tx[:, None, None]) * _enorm(eta)
    return {"ratio": _ratio(num, _enorm(eta - xi))}


def _draw_l2_2(s, m):
    P = _draw_pair(s, m)
    P["alpha"] = s.rng.uniform(0.25, 3.0, m)
    return P


def _ev_l2_2(P, p, pool):
    G = pool.at(P["metric"], P["x"])
    xi, eta, alpha = P["xi"], P["eta"], P["alpha"]
    te, tx = norm_batch(G, eta), norm_batch(G, xi)
    dv = _enorm((te ** (alpha - 1))[:, None, None] * eta - (tx ** (alpha - 1))[:, None, None] * xi)
    mid = (te + tx) ** (alpha - 1) * _enorm(eta - xi)
    return {"ratio": np.fmax(_ratio(dv, mid), _ratio(mid, dv))}


def _draw_l2_3a(s, m):
    P = _draw_pair(s, m)
    P["delta"] = s.delta(m)
    return P


def _ev_l2_3a(P, p, pool):
    G = pool.at(P["metric"], P["x"])
    d = P["delta"]
    num = _enorm(K.truncate_batch(G, P["xi"], d) - K.truncate_batch(G, P["eta"], d))
    return {"ratio": _ratio(num, _enorm(P["eta"] - P["xi"]))}


def _hyp_l2_3a(P, p, pool):
    return _unit_box(P, "delta")


def _draw_l2_3b(s, m):
    ids, x, G, rows = s.common(m)
    delta = s.delta(m, positive=True)
    eta = s.vec(G, 1.0 + delta + s.mags(m), rows)
    return {"metric": ids, "x": x, "rows": rows, "delta": delta, "eta": eta, "xi": s.partner(G, eta, rows)}


def _hyp_l2_3b(P, p, pool):
    G = pool.at(P["metric"], P["x"])
    d = P["delta"]
    return (d > 0) & (d <= 1) & (norm_batch(G, P["eta"]) >= 1 + d)


def _ev_l2_3b(P, p, pool):
    G = pool.at(P["metric"], P["x"])
    eta, xi = P["eta"], P["xi"]
    den = (1.0 + 1.0 / P["delta"]) * _enorm(K.truncate_batch(G, eta, 0.0) - K.truncate_batch(G, xi, 0.0))
    return {"ratio": _ratio(_enorm(eta - xi), den)}


def _draw_l2_4(s, m):
    a1 = s.above_one(m)
    a = 1 + a1
    near = a * (1 + s.log_uniform(1e-4, 1.0, m) * s.rng.choice([-1, 1], m))
    b = np.where(s.rng.random(m) < 0.5, s.mags(m), np.maximum(near, 1e-6))
    return {"a1": a1, "b": b}


def _ev_l2_4(P, p, pool):
    a, b = 1 + P["a1"], P["b"]
    num = np.abs(K.h(b, p) - K.h(a, p)) * b
    den = (a - 1 + np.maximum(b - 1, 0.0)) ** (p - 1) / (a - 1) * np.abs(b - a)
    return {"ratio": _ratio(num, den)}


def _hyp_l2_4(P, p, pool):
    return (P["a1"] > 0) & (P["b"] >= 0)


def _draw_l2_5a(s, m):
    return {"a1": s.above_one(m)}


def _ev_l2_5a(P, p, pool):
    a = 1 + P["a1"]
    return {"lhs": np.abs(K.h_prime(a, p)), "rhs": p * (a - 1) ** (p - 2) / a}


def _draw_l2_5b(s, m):
    a1 = s.above_one(m)
    near = a1 * (1 + 0.99 * s.log_uniform(1e-4, 1.0, m) * s.rng.choice([-1, 1], m))
    return {"a1": a1, "b1": np.where(s.rng.random(m) < 0.5, s.above_one(m), near)}


def _ev_l2_5b(P, p, pool):
    a, b = 1 + P["a1"], 1 + P["b1"]
    num = np.abs(K.h_prime(b, p) * b - K.h_prime(a, p) * a)
    den = ((a - 1) ** (p - 3) + (b - 1) ** (p - 3)) * np.abs(b - a)
    return {"ratio": _ratio(num, den)}


def _hyp_l2_5b(P, p, pool):
    return (P["a1"] > 0) & (P["b1"] > 0)


def _draw_t(s, m):
    return {"t": s.mags(m)}


def _ev_l2_6a(P, p, pool):
    t = P["t"]
    return {"lhs": K.g(t, p) ** 2, "rhs": K.h(t, p) * np.maximum(t - 1, 0.0) ** p}


def _ev_l2_6b(P, p, pool):
    t = P["t"]
    lhs = K.g(t, p) ** 2 + K.g_prime(t, p) ** 2 * t ** 2
    rhs = p ** 2 / (p - 1) * (K.h(t, p) + K.h_prime(t, p) * t) * np.maximum(t - 1, 0.0) ** p
    return {"lhs": lhs, "rhs": rhs}


def _draw_l2_7(s, m):
    ids, x, G, rows = s.common(m)
    return {"metric": ids, "x": x, "rows": rows, "eps": s.eps(m), "xi": s.vec(G, s.mags(m), rows),
            "eta_a": s.operand(rows, (2, 2)), "eta_b": s.operand(rows, (2,)),
            "eta_c": s.rng.standard_normal((m, 2))}


def _hyp_l2_7(P, p, pool):
    t = norm_batch(pool.at(P["metric"], P["x"]), P["xi"])
    return (t > 0) & _gap_ok(p, t) & _unit_box(P, "eps")


def _ev_l2_7(P, p, pool):
    G = pool.at(P["metric"], P["x"])
    xi, eps = P["xi"], P["eps"]
    t = norm_batch(G, xi)
    lo = eps + K.lambda_env(t, p)
    hi = eps + K.big_lambda_env(t, p)
    lhs, rhs = [], []
    for space, fn, key in (("second_gradient", form_a_batch, "eta_a"), ("gradient", form_b_batch, "eta_b"),
                           ("spatial", form_c_batch, "eta_c")):
        eta = P[key]
        val = fn(G, xi, eta, eta, p, eps)
        sq = sq_norm_batch(G, eta, space)
        lhs += [lo * sq, val]
        rhs += [val, hi * sq]
    return {"lhs": np.stack(lhs, axis=1), "rhs": np.stack(rhs, axis=1)}


def _draw_l2_8_1(s, m):
    ids, x, G, rows = s.common(m)
    xi = s.vec(G, 1 + s.above_one(m), rows)
    return {"metric": ids, "x": x, "rows": rows, "eps": s.eps(m), "xi": xi, "xi_t": s.partner(G, xi, rows)}


def _hyp_l2_8_1(P, p, pool):
    G = pool.at(P["metric"], P["x"])
    t, tt = norm_batch(G, P["xi"]), norm_batch(G, P["xi_t"])
    return (t > 1) & _gap_ok(p, t, tt) & _unit_box(P, "eps")


def _ev_l2_8_1(P, p, pool):
    G = pool.at(P["metric"], P["x"])
    xi, xt, eps = P["xi"], P["xi_t"], P["eps"]
    t, tt = norm_batch(G, xi), norm_batch(G, xt)
    num = norm_batch(G, _a(G, xt, p, eps) - _a(G, xi, p, eps))
    den = (eps + (t - 1 + np.maximum(tt - 1, 0.0)) ** (p - 1) / (t - 1)) * _enorm(xi - xt)
    return {"ratio": _ratio(num, den)}


def _draw_l2_8_2(s, m):
    rows = s.rng.integers(1, 3, size=m)
    G = np.broadcast_to(np.eye(2), (m, 2, 2))
    xi = s.vec(G, 1 + s.above_one(m), rows)
    return {"rows": rows, "eps": s.eps(m), "xi": xi, "xi_t": s.partner(G, xi, rows)}


def _hyp_l2_8_2(P, p, pool):
    return (_enorm(P["xi"]) > 1) & _gap_ok(p, _enorm(P["xi_t"])) & _unit_box(P, "eps")


def _ev_l2_8_2(P, p, pool):
    xi, xt, eps = P["xi"], P["xi_t"], P["eps"]
    G = np.broadcast_to(np.eye(2), (len(xi), 2, 2))
    d = xt - xi
    at, a0 = _a(G, xt, p, eps), _a(G, xi, p, eps)
    lhs = eps * inner_batch(G, d, d)
    rhs = inner_batch(G, at - a0, d)
    scale = np.abs(inner_batch(G, at, d)) + np.abs(inner_batch(G, a0, d)) + lhs
    return {"lhs": lhs, "rhs": rhs, "scale": scale}


def _draw_l2_8_3(s, m):
    p = s.p
    ids, x, Gx, rows = s.common(m)
    y = s.partner_point(x)
    Gy = s.pool.at(ids, y)
    eps = s.eps(m)
    xi = s.vec(Gx, 1 + s.above_one(m), rows)
    # half the test vectors point along the difference of the two fluxes
    tx, ty = norm_batch(Gx, xi), norm_batch(Gy, xi)
    flux = (K.h(tx, p) + eps)[:, None, None] * np.einsum("mab,mib->mia", Gx, xi) \
        - (K.h(ty, p) + eps)[:, None, None] * np.einsum("mab,mib->mia", Gy, xi)
    fn = _enorm(flux)
    aligned = flux / np.where(fn > 0, fn, 1.0)[:, None, None] + 1e-3 * s.operand(rows, (2,))
    xt = np.where((s.rng.random(m) < 0.5)[:, None, None], aligned, s.operand(rows, (2,)))
    return {"metric": ids, "x": x, "y": y, "rows": rows, "eps": eps, "xi": xi,
            "xi_t": xt * s.mags(m)[:, None, None]}


def _hyp_l2_8_3(P, p, pool):
    tx = norm_batch(pool.at(P["metric"], P["x"]), P["xi"])
    ty = norm_batch(pool.at(P["metric"], P["y"]), P["xi"])
    return (tx > 1) & _gap_ok(p, tx, ty) & _unit_box(P, "eps")


def _ev_l2_8_3(P, p, pool):
    Gx, Gy = pool.at(P["metric"], P["x"]), pool.at(P["metric"], P["y"])
    xi, xt, eps = P["xi"], P["xi_t"], P["eps"]
    tx, ty = norm_batch(Gx, xi), norm_batch(Gy, xi)
    num = np.abs(inner_batch(Gx, _a(Gx, xi, p, eps), xt) - inner_batch(Gy, _a(Gy, xi, p, eps), xt))
    den = (eps + (tx - 1 + np.maximum(ty - 1, 0.0)) ** (p - 1) / (tx - 1)) \
        * np.linalg.norm(P["x"] - P["y"], axis=1) * _enorm(xi) * _enorm(xt)
    return {"ratio": _ratio(num, den)}


def _band(t, mu):
    return (t >= 1 + mu / 4) & (t <= 1 + 2 * mu)


def _banded_xi(P, G):
    """xi = (1 + s mu) dir / |dir|_gamma: the band position s is a parameter of its own,
    so the local search can move mu without leaving the band."""
    d = P["dir"]
    return ((1 + P["s"] * P["mu"]) / norm_batch(G, d))[:, None, None] * d


def _draw_banded(s, m):
    ids, x, G, rows = s.common(m)
    return {"metric": ids, "x": x, "rows": rows, "mu": s.mu(m), "s": s.rng.uniform(0.25, 2.0, m),
            "dir": s.operand(rows, (2,)), "eta": s.operand(rows, (2,)), "eps": s.eps(m)}


def _draw_l2_bfreeze(s, m):
    P = _draw_banded(s, m)
    P["y"] = s.partner_point(P["x"])
    return P


def _hyp_banded(P, p, pool):
    G = pool.at(P["metric"], P["x"])
    ok = (norm_batch(G, P["dir"]) > 0) & (P["mu"] > 0) & (P["s"] >= 0.25) & (P["s"] <= 2) & _unit_box(P, "eps")
    return ok & _band(norm_batch(G, _banded_xi(P, G)), P["mu"])


def _hyp_l2_bfreeze(P, p, pool):
    Gx, Gy = pool.at(P["metric"], P["x"]), pool.at(P["metric"], P["y"])
    with np.errstate(all="ignore"):
        xi = _banded_xi(P, Gx)
        tx, ty = norm_batch(Gx, xi), norm_batch(Gy, xi)
    return _hyp_banded(P, p, pool) & _band(ty, P["mu"]) & _gap_ok(p, tx, ty)


def _ev_l2_bfreeze(P, p, pool):
    Gx, Gy = pool.at(P["metric"], P["x"]), pool.at(P["metric"], P["y"])
    xi = _banded_xi(P, Gx)
    eta, eps, mu = P["eta"], P["eps"], P["mu"]
    num = np.abs(form_b_batch(Gx, xi, xi, eta, p, eps) - form_b_batch(Gy, xi, xi, eta, p, eps))
    den = (eps + mu ** (p - 2)) * np.linalg.norm(P["x"] - P["y"], axis=1) * _enorm(xi) ** 2 * _enorm(eta)
    return {"ratio": _ratio(num, den)}


def _draw_l2_9(s, m):
    P = _draw_pair(s, m)
    P["xi_t"] = P.pop("eta")
    P["eps"] = s.eps(m, positive=True)
    P["delta"] = s.delta(m, positive=True, default=L2_9_DELTA)
    return P


def _hyp_l2_9(P, p, pool):
    return (P["eps"] > 0) & (P["delta"] > 0) & _unit_box(P, "eps", "delta")


def _ev_l2_9(P, p, pool):
    G = pool.at(P["metric"], P["x"])
    xi, xt, eps, delta = P["xi"], P["xi_t"], P["eps"], P["delta"]
    d = xi - xt
    dg = K.truncate_batch(G, xi, delta) - K.truncate_batch(G, xt, delta)
    se = np.sqrt(eps)
    lhs = se * inner_batch(G, d, d) + norm_batch(G, dg) ** p
    excess = np.maximum(lhs - se * inner_batch(G, xi, xi), 0.0)
    mono = inner_batch(G, _a(G, xt, p, eps) - _a(G, xi, p, eps), xt - xi) / se
    return {"ratio": _ratio(excess, mono)}


def _draw_l2_10(s, m):
    P = _draw_banded(s, m)
    G = s.pool.at(P["metric"], P["x"])
    xi, mu, rows = _banded_xi(P, G), P["mu"], P["rows"]
    # xi_t = xi + mu w: either anywhere in the ball of radius 1 + 2 mu, or close to xi
    indep = s.vec(G, s.rng.uniform(0.0, 1 + 2 * mu), rows)
    local = xi + s.vec(G, s.log_uniform(1e-4, 1.0, m) * mu, rows)
    xt = s.guard_vec(G, np.where((s.rng.random(m) < 0.5)[:, None, None], indep, local))
    P["w"] = (xt - xi) / mu[:, None, None]
    return P


def _hyp_l2_10(P, p, pool):
    G = pool.at(P["metric"], P["x"])
    with np.errstate(all="ignore"):
        xi = _banded_xi(P, G)
        t, tt = norm_batch(G, xi), norm_batch(G, xi + P["mu"][:, None, None] * P["w"])
    return _hyp_banded(P, p, pool) & (tt <= 1 + 2 * P["mu"]) & _gap_ok(p, t, tt)


def _ev_l2_10(P, p, pool):
    G = pool.at(P["metric"], P["x"])
    eta, eps, mu = P["eta"], P["eps"], P["mu"]
    xi = _banded_xi(P, G)
    xt = xi + mu[:, None, None] * P["w"]
    lin = form_b_batch(G, xi, xt - xi, eta, p, eps)
    diff = inner_batch(G, _a(G, xt, p, eps) - _a(G, xi, p, eps), eta)
    den = mu ** (p - 3) * _enorm(xt - xi) ** 2 * _enorm(eta)
    return {"ratio": _ratio(np.abs(lin - diff), den)}


# --- the second-derivative estimate ------------------------------------------

_FD4 = ((-2, 1.0 / 12), (-1, -8.0 / 12), (1, 8.0 / 12), (2, -1.0 / 12))


def _w_field(G, grad, p):
    t = norm_batch(G, grad)
    return K.g(t, p)[..., None, None] * grad


def l2_11_sides(metric_fn: Callable, grad_fn: Callable, hess, x0, p, eps, step):
    """(LHS, RHS, |Dv|_gamma) of the second-derivative estimate at the points ``x0``.

    ``metric_fn(points)`` and ``grad_fn(points)`` are evaluated at shifted
    copies of ``x0`` (one point per sample); ``hess`` holds D^2 v(x0) with
    layout ``[i, a, nu]``.  D[g(|Dv|) Dv] is taken by fourth-order central
    differences with per-sample step ``step``.
    """
    x0 = np.asarray(x0, dtype=float)
    G0 = metric_fn(x0)
    grad0 = grad_fn(x0)
    t = norm_batch(G0, grad0)
    lhs = np.zeros(len(x0))
    for sdir in range(x0.shape[1]):
        acc = 0.0
        for k, wgt in _FD4:
            xs = x0.copy()
            xs[:, sdir] += k * step
            acc = acc + wgt * _w_field(metric_fn(xs), grad_fn(xs), p)
        d = acc / step[:, None, None]
        lhs += np.sum(d.reshape(len(x0), -1) ** 2, axis=1)
    form = form_a_batch(G0, grad0, hess, hess, p, eps)
    rhs = form * np.maximum(t - 1, 0.0) ** p + K.g_prime(t, p) ** 2 * t ** 4
    return lhs, rhs, t


def _fd_step(t, hess, c2=10.0):
    """Small enough that |Dv|_gamma stays on one side of 1 across the stencil."""
    hn = _enorm(hess)
    return np.minimum(1e-3, 0.1 * np.abs(t - 1) / (2 * (hn + c2 * t + 1.0)))


def _draw_l2_11(s, m):
    ids, x, G, rows = s.common(m, margin=0.05)
    H = s.operand(rows, (2, 2))
    H = 0.5 * (H + np.swapaxes(H, -1, -2))
    H *= (s.log_uniform(1e-2, 1e2, m) / np.maximum(_enorm(H), 1e-300))[:, None, None, None]
    return {"metric": ids, "x": x, "rows": rows, "grad": s.vec(G, s.mags(m), rows), "hess": H, "eps": s.eps(m)}


def _hyp_l2_11(P, p, pool):
    t = norm_batch(pool.at(P["metric"], P["x"]), P["grad"])
    x = P["x"]
    inside = np.all((x >= 0.05) & (x <= 0.95), axis=1)
    return (np.abs(t - 1) >= L2_11_GAP) & inside & _unit_box(P, "eps")


def _ev_l2_11(P, p, pool):
    ids, x0, A, H = P["metric"], P["x"], P["grad"], P["hess"]
    t0 = norm_batch(pool.at(ids, x0), A)

    def grad_fn(pts):
        return A + np.einsum("mian,mn->mia", H, pts - x0)

    lhs, rhs, _ = l2_11_sides(lambda pts: pool.at(ids, pts), grad_fn, H, x0, p, P["eps"], _fd_step(t0, H))
    return {"ratio": _ratio(lhs, rhs)}


def _always(P, p, pool):
    return np.ones(len(next(iter(P.values()))), dtype=bool)


_PT = ("pt", 0.0, 1.0)
_VEC = ("vec",)
_EPS = ("box", 0.0, 1.0)
_MU = ("log",) + MU_RANGE
_OFFSET = ("log", 1e-12, 1e4)
_BAND = ("box", 0.25, 2.0)

_LEMMAS = {
    "L2_1": _Lemma(_draw_pair, _ev_l2_1, _hyp_nonzero, {"x": _PT, "xi": _VEC, "eta": _VEC}),
    "L2_2": _Lemma(_draw_l2_2, _ev_l2_2, _hyp_nonzero,
                   {"x": _PT, "xi": _VEC, "eta": _VEC, "alpha": ("box", 0.25, 3.0)}),
    "L2_3a": _Lemma(_draw_l2_3a, _ev_l2_3a, _hyp_l2_3a,
                    {"x": _PT, "xi": _VEC, "eta": _VEC, "delta": ("box", 0.0, 1.0)}),
    "L2_3b": _Lemma(_draw_l2_3b, _ev_l2_3b, _hyp_l2_3b,
                    {"x": _PT, "xi": _VEC, "eta": _VEC, "delta": ("box", 1e-12, 1.0)}),
    "L2_4": _Lemma(_draw_l2_4, _ev_l2_4, _hyp_l2_4, {"a1": _OFFSET, "b": ("log", 1e-12, 1e4)}),
    "L2_5a": _Lemma(_draw_l2_5a, _ev_l2_5a, _always, {}),
    "L2_5b": _Lemma(_draw_l2_5b, _ev_l2_5b, _hyp_l2_5b, {"a1": _OFFSET, "b1": _OFFSET}),
    "L2_6a": _Lemma(_draw_t, _ev_l2_6a, _always, {}),
    "L2_6b": _Lemma(_draw_t, _ev_l2_6b, _always, {}),
    "L2_7": _Lemma(_draw_l2_7, _ev_l2_7, _hyp_l2_7, {}),
    "L2_8_1": _Lemma(_draw_l2_8_1, _ev_l2_8_1, _hyp_l2_8_1, {"x": _PT, "eps": _EPS, "xi": _VEC, "xi_t": _VEC}),
    "L2_8_2": _Lemma(_draw_l2_8_2, _ev_l2_8_2, _hyp_l2_8_2, {}),
    "L2_8_3": _Lemma(_draw_l2_8_3, _ev_l2_8_3, _hyp_l2_8_3,
                     {"x": _PT, "y": _PT, "eps": _EPS, "xi": _VEC, "xi_t": _VEC}),
    "L2_Bfreeze": _Lemma(_draw_l2_bfreeze, _ev_l2_bfreeze, _hyp_l2_bfreeze,
                         {"x": _PT, "y": _PT, "mu": _MU, "s": _BAND, "eps": _EPS, "dir": _VEC, "eta": _VEC}),
    "L2_9": _Lemma(_draw_l2_9, _ev_l2_9, _hyp_l2_9,
                   {"x": _PT, "eps": ("box", 1e-12, 1.0), "xi": _VEC, "xi_t": _VEC}),
    "L2_10": _Lemma(_draw_l2_10, _ev_l2_10, _hyp_l2_10,
                    {"x": _PT, "mu": _MU, "s": _BAND, "eps": _EPS, "dir": _VEC, "w": _VEC, "eta": _VEC}),
    "L2_11": _Lemma(_draw_l2_11, _ev_l2_11, _hyp_l2_11,
                    {"x": ("pt", 0.05, 0.95), "grad": _VEC, "hess": ("sym",), "eps": _EPS}),
}


# --- drivers -----------------------------------------------------------------

def _size(P):
    return len(next(iter(P.values())))


def _take(P, idx):
    return {k: v[idx] for k, v in P.items()}


def _draw(lemma: _Lemma, s: _Sampler, m: int, what: str) -> dict:
    """Draw ``m`` admissible samples, topping up rejected ones."""
    parts, have = [], 0
    for _ in range(200):
        batch = lemma.draw(s, max(2 * (m - have), 64) if have else m)
        ok = lemma.hyp(batch, s.p, s.pool)
        if np.any(ok):
            parts.append(_take(batch, ok))
            have += int(ok.sum())
        if have >= m:
            break
    else:
        raise RuntimeError(f"sampler unable to satisfy the hypotheses of {what}")
    P = {k: np.concatenate([q[k] for q in parts])[:m] for k in parts[0]}
    _require(lemma.hyp(P, s.p, s.pool), what)
    return P


def _perturb(P, kinds, sigma, rng):
    """Move every sample by a step of relative size ``sigma`` (one value per
    sample) in a random subset of its parameters."""
    out = dict(P)
    m = _size(P)
    keys = list(kinds)
    pick = rng.random((len(keys), m)) < 0.5
    pick[rng.integers(len(keys), size=m), np.arange(m)] = True
    for j, key in enumerate(keys):
        kind, v = kinds[key], P[key]
        sig = np.where(pick[j], sigma, 0.0)
        col = sig.reshape((-1,) + (1,) * (v.ndim - 1))
        if kind[0] in ("vec", "sym"):
            z = rng.standard_normal(v.shape)
            z[P["rows"] == 1, 1] = 0.0
            if kind[0] == "sym":
                z = 0.5 * (z + np.swapaxes(z, -1, -2))
            size = (_enorm(v) + 1e-12) / np.sqrt(v[0].size)
            out[key] = v + col * size.reshape(col.shape) * z
        elif kind[0] == "pt":
            out[key] = np.clip(v + 0.1 * col * rng.standard_normal(v.shape), kind[1], kind[2])
        elif kind[0] == "log":
            out[key] = np.clip(v * np.exp(sig * rng.standard_normal(m)), kind[1], kind[2])
        elif kind[0] == "box":
            step = sig * np.maximum(np.abs(v), 1e-6) * rng.standard_normal(m)
            out[key] = np.clip(v + step, kind[1], kind[2])
    return out


def _polish(lemma: _Lemma, P, ratio, p, pool, rng, starts=POLISH_STARTS, rounds=POLISH_ROUNDS):
    """(1+1) evolution strategy from the best samples, with the one-fifth step
    rule; returns (params, ratios) of the climbers."""
    r = np.where(np.isnan(ratio), -np.inf, ratio)
    order = np.argsort(-r, kind="stable")[:starts]
    cur, cur_r = _take(P, order), r[order]
    live = np.isfinite(cur_r)
    if not lemma.kinds or not np.any(live):
        return cur, cur_r
    sigma = np.full(len(order), SIGMA_START)
    for _ in range(rounds):
        trial = _perturb(cur, lemma.kinds, sigma, rng)
        with np.errstate(all="ignore"):
            ok = lemma.hyp(trial, p, pool)
            tr = lemma.evaluate(trial, p, pool)["ratio"]
        better = ok & live & np.isfinite(tr) & (tr > cur_r)
        for key in cur:
            cur[key] = np.where(better.reshape((-1,) + (1,) * (cur[key].ndim - 1)), trial[key], cur[key])
        cur_r = np.where(better, tr, cur_r)
        sigma = np.clip(np.where(better, sigma * 1.5, sigma * 1.5 ** -0.25), SIGMA_MIN, 1.0)
    return cur, cur_r


def _pick(P, k):
    out = {}
    for key, arr in P.items():
        v = np.asarray(arr)[k]
        if np.ndim(v):
            out[key] = v.tolist()
        elif np.issubdtype(v.dtype, np.integer):
            out[key] = int(v)
        else:
            out[key] = float(v)
    return out


def sample_lemma(case: LemmaCase, m: int, seed: int = 0):
    """Draw ``m`` admissible samples; returns (parameters, evaluation)."""
    lemma = _LEMMAS[case.id]
    s = _Sampler(case, np.random.default_rng(seed), _Pool(case.metrics))
    P = _draw(lemma, s, m, case.id)
    with np.errstate(all="ignore"):
        return P, lemma.evaluate(P, case.p, s.pool)


def hypotheses_hold(case: LemmaCase, params: dict) -> np.ndarray:
    """Admissibility mask of the parameters of one lemma."""
    return _LEMMAS[case.id].hyp(params, case.p, _Pool(case.metrics))


def evaluate_lemma(case: LemmaCase, params: dict) -> dict:
    with np.errstate(all="ignore"):
        return _LEMMAS[case.id].evaluate(params, case.p, _Pool(case.metrics))


def _exact_report(case, P, res, samples, rtol):
    lhs, rhs = res["lhs"], res["rhs"]
    scale = res.get("scale", np.maximum(np.abs(lhs), np.abs(rhs)))
    bad = (lhs - rhs > rtol * scale) | ~np.isfinite(lhs) | ~np.isfinite(rhs)
    ratio = _ratio(lhs, rhs).reshape(len(lhs), -1)
    r = np.where(np.isfinite(ratio), ratio, -np.inf).max(axis=1)
    k = int(np.argmax(r))
    worst = _pick(P, k)
    worst.update(lhs=np.asarray(lhs[k]).tolist(), rhs=np.asarray(rhs[k]).tolist())
    c = float(r[k]) if np.isfinite(r[k]) else 0.0
    return LemmaReport(case.id, "exact", samples, int(bad.sum()), c, worst, True, case.p)


def _sup(case, P, ratio, seed):
    """Supremum estimate over the samples ``P``: (value, worst parameters)."""
    pool = _Pool(case.metrics)
    Q, qr = _polish(_LEMMAS[case.id], P, ratio, case.p, pool, np.random.default_rng([seed, 1]))
    k = int(np.argmax(qr))
    c = float(qr[k])
    return (c if c > -np.inf else 0.0), _pick(Q, k)


def _stable(a, b):
    if not (np.isfinite(a) and np.isfinite(b)):
        return False
    top = max(a, b)
    return bool(top == 0 or abs(b - a) < STABLE_DRIFT * top)


def run_lemma(case: LemmaCase, budget: int = 1000, seed: int = 0, rtol: float = EXACT_RTOL) -> LemmaReport:
    """Check one lemma.

    Exact mode draws ``budget`` samples and counts violations of LHS <= RHS.
    Ratio mode draws ``2 * budget`` samples from one stream; ``c_emp`` is the
    supremum estimate (draws plus local search) over all of them, and
    ``stable`` compares it with the estimate from the first ``budget``.
    """
    if isinstance(case, str):
        case = LemmaCase(case)
    if budget < 1000:
        raise ValueError("budget must be at least 1000")
    if case.mode == "exact":
        P, res = sample_lemma(case, budget, seed)
        return _exact_report(case, P, res, budget, rtol)
    P, res = sample_lemma(case, 2 * budget, seed)
    ratio = res["ratio"]
    c_half, _ = _sup(case, _take(P, slice(0, budget)), ratio[:budget], seed)
    c_all, worst = _sup(case, P, ratio, seed)
    # the first half is a subset of the whole, so its estimate is a lower bound
    c_all = max(c_all, c_half)
    infinite = int(np.sum(np.isposinf(ratio)))
    return LemmaReport(case.id, "ratio", 2 * budget, infinite, c_all, worst, _stable(c_half, c_all), case.p, c_half)


@dataclass
class ConstantCurve:
    id: str
    budgets: list
    c_emp: list

    @property
    def stable(self) -> bool:
        return _stable(self.c_emp[-2], self.c_emp[-1])


def estimate_constant(case: LemmaCase, budgets, seed: int = 0) -> ConstantCurve:
    """Supremum estimates on growing prefixes of one sample stream (a running maximum)."""
    if isinstance(case, str):
        case = LemmaCase(case)
    if case.mode != "ratio":
        raise ValueError(f"{case.id} is an exact-mode lemma; there is no constant to estimate")
    budgets = [int(b) for b in budgets]
    if len(budgets) < 2 or any(b2 <= b1 for b1, b2 in zip(budgets, budgets[1:])):
        raise ValueError("budgets must be an increasing list of at least two entries")
    P, res = sample_lemma(case, budgets[-1], seed)
    vals = [_sup(case, _take(P, slice(0, b)), res["ratio"][:b], seed)[0] for b in budgets]
    return ConstantCurve(case.id, budgets, np.maximum.accumulate(vals).tolist())


@dataclass
class TestField:
    """Smooth map v on a disc patch, given through its first and second derivatives.

    ``grad(points)`` returns ``(..., N, n)`` and ``hess(points)`` ``(..., N, n, n)``.
    """

    __test__ = False

    grad: Callable
    hess: Callable
    center: tuple = (0.5, 0.5)
    radius: float = 0.25


def _patch_points(field_: TestField, k):
    c = np.asarray(field_.center, dtype=float)
    g = np.linspace(-field_.radius, field_.radius, k)
    pts = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(-1, 2)
    pts = pts[np.linalg.norm(pts, axis=1) <= field_.radius] + c
    return pts[np.all((pts > 0) & (pts < 1), axis=1)]


def check_l2_11(test_field: TestField, p: float, eps: float = 0.0, metric: MetricField | None = None,
                points: int = 15) -> LemmaReport:
    """Pointwise ratio of the second-derivative estimate on a patch, at two refinements."""
    metric = metric or identity(2)
    out = []
    for k in (points, 2 * points - 1):
        x0 = _patch_points(test_field, k)
        G0 = metric.sample(x0)
        grad0 = np.asarray(test_field.grad(x0), dtype=float)
        t0 = norm_batch(G0, grad0)
        if np.any(np.abs(t0 - 1) < L2_11_GAP):
            raise ValueError("test field reaches |Dv|_gamma = 1 on the patch")
        H = np.asarray(test_field.hess(x0), dtype=float)
        step = _fd_step(t0, H, max(metric.c2, 1.0))
        lhs, rhs, _ = l2_11_sides(metric.sample, test_field.grad, H, x0, p, np.full(len(x0), eps), step)
        r = _ratio(lhs, rhs)
        out.append((x0, np.where(np.isnan(r), 0.0, r)))
    k = int(np.argmax(out[1][1]))
    c_half, c_all = float(out[0][1].max()), float(out[1][1][k])
    infinite = int(np.sum(np.isposinf(out[1][1])))
    return LemmaReport("L2_11", "ratio", len(out[0][0]) + len(out[1][0]), infinite, c_all,
                       {"x": out[1][0][k].tolist()}, _stable(c_half, c_all), p, c_half)
