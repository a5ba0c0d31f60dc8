"""The bilinear forms A_eps, B_eps, C_eps and their two-sided envelopes.

All three share the coefficient structure

    h_eps(t) <.,.>_gamma  +  h'(t) t * (rank-one part) / t^2,   t = |xi|_gamma

with the rank-one part built from ``w^i_a = gamma_ab xi^i_b``.  All three
divide it by ``t^2``, the normalization under which the envelope bounds hold.
On the degenerate set ``t <= 1`` the rank-one part is dropped.

Operand layouts: second-gradient ``(N, n, n)`` indexed ``[i, a, nu]``,
gradient ``(N, n)``, spatial ``(n,)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh

from .kernel import KernelParams, big_lambda_env, h, h_prime, lambda_env
from .metric import MetricField, as_gamma_vector, inner_batch, metric_eval, norm_batch

SPACES = ("second_gradient", "gradient", "spatial")


@dataclass
class FormOperand:
    space_tag: str
    entries: np.ndarray

    def __post_init__(self):
        if self.space_tag not in SPACES:
            raise ValueError(f"unknown space {self.space_tag!r}")
        self.entries = np.asarray(self.entries, dtype=float)


def coefficients(G, xi, p, eps):
    """Return (t, h_eps(t), h'(t)/t, w) for batched G, xi."""
    t = norm_batch(G, xi)
    live = t > 1
    with np.errstate(divide="ignore", invalid="ignore"):
        rank = np.where(live, h_prime(np.where(live, t, 2.0), p) / np.where(live, t, 1.0), 0.0)
    w = np.einsum("...ab,...ib->...ia", G, xi)
    return t, h(t, p) + eps, rank, w


def form_b_batch(G, xi, eta, zeta, p, eps):
    _, he, c, w = coefficients(G, xi, p, eps)
    wa = np.einsum("...ia,...ia->...", w, eta)
    wb = np.einsum("...ia,...ia->...", w, zeta)
    return he * inner_batch(G, eta, zeta) + c * wa * wb


def form_a_batch(G, xi, eta, zeta, p, eps):
    _, he, c, w = coefficients(G, xi, p, eps)
    base = np.einsum("...ab,...ns,...ian,...ibs->...", G, G, eta, zeta)
    a = np.einsum("...ia,...ian->...n", w, eta)
    b = np.einsum("...ia,...ian->...n", w, zeta)
    return he * base + c * np.einsum("...ns,...n,...s->...", G, a, b)


def form_c_batch(G, xi, eta, zeta, p, eps):
    _, he, c, w = coefficients(G, xi, p, eps)
    base = np.einsum("...ab,...a,...b->...", G, eta, zeta)
    return he * base + c * np.einsum("...ia,...a,...ib,...b->...", w, eta, w, zeta)


def sq_norm_batch(G, eta, space):
    if space == "second_gradient":
        return np.einsum("...ab,...ns,...ian,...ibs->...", G, G, eta, eta)
    if space == "gradient":
        return inner_batch(G, eta, eta)
    return np.einsum("...ab,...a,...b->...", G, eta, eta)


_BATCH = {"second_gradient": form_a_batch, "gradient": form_b_batch, "spatial": form_c_batch}


def _operand(op, space, n, big_n):
    arr = op.entries if isinstance(op, FormOperand) else np.asarray(op, dtype=float)
    if isinstance(op, FormOperand) and op.space_tag != space:
        raise ValueError(f"operand lives in {op.space_tag}, form expects {space}")
    shape = {"second_gradient": (big_n, n, n), "gradient": (big_n, n), "spatial": (n,)}[space]
    if arr.size != int(np.prod(shape)):
        raise ValueError(f"{space} operand needs {int(np.prod(shape))} entries, got {arr.size}")
    return arr.reshape(shape)


def _prepare(m, x, xi, params):
    v = as_gamma_vector(xi, m.dim_n)
    G = metric_eval(m, x)
    t = float(norm_batch(G, v))
    if t == 0.0:
        raise ValueError("the forms are defined for xi != 0")
    if params.p < 2 and t == 1.0:
        raise ValueError("for 1 < p < 2 the forms are undefined at |xi|_gamma = 1")
    return G, v


def _form(space, m, x, xi, params, eta, zeta):
    G, v = _prepare(m, x, xi, params)
    n, big_n = m.dim_n, v.shape[0]
    e = _operand(eta, space, n, big_n)
    z = _operand(zeta, space, n, big_n)
    return float(_BATCH[space](G, v, e, z, params.p, params.eps))


def form_a(m: MetricField, x, xi, params: KernelParams, eta, zeta) -> float:
    return _form("second_gradient", m, x, xi, params, eta, zeta)


def form_b(m: MetricField, x, xi, params: KernelParams, eta, zeta) -> float:
    return _form("gradient", m, x, xi, params, eta, zeta)


def form_c(m: MetricField, x, xi, params: KernelParams, eta, zeta) -> float:
    return _form("spatial", m, x, xi, params, eta, zeta)


def form_matrices(G, xi, p, eps):
    """Dense (form, Gram) matrix pairs for one (G, xi), keyed by space."""
    _, he, c, w = coefficients(G, xi, p, eps)
    he, c = float(he), float(c)
    big_n, n = xi.shape
    eye = np.eye(big_n)
    wf = w.reshape(-1)
    gram_b = np.kron(eye, G)
    gram_a = np.kron(eye, np.kron(G, G))
    rank_a = np.einsum("ia,jb,ns->ianjbs", w, w, G).reshape(big_n * n * n, big_n * n * n)
    return {
        "second_gradient": (he * gram_a + c * rank_a, gram_a),
        "gradient": (he * gram_b + c * np.outer(wf, wf), gram_b),
        "spatial": (he * G + c * w.T @ w, G),
    }


@dataclass
class EnvelopeReport:
    samples: int
    violations: int
    lower: float
    upper: float
    min_ratio_low: float
    max_ratio_high: float
    per_form: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.violations == 0


def envelope_flags(ratio, lower, upper, rtol=1e-10):
    """Boolean mask of envelope violations at relative tolerance ``rtol``."""
    low_bad = ratio < lower - rtol * np.maximum(np.abs(lower), np.abs(ratio))
    high_bad = ratio > upper + rtol * np.maximum(np.abs(upper), np.abs(ratio))
    return low_bad | high_bad


def envelope_check(m: MetricField, x, xi, params: KernelParams, samples: int = 1000,
                   seed: int = 0, rtol: float = 1e-10) -> EnvelopeReport:
    """Two-sided envelope of all three forms over random operands.

    Extremal ratios are also computed exactly from the generalized
    eigenvalues of each form against its Gram matrix and folded into the
    reported extremes.
    """
    G, v = _prepare(m, x, xi, params)
    big_n, n = v.shape
    t = float(norm_batch(G, v))
    lower = params.eps + float(lambda_env(t, params.p))
    upper = params.eps + float(big_lambda_env(t, params.p))
    rng = np.random.default_rng(seed)
    shapes = {"second_gradient": (big_n, n, n), "gradient": (big_n, n), "spatial": (n,)}
    mats = form_matrices(G, v, params.p, params.eps)

    total_bad = 0
    lo_all, hi_all = np.inf, -np.inf
    per_form = {}
    for space, shape in shapes.items():
        eta = rng.standard_normal((samples,) + shape)
        val = _BATCH[space](G, v, eta, eta, params.p, params.eps)
        ratio = val / sq_norm_batch(G, eta, space)
        eig = eigh(*mats[space], eigvals_only=True)
        ratio = np.concatenate([ratio, eig])
        bad = int(envelope_flags(ratio, lower, upper, rtol).sum())
        per_form[space] = {"violations": bad, "min": float(ratio.min()), "max": float(ratio.max()),
                           "eig_min": float(eig.min()), "eig_max": float(eig.max())}
        total_bad += bad
        lo_all = min(lo_all, float(ratio.min()))
        hi_all = max(hi_all, float(ratio.max()))
    return EnvelopeReport(samples=samples, violations=total_bad, lower=lower, upper=upper,
                          min_ratio_low=lo_all, max_ratio_high=hi_all, per_form=per_form)
