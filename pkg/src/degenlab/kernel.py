"""Scalar kernels of the degenerate integrand and the maps built from them.

With ``t`` a gamma-norm of a gradient:

    h(t) = (t-1)_+^{p-1} / t          g(t) = (t-1)_+^p / t
    F(t) = (t-1)_+^p / p              H(s) = s + s^q / q,  1/p + 1/q = 1

All scalar functions are vectorized over ``t`` and vanish for ``t <= 1``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .metric import MetricField, as_gamma_vector, metric_eval, norm_batch


@dataclass(frozen=True)
class KernelParams:
    p: float
    eps: float = 0.0
    delta: float = 0.0

    def __post_init__(self):
        if not self.p > 1:
            raise ValueError(f"p must exceed 1, got {self.p}")
        if not 0 <= self.eps <= 1:
            raise ValueError(f"eps must lie in [0, 1], got {self.eps}")
        if not 0 <= self.delta <= 1:
            raise ValueError(f"delta must lie in [0, 1], got {self.delta}")


@dataclass
class KernelValues:
    h: float
    h_prime: float
    g: float
    g_prime: float
    f_integrand: float
    lambda_env: float
    big_lambda_env: float


def _excess(t):
    t = np.asarray(t, dtype=float)
    return t, np.maximum(t - 1.0, 0.0), t > 1.0


def _safe(t):
    return np.where(t > 0, t, 1.0)


def h(t, p):
    t, s, live = _excess(t)
    return np.where(live, s ** (p - 1) / _safe(t), 0.0)


def h_prime(t, p):
    """Derivative of h; zero for t < 1, +inf at t == 1 when p < 2, else the t <= 1 branch."""
    t, s, live = _excess(t)
    with np.errstate(divide="ignore", invalid="ignore"):
        val = np.where(live, (p - 1) * s ** (p - 2) / _safe(t) - s ** (p - 1) / _safe(t) ** 2, 0.0)
    if p < 2:
        val = np.where(t == 1.0, np.inf, val)
    return val


def g(t, p):
    t, s, live = _excess(t)
    return np.where(live, s ** p / _safe(t), 0.0)


def g_prime(t, p):
    t, s, live = _excess(t)
    return np.where(live, p * s ** (p - 1) / _safe(t) - s ** p / _safe(t) ** 2, 0.0)


def f_integrand(t, p):
    _, s, _ = _excess(t)
    return s ** p / p


def f_prime(t, p):
    _, s, _ = _excess(t)
    return s ** (p - 1)


def stiffness(t, p):
    """(p-1)(t-1)^{p-2} for t > 1, which equals h(t) + h'(t) t there; 0 otherwise."""
    t, s, live = _excess(t)
    with np.errstate(divide="ignore"):
        return np.where(live, (p - 1) * np.where(live, s, 1.0) ** (p - 2), 0.0)


def lambda_env(t, p):
    t = np.asarray(t, dtype=float)
    return np.where(t > 1, np.minimum(h(t, p), stiffness(t, p)), 0.0)


def big_lambda_env(t, p):
    t = np.asarray(t, dtype=float)
    return np.where(t > 1, np.maximum(h(t, p), stiffness(t, p)), 0.0)


def _check_nonneg(t, what="t"):
    if np.any(np.asarray(t) < 0):
        raise ValueError(f"{what} must be nonnegative")


def eval_kernels(t, params: KernelParams) -> KernelValues:
    _check_nonneg(t)
    p = params.p
    vals = [h(t, p), h_prime(t, p), g(t, p), g_prime(t, p), f_integrand(t, p),
            lambda_env(t, p), big_lambda_env(t, p)]
    if np.ndim(t) == 0:
        vals = [float(v) for v in vals]
    return KernelValues(*vals)


def conjugate_h(s, p):
    """Convex conjugate of F on s >= 0: s + s^q / q."""
    _check_nonneg(s, "s")
    if not p > 1:
        raise ValueError("p must exceed 1")
    q = p / (p - 1)
    s = np.asarray(s, dtype=float)
    out = s + s ** q / q
    return float(out) if out.ndim == 0 else out


# --- maps on R^{nN} ---------------------------------------------------------
# Batched forms take G of shape (..., n, n) and xi of shape (..., N, n).

def truncate_batch(G, xi, delta):
    t = norm_batch(G, xi)
    factor = np.where(t > 0, np.maximum(t - 1.0 - delta, 0.0) / np.where(t > 0, t, 1.0), 0.0)
    return factor[..., None, None] * xi


def a_field_batch(G, xi, p, eps):
    t = norm_batch(G, xi)
    return (h(t, p) + eps)[..., None, None] * xi


def _reshape_like(out, xi):
    return out.reshape(np.shape(xi))


def truncated_gradient(m: MetricField, x, xi, delta: float):
    """(|xi| - 1 - delta)_+ / |xi| * xi in the gamma(x) norm; zero at xi = 0."""
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    v = as_gamma_vector(xi, m.dim_n)
    return _reshape_like(truncate_batch(metric_eval(m, x), v, delta), xi)


def vector_field_a(m: MetricField, x, xi, params: KernelParams):
    v = as_gamma_vector(xi, m.dim_n)
    return _reshape_like(a_field_batch(metric_eval(m, x), v, params.p, params.eps), xi)


def identity_check_g_pow(m: MetricField, x, xi, p) -> float:
    """Max-norm of g(|xi|) xi - |G(x, xi)|^{p-1} G(x, xi)."""
    v = as_gamma_vector(xi, m.dim_n)
    G = metric_eval(m, x)
    t = norm_batch(G, v)
    lhs = g(t, p) * v
    trunc = truncate_batch(G, v, 0.0)
    rhs = norm_batch(G, trunc) ** (p - 1) * trunc
    return float(np.abs(lhs - rhs).max())
