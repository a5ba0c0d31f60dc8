"""Coefficient fields gamma(x) and the inner products they induce.

A gradient-like vector xi in R^{nN} is stored as an array of shape ``(N, n)``
with ``xi[i, a]`` the derivative of component ``i`` in direction ``a``.  Flat
vectors of length ``n*N`` are accepted everywhere and reshaped row-major.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

_DOMAIN_SLACK = 1e-12


@dataclass(frozen=True)
class MetricField:
    """Symmetric coercive n x n matrix field on the box ``[lower, upper]^n``.

    ``entries`` maps points of shape ``(..., n)`` to matrices ``(..., n, n)``.
    ``c0``/``c1`` are the declared ellipticity bounds, ``c2`` the declared
    Lipschitz bound on the entries.
    """

    dim_n: int
    entries: Callable[[np.ndarray], np.ndarray]
    c0: float
    c1: float
    c2: float
    name: str = "custom"
    params: tuple = ()
    lower: float = 0.0
    upper: float = 1.0
    constant: bool = field(default=False, compare=False)

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.all((x >= self.lower - _DOMAIN_SLACK) & (x <= self.upper + _DOMAIN_SLACK), axis=-1)

    def sample(self, points) -> np.ndarray:
        """Matrices at a batch of points, shape ``points.shape[:-1] + (n, n)``."""
        pts = np.asarray(points, dtype=float)
        if pts.shape[-1] != self.dim_n:
            raise ValueError(f"points must have trailing dimension {self.dim_n}, got {pts.shape}")
        want = pts.shape[:-1] + (self.dim_n, self.dim_n)
        try:
            out = np.asarray(self.entries(pts), dtype=float)
        except (ValueError, TypeError, IndexError):
            out = None
        if out is not None and out.shape == want:
            return out
        # closure is not vectorized: evaluate pointwise
        flat = pts.reshape(-1, self.dim_n)
        mats = np.array([np.asarray(self.entries(q), dtype=float) for q in flat])
        return mats.reshape(want)


def as_gamma_vector(xi, n: int) -> np.ndarray:
    """Return ``xi`` as an ``(N, n)`` array; raises on a length not divisible by n."""
    arr = np.asarray(xi, dtype=float)
    if arr.ndim == 1:
        if arr.size == 0 or arr.size % n:
            raise ValueError(f"vector of length {arr.size} is not of the form n*N with n={n}")
        return arr.reshape(-1, n)
    if arr.ndim == 2 and arr.shape[1] == n:
        return arr
    raise ValueError(f"expected a flat vector or an (N, {n}) array, got shape {arr.shape}")


def metric_eval(m: MetricField, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (m.dim_n,):
        raise ValueError(f"point must have shape ({m.dim_n},), got {x.shape}")
    if not m.contains(x):
        raise ValueError(f"point {x} lies outside the domain [{m.lower}, {m.upper}]^{m.dim_n}")
    return m.sample(x[None, :])[0]


def inner_batch(G, xi, eta) -> np.ndarray:
    """sum_i sum_ab G_ab xi^i_a eta^i_b over leading batch axes."""
    return np.einsum("...ab,...ia,...ib->...", G, xi, eta)


def norm_batch(G, xi) -> np.ndarray:
    return np.sqrt(np.maximum(inner_batch(G, xi, xi), 0.0))


def gamma_inner(m: MetricField, x, xi, eta) -> float:
    a = as_gamma_vector(xi, m.dim_n)
    b = as_gamma_vector(eta, m.dim_n)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(inner_batch(metric_eval(m, x), a, b))


def gamma_norm(m: MetricField, x, xi) -> float:
    a = as_gamma_vector(xi, m.dim_n)
    return float(norm_batch(metric_eval(m, x), a))


@dataclass
class MetricReport:
    symmetry_ok: bool
    c0_emp: float
    c1_emp: float
    c2_emp: float
    c0_ok: bool
    c1_ok: bool
    c2_ok: bool

    @property
    def ok(self) -> bool:
        return self.symmetry_ok and self.c0_ok and self.c1_ok and self.c2_ok


def validate_metric(m: MetricField, sample_grid, fd_step: float, tol: float = 1e-9) -> MetricReport:
    """Empirical ellipticity and Lipschitz constants over ``sample_grid``.

    Slopes use central differences with step ``fd_step``; near the boundary
    the stencil is clipped into the domain and divided by the actual width.
    """
    if fd_step <= 0:
        raise ValueError("fd_step must be positive")
    pts = np.asarray(sample_grid, dtype=float).reshape(-1, m.dim_n)
    G = m.sample(pts)
    symmetric = bool(np.allclose(G, np.swapaxes(G, -1, -2), rtol=0.0, atol=tol * max(1.0, np.abs(G).max())))
    eig = np.linalg.eigvalsh(0.5 * (G + np.swapaxes(G, -1, -2)))
    c0_emp = float(eig[:, 0].min())
    c1_emp = float(eig[:, -1].max())

    grads = np.zeros(G.shape + (m.dim_n,))
    for s in range(m.dim_n):
        plus = pts.copy()
        minus = pts.copy()
        plus[:, s] = np.minimum(plus[:, s] + fd_step, m.upper)
        minus[:, s] = np.maximum(minus[:, s] - fd_step, m.lower)
        width = plus[:, s] - minus[:, s]
        diff = m.sample(plus) - m.sample(minus)
        grads[..., s] = diff / np.where(width > 0, width, 1.0)[:, None, None]
    c2_emp = float(np.linalg.norm(grads, axis=-1).max()) if pts.size else 0.0

    return MetricReport(
        symmetry_ok=symmetric,
        c0_emp=c0_emp,
        c1_emp=c1_emp,
        c2_emp=c2_emp,
        c0_ok=c0_emp >= m.c0 * (1 - tol),
        c1_ok=c1_emp <= m.c1 * (1 + tol),
        c2_ok=c2_emp <= m.c2 * (1 + tol) + tol,
    )


# --- metric library -------------------------------------------------------

def identity(n: int = 2) -> MetricField:
    eye = np.eye(n)

    def entries(x):
        x = np.asarray(x)
        return np.broadcast_to(eye, x.shape[:-1] + (n, n)).copy()

    return MetricField(n, entries, 1.0, 1.0, 0.0, name="identity", params=(n,), constant=True)


def constant_diagonal(diag) -> MetricField:
    d = np.asarray(diag, dtype=float)
    if np.any(d <= 0):
        raise ValueError("diagonal entries must be positive")
    n = d.size
    mat = np.diag(d)

    def entries(x):
        x = np.asarray(x)
        return np.broadcast_to(mat, x.shape[:-1] + (n, n)).copy()

    return MetricField(n, entries, float(d.min()), float(d.max()), 0.0,
                       name="diagonal", params=tuple(d), constant=True)


def affine_diagonal(slope: float = 0.5, axis: int = 0, n: int = 2) -> MetricField:
    """diag(1 + slope*x_axis, 1, ..., 1) on [0, 1]^n (slope > -1)."""
    if slope <= -1:
        raise ValueError("slope must exceed -1 to keep the field coercive")
    if not 0 <= axis < n:
        raise ValueError(f"axis {axis} out of range for n={n}")

    def entries(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1] + (n, n))
        for a in range(n):
            out[..., a, a] = 1.0
        out[..., 0, 0] = 1.0 + slope * x[..., axis]
        return out

    lo, hi = min(1.0, 1.0 + slope), max(1.0, 1.0 + slope)
    return MetricField(n, entries, lo, hi, abs(slope), name="affine", params=(slope, axis, n))


def rotation(a: float = 1.0, b: float = 3.0, freq: float = 1.0) -> MetricField:
    """R(t) diag(a, b) R(t)^T with t = freq*pi*(x1 + x2); a smooth anisotropic 2D field."""
    if a <= 0 or b <= 0:
        raise ValueError("eigenvalues must be positive")
    k = freq * np.pi

    def entries(x):
        x = np.asarray(x, dtype=float)
        t = k * (x[..., 0] + x[..., 1])
        c, s = np.cos(t), np.sin(t)
        out = np.empty(x.shape[:-1] + (2, 2))
        out[..., 0, 0] = a * c * c + b * s * s
        out[..., 1, 1] = a * s * s + b * c * c
        out[..., 0, 1] = out[..., 1, 0] = (a - b) * c * s
        return out

    c2 = abs(b - a) * k * np.sqrt(2.0)
    return MetricField(2, entries, min(a, b), max(a, b), c2, name="rotation", params=(a, b, freq))


LIBRARY = {
    "identity": identity,
    "diagonal": lambda *d: constant_diagonal(d),
    "affine": affine_diagonal,
    "rotation": rotation,
}


def build_metric(name: str, params=(), n: int = 2) -> MetricField:
    """Construct a library metric from its config name and numeric parameters."""
    if name not in LIBRARY:
        raise ValueError(f"unknown metric {name!r}; choose from {sorted(LIBRARY)}")
    params = tuple(params)
    if name == "identity":
        return identity(n)
    if name == "affine":
        slope = params[0] if params else 0.5
        axis = int(params[1]) if len(params) > 1 else 0
        return affine_diagonal(slope, axis, n)
    if name == "diagonal":
        m = constant_diagonal(params if params else np.ones(n))
        if m.dim_n != n:
            raise ValueError(f"diagonal metric needs {n} entries, got {m.dim_n}")
        return m
    if n != 2:
        raise ValueError("rotation metric is two-dimensional")
    return rotation(*params)
