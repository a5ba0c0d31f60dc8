"""Congested traffic flow sigma = h(|Du|) Du of a scalar solution and the
Fenchel-Young / divergence checks of the dual flow problem.

Only the scalar case with the Euclidean metric has this interpretation, so
both restrictions are enforced.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernel
from .grid import Grid, divergence, grad_array, integrate
from .metric import MetricField


@dataclass
class FlowField:
    grid: Grid
    p: float
    sigma: np.ndarray
    du: np.ndarray
    congestion_cost: np.ndarray
    primal_density: np.ndarray
    fy_residual: np.ndarray

    @property
    def speed(self) -> np.ndarray:
        return np.linalg.norm(self.sigma, axis=-1)


def fenchel_young(sigma, du, p):
    """F(|du|) + H(|sigma|) - sigma . du per row; nonnegative for any pair."""
    sigma = np.asarray(sigma, dtype=float)
    du = np.asarray(du, dtype=float)
    return (kernel.f_integrand(np.linalg.norm(du, axis=-1), p)
            + kernel.conjugate_h(np.linalg.norm(sigma, axis=-1), p)
            - np.sum(sigma * du, axis=-1))


def _is_identity(m: MetricField, grid: Grid) -> bool:
    G = m.sample(grid.centers)
    return bool(np.array_equal(G, np.broadcast_to(np.eye(grid.n), G.shape)))


def traffic_flow(sol, m: MetricField | None = None, p: float | None = None) -> FlowField:
    """Flow of the unregularized integrand at the cell gradients of ``sol``.

    ``m`` and ``p`` default to those of ``sol.spec``.
    """
    spec = getattr(sol, "spec", None)
    m = m if m is not None else spec.metric
    p = float(p if p is not None else spec.p)
    u = sol.u if hasattr(sol, "u") else sol
    grid = u.grid
    if u.big_n != 1:
        raise ValueError("the flow interpretation needs a scalar solution (N = 1)")
    if not _is_identity(m, grid):
        raise ValueError("the flow interpretation needs the identity metric")
    du = grad_array(grid, u.values)[..., 0, :]
    t = np.linalg.norm(du, axis=-1)
    sigma = kernel.h(t, p)[..., None] * du
    cost = kernel.conjugate_h(np.linalg.norm(sigma, axis=-1), p)
    prim = kernel.f_integrand(t, p)
    return FlowField(grid, p, sigma, du, cost, prim, prim + cost - np.sum(sigma * du, axis=-1))


@dataclass
class DualityReport:
    primal_energy: float
    dual_energy: float
    pairing: float
    div_norm: float
    max_fy_residual: float

    def items(self):
        return [("primal_energy", self.primal_energy), ("dual_energy", self.dual_energy),
                ("pairing", self.pairing), ("div_norm", self.div_norm),
                ("max_fy_residual", self.max_fy_residual)]


def flow_divergence(flow: FlowField) -> np.ndarray:
    """Nodal divergence of sigma; only interior nodes are meaningful."""
    return divergence((flow.grid, flow.sigma)).values[..., 0]


def duality_report(flow: FlowField) -> DualityReport:
    grid = flow.grid
    div = flow_divergence(flow)
    interior = ~grid.boundary_mask
    return DualityReport(
        integrate(grid, flow.primal_density),
        integrate(grid, flow.congestion_cost),
        integrate(grid, np.sum(flow.sigma * flow.du, axis=-1)),
        float(np.abs(div[interior]).max()) if interior.any() else 0.0,
        float(flow.fy_residual.max()),
    )
