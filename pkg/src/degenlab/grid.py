"""Uniform tensor grids on [0, 1]^n with cell-centred gradients.

Nodal arrays have shape ``node_shape + (N,)``; cell gradients have shape
``cell_shape + (N, n)``.  The gradient on a cell is the gradient of the
multilinear interpolant at the cell centre, and all integrals use the
midpoint rule, so the discrete energy is an exact one-point-quadrature
multilinear finite element energy.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from itertools import product

import numpy as np
import scipy.sparse as sp

from ._io import fmt


@dataclass(frozen=True)
class Grid:
    n: int
    res: int

    def __post_init__(self):
        if self.n not in (1, 2):
            raise ValueError("only n = 1 or 2 is supported")
        if self.res < 3:
            raise ValueError("res must be at least 3")

    @property
    def h_cell(self) -> float:
        return 1.0 / (self.res - 1)

    @property
    def node_shape(self):
        return (self.res,) * self.n

    @property
    def cell_shape(self):
        return (self.res - 1,) * self.n

    @property
    def cell_volume(self) -> float:
        return self.h_cell ** self.n

    @cached_property
    def nodes(self) -> np.ndarray:
        axes = [np.linspace(0.0, 1.0, self.res)] * self.n
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    @cached_property
    def centers(self) -> np.ndarray:
        c = (np.arange(self.res - 1) + 0.5) * self.h_cell
        return np.stack(np.meshgrid(*([c] * self.n), indexing="ij"), axis=-1)

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.node_shape, dtype=bool)
        for a in range(self.n):
            idx = [slice(None)] * self.n
            idx[a] = 0
            mask[tuple(idx)] = True
            idx[a] = -1
            mask[tuple(idx)] = True
        return mask

    @cached_property
    def scalar_gradient_matrix(self) -> sp.csr_matrix:
        """Sparse map from flattened nodal scalars to flattened ``(cell, a)`` gradients."""
        rows, cols, vals = [], [], []
        n, r = self.n, self.res
        cells = np.arange((r - 1) ** n).reshape(self.cell_shape)
        node_id = np.arange(r ** n).reshape(self.node_shape)
        w = 1.0 / (2 ** (n - 1) * self.h_cell)
        for a in range(n):
            for corner in product((0, 1), repeat=n):
                sl = tuple(slice(c, c + r - 1) for c in corner)
                sign = 1.0 if corner[a] == 1 else -1.0
                rows.append((cells * n + a).ravel())
                cols.append(node_id[sl].ravel())
                vals.append(np.full(cells.size, sign * w))
        shape = ((r - 1) ** n * n, r ** n)
        return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=shape)

    def gradient_matrix(self, big_n: int) -> sp.csr_matrix:
        """Map from nodal ``(node, i)`` to cell ``(cell, i, a)`` in C order."""
        D = self.scalar_gradient_matrix.tocoo()
        n = self.n
        cell, a = np.divmod(D.row, n)
        rows, cols = [], []
        for i in range(big_n):
            rows.append((cell * big_n + i) * n + a)
            cols.append(D.col * big_n + i)
        shape = (D.shape[0] * big_n, D.shape[1] * big_n)
        return sp.csr_matrix((np.tile(D.data, big_n), (np.concatenate(rows), np.concatenate(cols))), shape=shape)

    def ball_mask(self, x0, rho) -> np.ndarray:
        """Cells whose centre lies within Euclidean distance ``rho`` of ``x0``."""
        d = np.linalg.norm(self.centers - np.asarray(x0, dtype=float), axis=-1)
        return d < rho


@dataclass
class NodalField:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape[:-1] != self.grid.node_shape:
            raise ValueError(f"nodal values need shape {self.grid.node_shape} + (N,), got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("nodal values must be finite")

    @property
    def big_n(self) -> int:
        return self.values.shape[-1]

    @property
    def boundary(self) -> np.ndarray:
        return self.grid.boundary_mask


@dataclass
class CellGradField:
    grid: Grid
    values: np.ndarray

    @property
    def big_n(self) -> int:
        return self.values.shape[-2]


def grad_array(grid: Grid, u: np.ndarray) -> np.ndarray:
    """Cell-centre gradients of nodal array ``u`` (node_shape + (N,))."""
    hc = grid.h_cell
    if grid.n == 1:
        return ((u[1:] - u[:-1]) / hc)[..., None]
    d1 = (u[1:, :-1] - u[:-1, :-1] + u[1:, 1:] - u[:-1, 1:]) / (2 * hc)
    d2 = (u[:-1, 1:] - u[:-1, :-1] + u[1:, 1:] - u[1:, :-1]) / (2 * hc)
    return np.stack([d1, d2], axis=-1)


def grad_adjoint_array(grid: Grid, flux: np.ndarray) -> np.ndarray:
    """Transpose of :func:`grad_array` under plain (unweighted) sums."""
    hc = grid.h_cell
    big_n = flux.shape[-2]
    out = np.zeros(grid.node_shape + (big_n,))
    if grid.n == 1:
        f = flux[..., 0] / hc
        out[1:] += f
        out[:-1] -= f
        return out
    f1 = flux[..., 0] / (2 * hc)
    f2 = flux[..., 1] / (2 * hc)
    out[1:, :-1] += f1 - f2
    out[:-1, :-1] -= f1 + f2
    out[1:, 1:] += f1 + f2
    out[:-1, 1:] += f2 - f1
    return out


def gradient(u: NodalField) -> CellGradField:
    return CellGradField(u.grid, grad_array(u.grid, u.values))


def divergence(flux) -> NodalField:
    """Negative adjoint of :func:`gradient` under the h^n-weighted pairings.

    Accepts a :class:`CellGradField` or a ``(grid, array)`` pair; a purely
    spatial flux ``cell_shape + (n,)`` yields a scalar nodal field.
    """
    grid, arr = (flux.grid, flux.values) if isinstance(flux, CellGradField) else flux
    arr = np.asarray(arr, dtype=float)
    if arr.shape == grid.cell_shape + (grid.n,):
        arr = arr[..., None, :]
    if arr.shape[:-2] != grid.cell_shape or arr.shape[-1] != grid.n:
        raise ValueError(f"flux shape {arr.shape} does not match grid cells {grid.cell_shape}")
    return NodalField(grid, -grad_adjoint_array(grid, arr))


def apply_dirichlet(u: NodalField, datum) -> NodalField:
    """Copy of ``u`` with boundary nodes set to ``datum(node coordinates)``."""
    grid = u.grid
    mask = grid.boundary_mask
    vals = np.asarray(datum(grid.nodes[mask]), dtype=float).reshape(int(mask.sum()), -1)
    if vals.shape[1] != u.big_n:
        raise ValueError(f"datum has {vals.shape[1]} components, field has {u.big_n}")
    if not np.all(np.isfinite(vals)):
        raise ValueError("datum must be finite on the boundary")
    out = u.values.copy()
    out[mask] = vals
    return NodalField(grid, out)


def integrate(grid: Grid, cell_values) -> float:
    """Midpoint rule: sum of cell values times h^n."""
    v = np.asarray(cell_values, dtype=float)
    if v.shape[: grid.n] != grid.cell_shape:
        raise ValueError(f"cell field must have leading shape {grid.cell_shape}")
    return float(v.sum() * grid.cell_volume)


def export_csv(stream, field) -> None:
    """Write a nodal or cell field: header line, then coordinates and values per row."""
    grid = field.grid
    if isinstance(field, NodalField):
        coords, vals, kind = grid.nodes, field.values, "nodes"
    else:
        coords, vals, kind = grid.centers, field.values, "cells"
    coords = coords.reshape(-1, grid.n)
    flat = vals.reshape(coords.shape[0], -1)
    big_n = field.big_n
    stream.write(f"# n={grid.n} res={grid.res} big_n={big_n} location={kind}\n")
    names = [f"x{a + 1}" for a in range(grid.n)] + [f"v{k}" for k in range(flat.shape[1])]
    stream.write(",".join(names) + "\n")
    for c, v in zip(coords, flat):
        stream.write(",".join(fmt(z) for z in np.concatenate([c, v])) + "\n")
