import io

import numpy as np
import pytest

from degenlab.grid import (Grid, NodalField, apply_dirichlet, divergence, export_csv, grad_array,
                           gradient, integrate)


@pytest.mark.parametrize("n,res", [(1, 3), (1, 17), (2, 3), (2, 9)])
def test_grid_geometry(n, res):
    g = Grid(n, res)
    assert abs(g.h_cell * (res - 1) - 1) <= 1e-14
    assert g.nodes.shape == (res,) * n + (n,)
    assert g.centers.shape == (res - 1,) * n + (n,)
    assert g.boundary_mask.sum() == (2 if n == 1 else 4 * (res - 1))


def test_grid_rejects_small():
    with pytest.raises(ValueError):
        Grid(2, 2)
    with pytest.raises(ValueError):
        Grid(3, 5)


def _field(g, fn):
    return NodalField(g, fn(g.nodes))


def test_gradient_linear():
    g = Grid(2, 7)
    du = gradient(_field(g, lambda x: 2 * x[..., :1]))
    assert np.allclose(du.values[..., 0, :], [2.0, 0.0], atol=1e-13)


def test_gradient_constant():
    g = Grid(2, 5)
    du = gradient(_field(g, lambda x: np.full(x.shape[:-1] + (2,), 3.0)))
    assert np.abs(du.values).max() == 0.0


def test_gradient_bilinear_res3():
    g = Grid(2, 3)
    du = gradient(_field(g, lambda x: (x[..., 0] * x[..., 1])[..., None]))
    c = g.centers
    assert np.allclose(du.values[..., 0, 0], c[..., 1], atol=1e-14)
    assert np.allclose(du.values[..., 0, 1], c[..., 0], atol=1e-14)


def test_gradient_exact_on_multilinear():
    rng = np.random.default_rng(0)
    g = Grid(2, 11)
    a, b, c, d = rng.standard_normal(4)
    u = _field(g, lambda x: (a + b * x[..., 0] + c * x[..., 1] + d * x[..., 0] * x[..., 1])[..., None])
    du = gradient(u).values[..., 0, :]
    x = g.centers
    assert np.abs(du[..., 0] - (b + d * x[..., 1])).max() <= 1e-13
    assert np.abs(du[..., 1] - (c + d * x[..., 0])).max() <= 1e-13


@pytest.mark.parametrize("n", [1, 2])
def test_sparse_matrix_matches_stencil(n):
    rng = np.random.default_rng(2)
    g = Grid(n, 6)
    u = rng.standard_normal(g.node_shape + (2,))
    D = g.gradient_matrix(2)
    assert np.allclose(D @ u.ravel(), grad_array(g, u).ravel(), atol=1e-12)


def test_divergence_constant_flux():
    g = Grid(2, 9)
    div = divergence((g, np.broadcast_to([1.5, -0.7], g.cell_shape + (2,))))
    assert np.abs(div.values[~g.boundary_mask]).max() <= 1e-12


@pytest.mark.parametrize("n", [1, 2])
def test_divergence_of_x1(n):
    g = Grid(n, 9)
    flux = np.zeros(g.cell_shape + (n,))
    flux[..., 0] = g.centers[..., 0]
    div = divergence((g, flux)).values[..., 0]
    assert np.allclose(div[~g.boundary_mask], 1.0, atol=1e-12)


@pytest.mark.parametrize("n", [1, 2])
def test_adjoint_identity(n):
    rng = np.random.default_rng(3)
    g = Grid(n, 8)
    worst = 0.0
    for _ in range(100):
        big_n = int(rng.integers(1, 3))
        flux = rng.standard_normal(g.cell_shape + (big_n, n))
        phi = rng.standard_normal(g.node_shape + (big_n,))
        phi[g.boundary_mask] = 0.0
        lhs = integrate(g, np.sum(flux * grad_array(g, phi), axis=(-2, -1)))
        div = divergence((g, flux)).values
        rhs = -np.sum(div * phi) * g.cell_volume
        worst = max(worst, abs(lhs - rhs) / (1 + abs(lhs)))
    assert worst <= 1e-12


def test_dirichlet():
    g = Grid(2, 6)
    u = NodalField(g, np.full(g.node_shape + (1,), 7.0))
    zero = apply_dirichlet(u, lambda x: np.zeros(len(x)))
    assert np.all(zero.values[g.boundary_mask] == 0) and np.all(zero.values[~g.boundary_mask] == 7)
    lin = apply_dirichlet(u, lambda x: 2 * x[:, 0])
    b = lin.values[g.boundary_mask]
    assert b.min() >= 0 and b.max() <= 2
    ref = np.random.default_rng(0).standard_normal(g.node_shape + (1,))
    copy = apply_dirichlet(u, lambda x: ref[g.boundary_mask])
    assert np.array_equal(copy.values[g.boundary_mask], ref[g.boundary_mask])


def test_integrate():
    g = Grid(2, 11)
    assert integrate(g, np.ones(g.cell_shape)) == pytest.approx(1.0, abs=1e-14)
    half = (g.centers[..., 0] < 0.5).astype(float)
    assert abs(integrate(g, half) - 0.5) <= g.h_cell
    assert integrate(g, g.centers[..., 0]) == pytest.approx(0.5, abs=1e-14)


def test_export_csv():
    g = Grid(1, 4)
    u = NodalField(g, g.nodes * 2)
    buf = io.StringIO()
    export_csv(buf, u)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "# n=1 res=4 big_n=1 location=nodes"
    assert lines[1] == "x1,v0"
    assert len(lines) == 6
    assert lines[3] == "0.33333333333333331,0.66666666666666663"
