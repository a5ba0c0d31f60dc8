import numpy as np
import pytest

from degenlab.grid import Grid, NodalField
from degenlab.metric import affine_diagonal, identity, rotation
from degenlab.solver import (
    ProblemSpec, SolveError, SolveOptions, build_datum, datum_from_field, energy, energy_parts,
    eps_continuation, read_checkpoint, residual, solve_1d_oracle, solve_regularized,
    write_checkpoint,
)


def lin2d(a, res=9, p=2.0, metric=None):
    return ProblemSpec(Grid(2, res), metric or identity(2), p, build_datum("linear", (a, 0.0)))


def test_energy_examples():
    spec = lin2d(2.0)
    u = spec.initial_field()
    assert energy(spec, u, 0.0) == pytest.approx(0.5, abs=1e-14)
    assert energy(spec, u, 0.1) == pytest.approx(0.7, abs=1e-14)
    sub = lin2d(0.9)
    assert energy_parts(sub, sub.initial_field(), 0.0) == (0.0, 0.0)


def test_zero_eps_rejected():
    spec = lin2d(2.0)
    with pytest.raises(ValueError):
        solve_regularized(spec, 0.0)


def test_spec_validation():
    with pytest.raises(ValueError):
        ProblemSpec(Grid(2, 5), identity(2), 1.0, build_datum("zero"))
    with pytest.raises(ValueError):
        ProblemSpec(Grid(2, 5), identity(2), 2.0, build_datum("zero"), (1e-2, 1e-1))
    with pytest.raises(ValueError):
        ProblemSpec(Grid(1, 5), identity(2), 2.0, build_datum("zero"))


@pytest.mark.parametrize("a", [-3.0, 0.5, 2.0])
def test_1d_linear_zero_residual(a):
    spec = ProblemSpec(Grid(1, 17), identity(1), 3.0, build_datum("linear", (a,), 1))
    r = residual(spec, spec.initial_field(), 0.2)
    assert np.abs(r.values).max() < 1e-12


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
@pytest.mark.parametrize("metric", [identity(2), affine_diagonal(0.5), rotation(1, 3, 1)],
                         ids=["id", "affine", "rot"])
def test_residual_matches_fd(p, metric):
    rng = np.random.default_rng(7)
    spec = ProblemSpec(Grid(2, 7), metric, p, build_datum("bilinear", (3.0,)))
    u = spec.initial_field().values + 0.3 * rng.standard_normal((7, 7, 1))
    u[spec.grid.boundary_mask] = spec.initial_field().values[spec.grid.boundary_mask]
    eps = 0.05
    r = residual(spec, u, eps).values
    interior = np.argwhere(~spec.grid.boundary_mask)
    worst = 0.0
    for k in rng.choice(len(interior), 20, replace=True):
        i, j = interior[k]
        step = 1e-6
        up, um = u.copy(), u.copy()
        up[i, j, 0] += step
        um[i, j, 0] -= step
        fd = (energy(spec, up, eps) - energy(spec, um, eps)) / (2 * step)
        worst = max(worst, abs(fd - r[i, j, 0]) / max(abs(r[i, j, 0]), 1e-3))
    assert worst <= 1e-6


def test_residual_vector_valued_fd():
    rng = np.random.default_rng(3)
    spec = ProblemSpec(Grid(2, 6), rotation(1, 2, 1), 2.5, build_datum("linear", (1.0, 0.5, -0.7, 1.2), big_n=2))
    u = spec.initial_field().values + 0.4 * rng.standard_normal((6, 6, 2))
    r = residual(spec, u, 0.1).values
    step = 1e-6
    for (i, j, c) in [(1, 1, 0), (2, 3, 1), (4, 2, 0)]:
        up, um = u.copy(), u.copy()
        up[i, j, c] += step
        um[i, j, c] -= step
        fd = (energy(spec, up, 0.1) - energy(spec, um, 0.1)) / (2 * step)
        assert fd == pytest.approx(r[i, j, c], rel=1e-6, abs=1e-9)


@pytest.mark.parametrize("p,eps,a", [(2.0, 0.1, 2.0), (3.0, 0.5, -1.5), (1.5, 0.01, 3.0), (2.0, 0.0, 4.0)])
def test_1d_oracle_slope(p, eps, a):
    s, unique = solve_1d_oracle(p, eps, a)
    assert unique
    assert s == pytest.approx(a, rel=1e-12)


def test_1d_oracle_nonunique():
    assert solve_1d_oracle(2.0, 0.0, 0.5) == (0.5, False)


def test_1d_solve_from_noise():
    spec = ProblemSpec(Grid(1, 65), identity(1), 2.0, build_datum("linear", (2.0,), 1))
    st = solve_regularized(spec, 0.1, SolveOptions(init_noise=0.2, seed=4))
    slope, _ = solve_1d_oracle(2.0, 0.1, 2.0)
    x = spec.grid.nodes[:, 0]
    assert st.converged
    assert np.abs(st.u.values[:, 0] - slope * x).max() <= 1e-8


@pytest.mark.parametrize("p,method", [(1.5, "ncg"), (2.0, "ncg"), (2.0, "newton"), (3.0, "newton")])
def test_solve_descent_and_comparison(p, method):
    spec = ProblemSpec(Grid(2, 17), affine_diagonal(0.5), p, build_datum("bilinear", (3.0,)))
    st = solve_regularized(spec, 1e-2, SolveOptions(method=method, init_noise=0.05, seed=1))
    assert st.converged and st.residual_norm <= st.tol
    hist = np.array(st.energy_history)
    assert np.all(np.diff(hist) <= 1e-13 * np.abs(hist[:-1]))
    assert st.energy <= energy(spec, spec.initial_field(), 1e-2) * (1 + 1e-12)


def test_newton_rejected_below_two():
    spec = lin2d(2.0, p=1.5)
    with pytest.raises(ValueError):
        solve_regularized(spec, 0.1, SolveOptions(method="newton"))


def test_continuation_1d_identical():
    spec = ProblemSpec(Grid(1, 33), identity(1), 2.0, build_datum("linear", (2.0,), 1), (1e-1, 1e-2, 1e-3))
    states = eps_continuation(spec, SolveOptions(init_noise=0.1))
    assert len(states) == 3
    for s in states[1:]:
        assert np.abs(s.u.values - states[0].u.values).max() <= 1e-10


def test_continuation_empty():
    assert eps_continuation(lin2d(2.0)) == []


def test_continuation_failure_carries_eps():
    spec = ProblemSpec(Grid(2, 17), identity(2), 1.5, build_datum("bilinear", (3.0,)), (1e-1, 1e-3))
    with pytest.raises(SolveError) as exc:
        eps_continuation(spec, SolveOptions(max_iter=1, init_noise=0.1))
    assert exc.value.eps == 1e-1


def test_checkpoint_roundtrip(tmp_path):
    spec = ProblemSpec(Grid(2, 9), identity(2), 2.0, build_datum("bilinear", (3.0,)))
    st = solve_regularized(spec, 0.1)
    path = tmp_path / "ck.csv"
    write_checkpoint(path, st)
    header, u = read_checkpoint(path)
    assert header["spec_hash"] == spec.spec_hash()
    assert float(header["eps"]) == 0.1
    assert np.array_equal(u.values, st.u.values)
    warm = solve_regularized(spec, 0.1, u0=u)
    assert warm.iterations == 0
    ref = datum_from_field(u)
    assert np.array_equal(ref(spec.grid.nodes), st.u.values)


def test_spec_hash_sensitive():
    assert lin2d(2.0).spec_hash() != lin2d(2.5).spec_hash()
    assert lin2d(2.0).spec_hash() == lin2d(2.0).spec_hash()
