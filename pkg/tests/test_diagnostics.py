import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from degenlab import diagnostics as D
from degenlab.grid import Grid, NodalField
from degenlab.metric import affine_diagonal, identity, rotation
from degenlab.solver import ProblemSpec, SolveOptions, build_datum, eps_continuation

I2 = identity(2)


def _field(fn, res=17, n=2):
    g = Grid(n, res)
    return NodalField(g, np.asarray(fn(g.nodes), dtype=float).reshape(g.node_shape + (-1,)))


def _linear(a=2.0, b=0.0, res=17):
    return _field(lambda x: a * x[..., 0] + b * x[..., 1], res)


def test_g_delta_linear():
    f = D.g_delta_field(_linear(), I2, 0.0)
    assert np.allclose(f.values[..., 0, 0], 1.0, atol=1e-13)
    assert np.allclose(f.values[..., 0, 1], 0.0, atol=1e-13)
    assert np.allclose(f.norms, 1.0, atol=1e-13)


def test_g_delta_zero_cases():
    assert np.all(D.g_delta_field(_linear(0.9), I2, 0.0).values == 0)
    # delta >= sup |Du| - 1 truncates everything
    assert np.all(D.g_delta_field(_linear(2.0), I2, 1.0).values == 0)
    with pytest.raises(ValueError):
        D.g_delta_field(_linear(), I2, -0.1)


def test_u_eps_examples():
    assert np.allclose(D.u_eps_field(_linear(), I2, 0.5), 0.25, atol=1e-13)
    assert np.all(D.u_eps_field(_linear(0.9), I2, 0.0) == 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([0.0, 0.1, 0.5]), st.sampled_from(["id", "affine", "rot"]),
       st.sampled_from([1, 2]))
def test_u_eps_is_squared_g_delta_norm(seed, delta, name, big_n):
    m = {"id": I2, "affine": affine_diagonal(0.5), "rot": rotation()}[name]
    rng = np.random.default_rng(seed)
    u = NodalField(Grid(2, 9), rng.normal(0, 0.5, (9, 9, big_n)))
    a = D.u_eps_field(u, m, delta)
    b = D.g_delta_field(u, m, delta).norms ** 2
    assert np.max(np.abs(a - b)) <= 1e-12 * max(1.0, a.max())


def test_excess_constant_gradient():
    r = D.excess(_linear(2.0, 1.0), I2, (0.5, 0.5), 0.3, 0.1, 0.5)
    assert r.phi == pytest.approx(0.0, abs=1e-24) and r.psi_delta == pytest.approx(0.0, abs=1e-24)


@pytest.mark.parametrize("nu", [0.01, 0.3, 1.0])
def test_excess_full_superlevel(nu):
    delta, mu = 0.1, 0.4
    r = D.excess(_linear(1 + delta + mu), I2, (0.5, 0.5), 0.3, delta, nu)
    assert r.mu == pytest.approx(mu)
    assert r.superlevel_fraction == 1.0
    assert r.regime == "nondegenerate"


def test_excess_half_degenerate_ball():
    # slope 0.5 for x1 < 1/2 and slope 3 beyond; the ball is split in two mirror halves
    u = _field(lambda x: np.where(x[..., 0] <= 0.5, 0.5 * x[..., 0], 0.25 + 3 * (x[..., 0] - 0.5)), res=33)
    r = D.excess(u, I2, (0.5, 0.5), 0.3, 0.1, 0.25)
    assert r.superlevel_fraction == pytest.approx(0.5)
    assert r.mu == pytest.approx(3 - 1 - 0.1)
    assert r.regime == "degenerate"


def test_excess_errors():
    with pytest.raises(ValueError):
        D.excess(_linear(), I2, (0.5, 0.5), 1e-3, 0.1, 0.5)
    with pytest.raises(ValueError):
        D.excess(_linear(), I2, (0.5, 0.5), 0.3, 0.1, 0.0)


@pytest.fixture(scope="module")
def mixed_solution():
    spec = ProblemSpec(Grid(2, 33), I2, 2.0, build_datum("bilinear", (2.0,)), (1e-1, 3e-2, 1e-2, 1e-3))
    return eps_continuation(spec, SolveOptions(method="newton"))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_psi_is_minimal_over_constants(mixed_solution, seed):
    sol = mixed_solution[-1]
    rng = np.random.default_rng(seed)
    x0 = tuple(rng.uniform(0.25, 0.75, 2))
    r = D.excess(sol, I2, x0, 0.2, 0.1, 0.5)
    g = D.g_delta_field(sol, I2, 0.1).values[sol.u.grid.ball_mask(x0, 0.2)]
    c = rng.normal(0, 1, g.shape[1:])
    other = float(np.mean(np.sum((g - c) ** 2, axis=(1, 2))))
    assert r.psi_delta <= other * (1 + 1e-12)


def test_regime_is_a_dichotomy(mixed_solution):
    sol = mixed_solution[-1]
    for x0, rho, nu in D.random_probes(50, seed=5):
        r = D.excess(sol, I2, x0, rho, 0.1, nu)
        # independent cell count of the complement of the super-level set
        mask = sol.u.grid.ball_mask(x0, rho)
        lvl = np.maximum(np.linalg.norm(sol.grad[mask], axis=(-2, -1)) - 1.1, 0.0)
        outside = np.sum(~(lvl > (1 - nu) * lvl.max()))
        nondeg = outside < nu * mask.sum()
        deg = outside >= nu * mask.sum()
        assert nondeg != deg
        assert r.regime == ("nondegenerate" if nondeg else "degenerate")


def test_sup_over_shrinking_balls(mixed_solution):
    sol = mixed_solution[-1]
    norms = D.g_delta_field(sol, I2, 0.1).norms
    for x0, _, _ in D.random_probes(10, seed=1):
        sups = [norms[sol.u.grid.ball_mask(x0, r)].max() for r in (0.3, 0.2, 0.1, 0.05)]
        assert np.all(np.diff(sups) <= 0)
        means = D.excess(sol, I2, x0, 0.3, 0.1, 0.5).nested_means
        assert [r for r, _, _ in means] == [0.3, 0.15, 0.075]


def _cell_field(fn, res):
    g = Grid(2, res)
    return (g, fn(g.centers)[..., None, :])


def test_holder_examples():
    const = _cell_field(lambda c: np.ones(c.shape), 17)
    assert all(v == 0 for v in D.holder_seminorms(const, [0.5, 1.0], 0.25).values())
    lin = _cell_field(lambda c: np.stack([c[..., 0], 0 * c[..., 0]], axis=-1), 17)
    assert D.holder_seminorms(lin, [1.0], 0.25)[1.0] == pytest.approx(1.0, rel=1e-12)


def test_holder_square_root():
    f = lambda c: np.stack([np.sqrt(c[..., 0]), 0 * c[..., 0]], axis=-1)  # noqa: E731
    tab = D.holder_estimate(_cell_field(f, 33), _cell_field(f, 65), [0.25, 0.5, 1.0], 0.25)
    assert tab.stable == [True, True, False]
    assert tab.best_alpha == 0.5
    # the alpha = 1 seminorm grows like the inverse square root of the cell size
    assert tab.fine[2] / tab.coarse[2] == pytest.approx(np.sqrt(2), rel=0.02)
    assert len(tab.rows()) == 6


def test_fit_rate_synthetic():
    eps = np.array([1e-1, 3e-2, 1e-2, 3e-3, 1e-3])
    slope, _, exact = D.fit_rate(eps, eps ** 0.5)
    assert not exact and slope == pytest.approx(0.5, abs=1e-6)
    assert D.fit_rate(eps, np.zeros(5))[2]
    with pytest.raises(ValueError):
        D.fit_rate([0.1], [0.2])


def test_convergence_rate_exact_match_1d():
    spec = ProblemSpec(Grid(1, 17), identity(1), 2.0, build_datum("linear", (2.0,), n=1), (1e-1, 1e-2, 1e-3, 1e-4))
    states = eps_continuation(spec)
    rep = D.convergence_rate(states[:-1], states[-1], identity(1), 0.1, 2.0)
    assert rep.exact_match and np.isnan(rep.slope)
    with pytest.raises(ValueError):
        D.convergence_rate(states[:2], states[-1], identity(1), 0.1, 2.0)


def test_convergence_rate_mixed(mixed_solution):
    rep = D.convergence_rate(mixed_solution[:-1], mixed_solution[-1], I2, 0.1, 2.0)
    assert rep.reference_eps == 1e-3 and len(rep.errors) == 3
    assert not rep.exact_match and rep.slope > 0.4


def test_k_compose_examples():
    sub = D.k_compose(_linear(0.9), I2, D.k_excess(I2))
    assert np.all(sub.values == 0)
    one = D.k_compose(_linear(2.0), I2, D.k_truncated_norm(I2))
    assert np.allclose(one.values, 1.0, atol=1e-13)
    with pytest.raises(ValueError):
        D.k_compose(_linear(), I2, lambda x, xi: np.ones(len(x)))


def test_modulus_nondecreasing(mixed_solution):
    res = D.k_compose(mixed_solution[-1], I2, D.k_excess(I2))
    assert np.all(np.diff(res.modulus) >= 0)
    assert res.modulus[0] >= 0


def test_delta_defect(mixed_solution):
    dd = D.delta_defect(mixed_solution[-1], I2, [0.1, 0.01, 0.001])
    assert dd.stable
    assert all(r == pytest.approx(1.0) for r in dd.ratio)
