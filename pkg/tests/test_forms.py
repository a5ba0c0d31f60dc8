import numpy as np
import pytest

from degenlab import forms, kernel, metric
from degenlab.forms import FormOperand, envelope_check, form_a, form_b, form_c
from degenlab.kernel import KernelParams

X = [0.5, 0.5]
IDENT = metric.identity(2)


def _slot(i, a, nu, n=2, big_n=1):
    e = np.zeros((big_n, n, n))
    e[i, a, nu] = 1.0
    return e


def test_form_a_examples():
    prm = KernelParams(2, 0.0)
    # aligned with xi: value h(2) + h'(2) 2 = 1 = eps + Lambda(2)
    assert form_a(IDENT, X, [2, 0], prm, _slot(0, 0, 0), _slot(0, 0, 0)) == pytest.approx(1.0)
    assert form_a(IDENT, X, [2, 0], prm, _slot(0, 0, 1), _slot(0, 0, 1)) == pytest.approx(1.0)
    # gamma-orthogonal to xi: value h(2) = 0.5 = eps + lambda(2)
    assert form_a(IDENT, X, [2, 0], prm, _slot(0, 1, 0), _slot(0, 1, 0)) == pytest.approx(0.5)


def test_form_a_degenerate():
    rng = np.random.default_rng(1)
    eta, zeta = rng.standard_normal((2, 1, 2, 2))
    m = metric.rotation()
    G = metric.metric_eval(m, X)
    xi = np.array([0.5, 0.0]) / np.sqrt(G[0, 0])  # |xi|_gamma = 0.5
    val = form_a(m, X, xi, KernelParams(3, 0.3), eta, zeta)
    ref = 0.3 * np.einsum("ab,ns,ian,ibs->", G, G, eta, zeta)
    assert val == pytest.approx(ref, rel=1e-13)


def test_form_b_examples():
    prm = KernelParams(2, 0.0)
    assert form_b(IDENT, X, [2, 0], prm, [1, 0], [1, 0]) == pytest.approx(1.0)
    assert form_b(IDENT, X, [2, 0], prm, [0, 1], [0, 1]) == pytest.approx(0.5)
    assert form_b(metric.rotation(), X, [0.3, 2.0], KernelParams(1.5, 0.2), [0, 0], [1, 2]) == 0.0


def test_form_c_examples():
    prm = KernelParams(2, 0.1)
    assert form_c(IDENT, X, [2, 0], prm, [1, 0], [1, 0]) == pytest.approx(1.1)
    assert form_c(IDENT, X, [2, 0], prm, [0, 1], [0, 1]) == pytest.approx(0.6)
    assert form_c(IDENT, X, [0.3, 0.4], KernelParams(2, 0.0), [1, 2], [3, 4]) == 0.0


def test_forbidden_arguments():
    with pytest.raises(ValueError):
        form_b(IDENT, X, [0, 0], KernelParams(2), [1, 0], [1, 0])
    with pytest.raises(ValueError):
        form_b(IDENT, X, [1, 0], KernelParams(1.5), [1, 0], [1, 0])
    with pytest.raises(ValueError):
        form_b(IDENT, X, [2, 0], KernelParams(2), [1, 0, 0], [1, 0])
    with pytest.raises(ValueError):
        form_b(IDENT, X, [2, 0], KernelParams(2), FormOperand("spatial", [1, 0]), [1, 0])


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_symmetry_and_bilinearity(p, any_metric):
    rng = np.random.default_rng(3)
    prm = KernelParams(p, 0.05)
    for _ in range(50):
        x = rng.uniform(0, 1, 2)
        xi = rng.standard_normal(4) * 2
        for fn, shape in ((form_a, (2, 2, 2)), (form_b, (2, 2)), (form_c, (2,))):
            e, z, y = rng.standard_normal((3,) + shape)
            a = rng.standard_normal()
            v1 = fn(any_metric, x, xi, prm, e, z)
            v2 = fn(any_metric, x, xi, prm, z, e)
            scale = abs(fn(any_metric, x, xi, prm, e, e)) + abs(fn(any_metric, x, xi, prm, z, z)) + 1e-300
            assert abs(v1 - v2) <= 1e-12 * scale
            lin = fn(any_metric, x, xi, prm, a * e + y, z)
            ref = a * v1 + fn(any_metric, x, xi, prm, y, z)
            assert abs(lin - ref) <= 1e-12 * (1 + abs(a)) * (scale + abs(fn(any_metric, x, xi, prm, y, y)))


def test_form_b_is_derivative_of_vector_field(any_metric):
    # B_eps(x, xi)(zeta, eta) = <DA_eps(x, xi) zeta, eta>_gamma, checked by central differences
    rng = np.random.default_rng(5)
    for p in (1.5, 2.0, 3.0):
        prm = KernelParams(p, 0.1)
        for _ in range(20):
            x = rng.uniform(0, 1, 2)
            xi = rng.standard_normal(4)
            xi *= rng.uniform(1.3, 4.0) / metric.gamma_norm(any_metric, x, xi)
            zeta, eta = rng.standard_normal((2, 4))
            step = 1e-6
            da = (kernel.vector_field_a(any_metric, x, xi + step * zeta, prm)
                  - kernel.vector_field_a(any_metric, x, xi - step * zeta, prm)) / (2 * step)
            fd = metric.gamma_inner(any_metric, x, da, eta)
            assert form_b(any_metric, x, xi, prm, zeta, eta) == pytest.approx(fd, rel=1e-6, abs=1e-8)


def test_cauchy_schwarz_factor(any_metric):
    rng = np.random.default_rng(11)
    x = np.array([0.3, 0.6])
    G = metric.metric_eval(any_metric, x)
    for _ in range(200):
        xi = rng.standard_normal((2, 2))
        w = xi @ G
        t2 = metric.inner_batch(G, xi, xi)
        for eta, rank, sq in (
            (rng.standard_normal((2, 2, 2)), None, "second_gradient"),
            (rng.standard_normal((2, 2)), None, "gradient"),
            (rng.standard_normal(2), None, "spatial"),
        ):
            if sq == "second_gradient":
                a = np.einsum("ia,ian->n", w, eta)
                r = a @ G @ a / t2
            elif sq == "gradient":
                r = np.sum(w * eta) ** 2 / t2
            else:
                r = np.sum((w @ eta) ** 2) / t2
            bound = forms.sq_norm_batch(G, eta, sq)
            assert -1e-14 <= r <= bound * (1 + 1e-12)


def test_envelope_degenerate():
    rep = envelope_check(metric.rotation(), X, [0.2, 0.1, 0.0, 0.3], KernelParams(2.5, 0.2), 500)
    assert rep.violations == 0
    assert rep.min_ratio_low == pytest.approx(0.2, rel=1e-12)
    assert rep.max_ratio_high == pytest.approx(0.2, rel=1e-12)


@pytest.mark.parametrize("eps", [0.0, 0.3])
def test_envelope_extremes_identity(eps):
    rep = envelope_check(IDENT, X, [2, 0], KernelParams(2, eps), 1000)
    assert rep.violations == 0
    assert rep.min_ratio_low == pytest.approx(eps + 0.5, rel=1e-12)
    assert rep.max_ratio_high == pytest.approx(eps + 1.0, rel=1e-12)


@pytest.mark.parametrize("p", [1.2, 1.5, 2.0, 3.0, 6.0])
def test_envelope_random_configurations(p, any_metric):
    rng = np.random.default_rng(int(p * 10))
    for _ in range(20):
        x = rng.uniform(0, 1, 2)
        xi = rng.standard_normal(4) * np.exp(rng.uniform(-2, 3))
        if abs(metric.gamma_norm(any_metric, x, xi) - 1) < 1e-6:
            continue
        rep = envelope_check(any_metric, x, xi, KernelParams(p, rng.uniform(0, 1)), 2000,
                             seed=int(rng.integers(1 << 30)))
        assert rep.violations == 0
        assert rep.lower * (1 - 1e-10) <= rep.min_ratio_low
        assert rep.max_ratio_high <= rep.upper * (1 + 1e-10)
