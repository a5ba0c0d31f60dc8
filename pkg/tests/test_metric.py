import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from degenlab import metric
from degenlab.metric import gamma_inner, gamma_norm, metric_eval, validate_metric


def test_eval_identity():
    assert np.array_equal(metric_eval(metric.identity(2), [0.5, 0.5]), np.eye(2))


def test_eval_constant_diagonal():
    m = metric.constant_diagonal([1.0, 2.0])
    for x in ([0.0, 0.0], [0.3, 0.9], [1.0, 1.0]):
        assert np.array_equal(metric_eval(m, x), np.diag([1.0, 2.0]))


def test_eval_affine():
    assert np.allclose(metric_eval(metric.affine_diagonal(0.5), [1.0, 0.0]), np.diag([1.5, 1.0]))


def test_eval_out_of_domain():
    with pytest.raises(ValueError):
        metric_eval(metric.identity(2), [1.5, 0.2])
    with pytest.raises(ValueError):
        metric_eval(metric.identity(2), [0.5])


def test_inner_examples():
    ident = metric.identity(2)
    x = [0.5, 0.5]
    assert gamma_inner(ident, x, [1, 0], [1, 0]) == 1.0
    assert gamma_inner(ident, x, [1, 0], [0, 1]) == 0.0
    assert gamma_inner(metric.constant_diagonal([2.0, 1.0]), x, [1, 1], [1, 1]) == 3.0


def test_inner_dimension_mismatch():
    with pytest.raises(ValueError):
        gamma_inner(metric.identity(2), [0.5, 0.5], [1, 0], [1, 0, 0, 0])
    with pytest.raises(ValueError):
        gamma_norm(metric.identity(2), [0.5, 0.5], [1, 0, 0])


def test_norm_examples():
    x = [0.2, 0.7]
    assert gamma_norm(metric.identity(2), x, [3, 4]) == 5.0
    assert gamma_norm(metric.constant_diagonal([4.0, 1.0]), x, [1, 0]) == 2.0
    assert gamma_norm(metric.rotation(), x, [0, 0, 0, 0]) == 0.0


def test_validate_identity():
    pts = np.stack(np.meshgrid(np.linspace(0, 1, 11), np.linspace(0, 1, 11)), -1).reshape(-1, 2)
    rep = validate_metric(metric.identity(2), pts, 0.05)
    assert rep.symmetry_ok and rep.ok
    assert rep.c0_emp == 1.0 and rep.c1_emp == 1.0 and rep.c2_emp == 0.0


def test_validate_affine_constants():
    # fine sweep of the eigenvalues of diag(1 + x1/2, 1) over [0,1]^2
    g = np.linspace(0, 1, 101)
    pts = np.stack(np.meshgrid(g, g), -1).reshape(-1, 2)
    rep = validate_metric(metric.affine_diagonal(0.5), pts, 0.005)
    assert rep.c0_emp == pytest.approx(1.0, abs=1e-14)
    assert rep.c1_emp == pytest.approx(1.5, abs=1e-14)
    assert rep.c2_emp == pytest.approx(0.5, rel=1e-10)
    assert rep.ok


def test_validate_asymmetric():
    bad = metric.MetricField(2, lambda x: np.broadcast_to(np.array([[1.0, 0.3], [0.0, 1.0]]),
                                                          np.shape(x)[:-1] + (2, 2)), 0.5, 2.0, 0.0)
    rep = validate_metric(bad, np.array([[0.5, 0.5]]), 0.1)
    assert not rep.symmetry_ok


def test_library_declared_constants_hold(any_metric):
    g = np.linspace(0, 1, 41)
    pts = np.stack(np.meshgrid(g, g), -1).reshape(-1, 2)
    rep = validate_metric(any_metric, pts, 0.5 / 40)
    assert rep.ok, rep


def test_non_vectorized_closure_falls_back():
    m = metric.MetricField(2, lambda x: np.diag([1.0 + x[0], 2.0]), 1.0, 2.0, 1.0)
    G = m.sample(np.array([[0.5, 0.0], [1.0, 1.0]]))
    assert np.allclose(G, [np.diag([1.5, 2.0]), np.diag([2.0, 2.0])])


vec = st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=4, max_size=4)
point = st.tuples(st.floats(0, 1), st.floats(0, 1))


@settings(max_examples=200, deadline=None)
@given(xi=vec, eta=vec, zeta=vec, a=st.floats(-10, 10), x=point)
def test_inner_bilinear_symmetric(xi, eta, zeta, a, x):
    m = metric.rotation(1.0, 3.0, 1.0)
    xi, eta, zeta = map(np.asarray, (xi, eta, zeta))
    s1 = gamma_inner(m, x, xi, eta)
    s2 = gamma_inner(m, x, eta, xi)
    scale = 1 + np.linalg.norm(xi) * np.linalg.norm(eta) * 3
    assert abs(s1 - s2) <= 1e-12 * scale
    lin = gamma_inner(m, x, a * xi + zeta, eta)
    ref = a * s1 + gamma_inner(m, x, zeta, eta)
    assert abs(lin - ref) <= 1e-12 * (1 + np.linalg.norm(a * xi + zeta) * np.linalg.norm(eta) * 3 * 10)


@settings(max_examples=200, deadline=None)
@given(xi=vec, x=point)
def test_norm_equivalence(xi, x):
    m = metric.rotation(1.0, 3.0, 1.0)
    e = np.linalg.norm(xi)
    val = gamma_norm(m, x, xi)
    assert np.sqrt(m.c0) * e * (1 - 1e-12) <= val <= np.sqrt(m.c1) * e * (1 + 1e-12)
