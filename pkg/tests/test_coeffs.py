import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given
from hypothesis import strategies as st

from neumann_ocp.coeffs import (
    CoefficientError,
    CoefficientSet,
    constant_field,
    eval_exact_gradient,
    make_example,
    theta_branch,
)

LAM = 2.0 / 3.0


@pytest.fixture(scope="module")
def polar_oracle():
    """Optimality-system data derived symbolically in polar coordinates."""
    r, t = sp.symbols("r theta", positive=True)
    lam, dl, al = sp.Rational(2, 3), sp.Integer(6), sp.Rational(-5, 4)
    y = r ** lam * sp.cos(lam * t)
    phi = -y
    br = dl * r ** (al + 1)  # radial convection component

    def lap(w):
        return sp.diff(w, r, 2) + sp.diff(w, r) / r + sp.diff(w, t, 2) / r ** 2

    a0 = r ** al
    f = -lap(y) + br * sp.diff(y, r) + a0 * y
    div_bphi = sp.diff(r * br * phi, r) / r
    # -lap(phi) - div(b phi) + a0 phi = y - y_d
    y_d = y - (-lap(phi) - div_bphi + a0 * phi)
    out = {name: sp.lambdify((r, t), sp.simplify(e), "numpy")
           for name, e in dict(y=y, f=f, y_d=y_d, lap=lap(y), div_b=sp.diff(r * br, r) / r).items()}
    out["dy_dr"] = sp.lambdify((r, t), sp.diff(y, r), "numpy")
    out["dy_dt"] = sp.lambdify((r, t), sp.diff(y, t) / r, "numpy")
    return out


def _samples(n=40, seed=1):
    rng = np.random.default_rng(seed)
    r = rng.uniform(0.05, 1.4, n)
    t = rng.uniform(0.01, 1.5 * np.pi - 0.01, n)
    return r, t, np.column_stack([r * np.cos(t), r * np.sin(t)])


def test_data_match_symbolic_optimality_system(polar_oracle):
    c = make_example()
    r, t, x = _samples()
    np.testing.assert_allclose(c.exact_y(x), polar_oracle["y"](r, t), rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(c.f(x), polar_oracle["f"](r, t), rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(c.y_d(x), polar_oracle["y_d"](r, t), rtol=1e-10, atol=1e-10)
    np.testing.assert_allclose(c.div_b(x), polar_oracle["div_b"](r, t), rtol=1e-12)


def test_exact_state_is_harmonic(polar_oracle):
    r, t, _ = _samples()
    assert np.abs(polar_oracle["lap"](r, t)).max() < 1e-12


def test_gradient_matches_polar_chain_rule(polar_oracle):
    c = make_example()
    r, t, x = _samples()
    g = c.grad_y(x)
    er = np.column_stack([np.cos(t), np.sin(t)])
    et = np.column_stack([-np.sin(t), np.cos(t)])
    np.testing.assert_allclose(np.einsum("nd,nd->n", g, er), polar_oracle["dy_dr"](r, t), atol=1e-12)
    np.testing.assert_allclose(np.einsum("nd,nd->n", g, et), polar_oracle["dy_dt"](r, t), atol=1e-12)


def test_exact_values():
    c = make_example()
    assert c.exact_y(np.array([1.0, 0.0])) == pytest.approx(1.0)
    np.testing.assert_allclose(eval_exact_gradient(c, np.array([1.0, 0.0])), [LAM, 0.0], atol=1e-15)
    assert c.exact_y(np.zeros(2)) == 0.0


@given(st.floats(0.01, 1.4), st.floats(0.01, 1.5 * math.pi - 0.01))
def test_phi_u_identities(r, t):
    c = make_example(nu=0.3)
    x = np.array([r * math.cos(t), r * math.sin(t)])
    assert c.exact_phi(x) == -c.exact_y(x)
    assert c.exact_u(x) == pytest.approx(-c.exact_phi(x) / 0.3, rel=1e-14)
    g = eval_exact_gradient(c, x)
    assert np.linalg.norm(g) == pytest.approx(LAM * r ** (LAM - 1), rel=1e-12)


def test_gradient_finite_differences():
    c = make_example()
    x = np.array([0.3, 0.4])
    e = 1e-6
    fd = [(c.exact_y(x + e * d) - c.exact_y(x - e * d)) / (2 * e) for d in np.eye(2)]
    np.testing.assert_allclose(c.grad_y(x), fd, atol=1e-6)


def test_div_b_value_and_fd():
    c = make_example()
    x = np.array([0.5, 0.0])
    assert c.div_b(x) == pytest.approx(6 * 0.75 * 0.5 ** -1.25, rel=1e-14)
    e = 1e-6
    fd = sum((c.b(x + e * d)[k] - c.b(x - e * d)[k]) / (2 * e) for k, d in enumerate(np.eye(2)))
    assert c.div_b(x) == pytest.approx(fd, abs=1e-6)


def test_fd_laplacian_vanishes():
    c = make_example()
    e = 1e-3
    for x in ([0.4, 0.3], [-0.5, 0.5], [-0.3, -0.6]):
        x = np.array(x)
        lap = sum(c.exact_y(x + e * d) + c.exact_y(x - e * d) - 2 * c.exact_y(x) for d in np.eye(2)) / e ** 2
        assert abs(lap) < 1e-5


def test_boundary_data():
    c = make_example()
    # side 1 of the L-shape: x1 = 1, outward normal (1, 0)
    x = np.array([[1.0, 0.3], [1.0, 0.8]])
    n = np.array([[1.0, 0.0], [1.0, 0.0]])
    dn = c.grad_y(x)[:, 0]
    np.testing.assert_allclose(c.g_y(x, n), dn - c.exact_u(x), atol=1e-15)
    np.testing.assert_allclose(c.state_bc(x, n), dn, atol=1e-15)
    bn = c.b(x)[:, 0]
    np.testing.assert_allclose(c.g_phi(x, n), -dn - c.exact_y(x) * bn, atol=1e-14)
    # on the sides through the corner b is tangential, so b.n = 0
    x0 = np.array([[0.4, 0.0]])
    assert c.coefficients.b_dot_n(x0, np.array([[0.0, -1.0]]))[0] == pytest.approx(0.0, abs=1e-15)


def test_theta_branch():
    assert theta_branch(np.array([1.0, 0.0])) == 0.0
    assert theta_branch(np.array([0.0, 1.0])) == pytest.approx(math.pi / 2)
    assert theta_branch(np.array([0.0, -1.0])) == pytest.approx(1.5 * math.pi)
    assert theta_branch(np.array([-1.0, -1.0])) == pytest.approx(1.25 * math.pi)
    with pytest.raises(CoefficientError):
        theta_branch(np.zeros(2))
    with pytest.raises(CoefficientError):
        eval_exact_gradient(make_example(), np.zeros((1, 2)))


@pytest.mark.parametrize("kw", [dict(alpha=-1.5), dict(alpha=-2.0), dict(nu=0.0), dict(delta=-1.0)])
def test_invalid_parameters(kw):
    with pytest.raises(CoefficientError):
        make_example(**kw)


def test_coefficient_set_defaults_and_checks():
    cs = CoefficientSet()
    x = np.random.default_rng(0).random((5, 7, 2))
    assert cs.eval_a(x).shape == (5, 7, 2, 2)
    assert cs.ellipticity(x) == pytest.approx(1.0)
    assert np.all(cs.eval_b(x) == 0) and np.all(cs.eval_a0(x) == 0)
    cs.check(x)
    with pytest.raises(CoefficientError):
        CoefficientSet(a0=constant_field(-1.0)).check(x)
    with pytest.raises(CoefficientError):
        CoefficientSet(a=lambda p: np.broadcast_to([[1.0, 0.5], [0.0, 1.0]], p.shape[:-1] + (2, 2))).check(x)
    with pytest.raises(CoefficientError):
        CoefficientSet(a=lambda p: np.broadcast_to(-np.eye(2), p.shape[:-1] + (2, 2))).check(x)
    with pytest.raises(CoefficientError):
        CoefficientSet(b=lambda p: p).eval_div_b(x)


def test_manufactured_coefficients_sampled():
    c = make_example()
    _, _, x = _samples()
    c.coefficients.check(x)
    assert c.coefficients.ellipticity(x) == 1.0
