import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tilens.errors import ValidationError
from tilens.fields import BumpField
from tilens.material_model import eval_G
from tilens.pseudolin import (Cutoff, composite_gl, gauss_legendre, lens_difference, parse_nu,
                              pseudo_data_residual, su_identity_check, weight_E_nu)
from tilens.raytracer import normalize_covector


def _rays(m, mode, n, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-0.3, 0.3, (n, 3))
    return x, normalize_covector(m, mode, x, rng.normal(size=(n, 3)))


def test_parse_nu():
    assert parse_nu("E^2") == "E2"
    assert parse_nu("e2") == "E2"
    assert parse_nu("a11") == "a11"
    with pytest.raises(ValidationError):
        parse_nu("a55")


def test_gauss_legendre_exact_for_polynomials():
    s, w = gauss_legendre(0.0, 2.0, 8)
    assert np.sum(w * s ** 15) == pytest.approx(2.0 ** 16 / 16, rel=1e-13)
    s, w = composite_gl(np.array([0.0]), np.array([1.0]), 4, 4)
    assert np.sum(w * np.cos(s)) == pytest.approx(np.sin(1.0), rel=1e-12)


def test_identity_vanishes_for_equal_models(mild):
    x, xi = _rays(mild, "qp", 4)
    r, lhs, rhs = su_identity_check(mild, mild, "qp", x, xi, 0.6)
    np.testing.assert_allclose(lhs, 0.0, atol=0)
    np.testing.assert_allclose(rhs, 0.0, atol=1e-15)


def test_identity_constant_a11_difference(homogeneous):
    from tilens.material_model import MaterialModel
    mt = MaterialModel.constant(4.1, 3.0, 1.0, 1.2, 2.0)
    x, xi = _rays(homogeneous, "qp", 6)
    r, _, _ = su_identity_check(homogeneous, mt, "qp", x, xi, 0.8)
    assert r.max() < 1e-6


def test_identity_compact_bumps_need_finer_panels(mild):
    # C^3 bumps: the kink at the support edge limits the panel rule
    mt = mild.perturbed(BumpField((0.1, 0, 0), 0.15, radius=0.4), None, BumpField((0, 0.1, 0), 0.1, radius=0.5))
    x, xi = _rays(mild, "qsv", 6, seed=4)
    r, _, _ = su_identity_check(mild, mt, "qsv", x, xi, 0.9, panels=64)
    assert r.max() < 1e-5


def test_pseudo_data_matches_lens_difference(homogeneous):
    mt = homogeneous.perturbed(BumpField((0.1, 0, 0), 0.1, radius=0.5), None, BumpField((0, 0.1, 0), 0.1, radius=0.4))
    x, xi = _rays(homogeneous, "qp", 4)
    a = pseudo_data_residual(homogeneous, mt, "qp", x, xi)
    b = lens_difference(homogeneous, mt, "qp", x, xi)
    np.testing.assert_allclose(a, b, rtol=1e-4, atol=1e-9)


def test_weight_is_parameter_derivative(homogeneous):
    rng = np.random.default_rng(1)
    x = np.zeros((5, 3))
    xi = rng.normal(size=(5, 3))
    from tilens.material_model import MaterialModel
    h = 1e-6
    for nu, idx in (("a11", 0), ("a33", 1), ("E2", 4)):
        p = np.array([4.0, 3.0, 1.0, 1.2, 2.0])
        up, dn = p.copy(), p.copy()
        up[idx] += h
        dn[idx] -= h
        fd = (eval_G(MaterialModel.constant(*up), "qsv", x, xi) - eval_G(MaterialModel.constant(*dn), "qsv", x, xi)) / (2 * h)
        np.testing.assert_allclose(weight_E_nu(homogeneous, None, "qsv", nu, x, xi), fd, rtol=1e-7, atol=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.02, 0.9), st.floats(-1.0, 1.0))
def test_cutoff_profile_properties(eps, u):
    c = Cutoff(eps)
    v = float(c.profile(np.array([u]))[0])
    assert 0.0 <= v <= 1.0
    if abs(u) <= 0.5 * eps:
        assert v == 1.0
    if abs(u) >= eps:
        assert v == 0.0
    assert float(c.profile(np.array([-u]))[0]) == v
    # monotone in |u|
    w = float(c.profile(np.array([min(abs(u) + 0.01, 1.0)]))[0])
    assert w <= v + 1e-15
