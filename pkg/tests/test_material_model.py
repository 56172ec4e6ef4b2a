import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import central_diff, christoffel_eigs, plug_in_G
from tilens.errors import ConvexityError, ModelInvalidError, ValidationError
from tilens.fields import AxisField, ConstantField, ExprField
from tilens.material_model import (MaterialModel, Mode, a_pm, eval_G, grad_x_G, grad_xi_G, h_pm, hess_xi_G,
                                   xi_of_omega, xi_T_xi_I)

ORIGIN = np.zeros((1, 3))


def test_mode_parse_aliases_and_errors():
    assert Mode.parse("P") is Mode.parse("qp")
    assert Mode.parse("sv").sign == -1
    assert Mode.parse("qsh").sign == 0
    with pytest.raises(ValidationError):
        Mode.parse("s")


def test_isotropic_values():
    m = MaterialModel.isotropic(1.0, 1.0)
    xi = np.array([[0.6, 0.0, 0.8]])
    assert eval_G(m, "qp", ORIGIN, xi)[0] == pytest.approx(6.0, rel=1e-14)
    assert eval_G(m, "qsv", ORIGIN, xi)[0] == pytest.approx(2.0, rel=1e-14)


def test_equatorial_value_matches_2a():
    m = MaterialModel.constant(4.0, 3.0, 1.0, 1.2, 2.0)
    xi = np.array([[1.0, 0.0, 0.0]])
    assert eval_G(m, "qp", ORIGIN, xi)[0] == pytest.approx(8.0, rel=1e-14)
    assert eval_G(m, "qsv", ORIGIN, xi)[0] == pytest.approx(2.0, rel=1e-14)


def test_generic_point_plug_in_oracle():
    # frozen from the scalar plug-in oracle: 4.5 +- sqrt(4.25)
    m = MaterialModel.constant(4.0, 3.0, 1.0, 1.2, 2.0)
    xi = np.array([[np.sqrt(0.5), 0.0, np.sqrt(0.5)]])
    assert eval_G(m, "qp", ORIGIN, xi)[0] == pytest.approx(6.5615528128088303, rel=1e-14)
    assert eval_G(m, "qsv", ORIGIN, xi)[0] == pytest.approx(2.4384471871911697, rel=1e-14)
    assert plug_in_G(4.0, 3.0, 1.0, 2.0, 0.5, 0.5, 1) == pytest.approx(6.5615528128088303, rel=1e-15)


def test_qsh_convention():
    m = MaterialModel.constant(4.0, 3.0, 1.0, 1.2, 2.0)
    xi = np.array([[0.6, 0.0, 0.8]])
    assert eval_G(m, "qsh", ORIGIN, xi)[0] == pytest.approx(1.2 * 0.36 + 1.0 * 0.64, rel=1e-14)


def test_grad_xi_on_equator_is_4a_xi():
    m = MaterialModel.constant(4.0, 3.0, 1.0, 1.2, 2.0)
    xi = np.array([[0.3, -0.7, 0.0]])
    np.testing.assert_allclose(grad_xi_G(m, "qp", ORIGIN, xi), 16.0 * xi, rtol=1e-13)
    np.testing.assert_allclose(grad_xi_G(m, "qsv", ORIGIN, xi), 4.0 * xi, rtol=1e-13)


def test_hessian_diagonal_on_equator():
    m = MaterialModel.constant(4.0, 3.0, 1.0, 1.2, 2.0)
    xi = np.array([[1.0, 0.0, 0.0]])
    H = hess_xi_G(m, "qp", ORIGIN, xi)[0]
    np.testing.assert_allclose(H - np.diag(np.diag(H)), 0.0, atol=1e-12)
    assert H[2, 2] == pytest.approx(h_pm(m, "qp", ORIGIN)[0], rel=1e-12)


@pytest.mark.parametrize("mode", ["qp", "qsv", "qsh"])
def test_gradients_against_finite_differences(mild, mode):
    rng = np.random.default_rng(3)
    x = rng.uniform(-0.4, 0.4, (5, 3))
    xi = rng.normal(size=(5, 3))
    gx = central_diff(lambda y: eval_G(mild, mode, y, xi), x)
    gxi = central_diff(lambda k: eval_G(mild, mode, x, k), xi)
    np.testing.assert_allclose(grad_x_G(mild, mode, x, xi), gx, rtol=1e-8, atol=1e-9)
    np.testing.assert_allclose(grad_xi_G(mild, mode, x, xi), gxi, rtol=1e-8, atol=1e-9)


def test_grad_x_axis_direction_on_equator():
    m = MaterialModel(ExprField("4 + 0.2*z"), ConstantField(3.0), ConstantField(1.0), ConstantField(1.2),
                      ConstantField(2.0), AxisField(direction=(0, 0, 1)))
    xi = np.array([[0.6, 0.8, 0.0]])
    assert grad_x_G(m, "qp", ORIGIN, xi)[0, 2] == pytest.approx(2 * 0.2, rel=1e-12)


def test_homogeneous_grad_x_is_zero(homogeneous):
    xi = np.random.default_rng(0).normal(size=(4, 3))
    np.testing.assert_allclose(grad_x_G(homogeneous, "qp", np.zeros((4, 3)), xi), 0.0, atol=1e-15)


@pytest.mark.parametrize("mode", ["qp", "qsv", "qsh"])
def test_xi_of_omega_inverts_group_map(mild, mode):
    rng = np.random.default_rng(5)
    om = rng.normal(size=(20, 3))
    x = rng.uniform(-0.3, 0.3, (20, 3))
    xi = xi_of_omega(mild, mode, x, om)
    np.testing.assert_allclose(grad_xi_G(mild, mode, x, xi), om, atol=1e-11)


def test_a_pm_values(homogeneous):
    np.testing.assert_allclose(a_pm(homogeneous, "qp", ORIGIN), 4.0)
    np.testing.assert_allclose(a_pm(homogeneous, "qsv", ORIGIN), 1.0)
    np.testing.assert_allclose(h_pm(homogeneous, "qp", ORIGIN), 4 * (3 - 2 / 3))
    np.testing.assert_allclose(h_pm(homogeneous, "qsv", ORIGIN), 4 * (1 + 2 / 3))


def test_validate_rejects_bad_models():
    bad = MaterialModel.constant(1.0, 3.0, 1.0, 1.2, 0.0)
    with pytest.raises(ModelInvalidError, match="a11 - a55"):
        bad.validate(ORIGIN)
    touching = MaterialModel.constant(4.0, 3.0, 1.0, 1.2, 6.0)
    with pytest.raises(ModelInvalidError):
        touching.validate(ORIGIN)
    MaterialModel.constant(4.0, 3.0, 1.0, 1.2, 2.0).validate(ORIGIN)


def test_axis_field_requires_one_source():
    with pytest.raises(ValidationError):
        AxisField()
    with pytest.raises(ValidationError):
        AxisField(direction=(0, 0, 0))


def test_xi_T_xi_I_decomposition(mild):
    xi = np.array([[1.0, 2.0, 3.0]])
    T, I2 = xi_T_xi_I(mild, ORIGIN, xi)
    assert T[0] ** 2 + I2[0] == pytest.approx(14.0, rel=1e-14)


params = st.tuples(st.floats(2.0, 6.0), st.floats(2.0, 6.0), st.floats(0.3, 1.5), st.floats(0.3, 2.0),
                   st.floats(0.0, 0.95))
vec = st.lists(st.floats(-1.0, 1.0), min_size=3, max_size=3).filter(lambda v: np.linalg.norm(v) > 1e-2)


def _model(p):
    a11, a33, a55, a66, frac = p
    return MaterialModel.constant(a11, a33, a55, a66, frac * (a11 - a55) * (a33 - a55))


@settings(max_examples=60, deadline=None)
@given(params, vec, st.floats(0.1, 10.0))
def test_degree_two_homogeneity(p, xi, s):
    m = _model(p)
    xi = np.array([xi])
    for mode in ("qp", "qsv", "qsh"):
        np.testing.assert_allclose(eval_G(m, mode, ORIGIN, s * xi), s * s * eval_G(m, mode, ORIGIN, xi), rtol=1e-12)


@settings(max_examples=60, deadline=None)
@given(params, vec)
def test_branch_ordering_and_christoffel(p, xi):
    m = _model(p)
    xi = np.array([xi])
    gp, gm = eval_G(m, "qp", ORIGIN, xi)[0], eval_G(m, "qsv", ORIGIN, xi)[0]
    assert gp > gm > 0
    P = m.params_jet(ORIGIN, 0)[0][0]
    ev = christoffel_eigs(*P, (0, 0, 1), xi)[0]
    assert gp == pytest.approx(2 * ev[2], rel=1e-10)
    assert min(abs(gm - 2 * ev[0]), abs(gm - 2 * ev[1])) <= 1e-10 * gp


@settings(max_examples=40, deadline=None)
@given(params, vec, st.floats(0.0, 2 * np.pi))
def test_rotation_about_axis_invariance(p, xi, ang):
    m = _model(p)
    c, s = np.cos(ang), np.sin(ang)
    R = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])
    xi = np.array([xi])
    for mode in ("qp", "qsv", "qsh"):
        np.testing.assert_allclose(eval_G(m, mode, ORIGIN, xi @ R.T), eval_G(m, mode, ORIGIN, xi), rtol=1e-12)
        np.testing.assert_allclose(eval_G(m, mode, ORIGIN, -xi), eval_G(m, mode, ORIGIN, xi), rtol=1e-14)
