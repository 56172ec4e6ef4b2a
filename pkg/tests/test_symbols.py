import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tilens.errors import ProbeInvalidError, ValidationError
from tilens.material_model import MaterialModel
from tilens.pseudolin import Cutoff
from tilens.symbols import (Relationship, cutoff_estimate_table, effective_symbols, fit_exponent, great_circle,
                            log_mean, principal_prediction, probe_homogeneous, probe_operator_symbol,
                            scan_covector, transverse_u, vanishing_scan)

X0 = np.zeros(3)
ZETA = np.array([100.0, 40.0, 70.0])


@pytest.fixture(scope="module")
def pair():
    return MaterialModel.constant(4, 3, 1, 1.2, 2), MaterialModel.constant(4.2, 3.1, 1, 1.2, 2.3)


def test_transverse_u_vanishes_on_axis(pair):
    m, _ = pair
    np.testing.assert_allclose(transverse_u(m, X0, np.array([[0, 0, 3.0], [1, 0, 0], [0, 0, -2.0]])), [0, 1, 0])


def test_scan_covector_fraction(pair):
    m, _ = pair
    u = np.array([0.01, 0.1, 0.5])
    z = scan_covector(m, X0, 50.0, u)
    np.testing.assert_allclose(np.linalg.norm(z, axis=1), 50.0)
    np.testing.assert_allclose(transverse_u(m, X0, z), u, rtol=1e-12)


def test_great_circle_orthogonal():
    om, w = great_circle(ZETA, 32)
    np.testing.assert_allclose(om @ ZETA, 0.0, atol=1e-12)
    assert w.sum() == pytest.approx(2 * np.pi)


def test_log_mean():
    assert log_mean(1.0, np.e) == pytest.approx(np.e - 1.0)
    assert log_mean(2.0, 2.0) == 2.0


@pytest.mark.parametrize("nu,tol", [("a11", 1e-2), ("E2", 3e-2)])
def test_probe_matches_prediction_at_high_frequency(pair, nu, tol):
    m, mt = pair
    p = principal_prediction(m, mt, "qp", nu, X0, ZETA).scalar
    q = probe_homogeneous(m, mt, "qp", nu, X0, ZETA)
    assert abs(p - q[0, 0]) / abs(p) < tol
    np.testing.assert_allclose(q - np.diag(np.diag(q)), 0.0, atol=1e-20)


def test_probe_homogeneous_rejects_heterogeneous(mild, pair):
    with pytest.raises(ValidationError):
        probe_homogeneous(mild, None, "qp", "a11", X0, ZETA)


def test_probe_operator_nyquist():
    with pytest.raises(ProbeInvalidError):
        probe_operator_symbol(lambda x, z, s: np.eye(3), X0, [[40.0, 0, 0]], h=0.1)
    out = probe_operator_symbol(lambda x, z, s: np.eye(3), X0, [[30.0, 0, 0]], h=0.1)
    assert out[0].meta["sigma"] == pytest.approx(0.8)


# exponents frozen from the great-circle prediction on u in [0.02, 0.2]
@pytest.mark.parametrize("mode,nu,expected", [("qp", "a11", 0.0), ("qp", "a33", 2.0), ("qp", "E2", 2.0),
                                              ("qsv", "a11", 2.0), ("qsv", "a33", 4.0), ("qsv", "E2", 2.0)])
def test_vanishing_exponents(pair, mode, nu, expected):
    m, mt = pair
    e, _, _ = vanishing_scan(m, mt, mode, nu, X0, method="prediction")
    assert e == pytest.approx(expected, abs=0.05)


def test_cutoff_table_brackets_and_matches_prediction(pair):
    m, mt = pair
    tab = cutoff_estimate_table(m, mt, X0, ZETA, 0.15)
    for key, (mode, nu) in {"N11+": ("qp", "a11"), "N33+": ("qp", "a33"), "NE2+": ("qp", "E2"),
                            "NE2-": ("qsv", "E2"), "N11-": ("qsv", "a11")}.items():
        pred, lo, hi = tab[key]
        assert lo <= pred <= hi
        direct = principal_prediction(m, mt, mode, nu, X0, ZETA, Cutoff(0.15)).scalar.real
        assert lo <= direct <= hi, key


def test_relationship_parse():
    r = Relationship.parse("a33 = 0.5*a11 + 0.1*E2")
    assert r.target == "a33"
    with pytest.raises(ValidationError):
        Relationship.parse("a33 = a33 + 1")
    with pytest.raises(ValidationError):
        Relationship.parse("0.5*a11")


def test_effective_symbol_linear_relation(pair):
    m, mt = pair
    eff = effective_symbols(m, mt, "a33 = 0.5*a11 + 0.1*E2", X0, ZETA, 0.15)
    assert eff.unknowns == ("a11", "E2")
    assert eff.ftilde == pytest.approx({"a11": 0.5, "E2": 0.1})
    assert eff.det_direct == pytest.approx(eff.det_table, rel=1e-2)
    assert all(eff.flags.values())


@settings(max_examples=30, deadline=None)
@given(st.floats(0.5, 3.0), st.floats(-5.0, 5.0))
def test_fit_exponent_recovers_power(p, logc):
    u = np.geomspace(0.01, 0.3, 7)
    assert fit_exponent(u, np.exp(logc) * u ** p) == pytest.approx(p, abs=1e-10)


@settings(max_examples=10, deadline=None)
@given(st.floats(20.0, 400.0), st.floats(0.5, 4.0))
def test_principal_prediction_degree_minus_one(pair, zmag, s):
    m, mt = pair
    z = zmag * ZETA / np.linalg.norm(ZETA)
    a = principal_prediction(m, mt, "qsv", "E2", X0, z).scalar
    b = principal_prediction(m, mt, "qsv", "E2", X0, s * z).scalar
    assert b * s == pytest.approx(a, rel=1e-12)
