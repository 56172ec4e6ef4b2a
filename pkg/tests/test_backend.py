import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import ndimage

from tilens import _backend, _pykernels

ck = pytest.importorskip("tilens._ckernels")


def _params(n, rng):
    xi = rng.normal(size=(n, 3))
    return (rng.uniform(4.0, 5.0, n), rng.uniform(3.0, 3.5, n), rng.uniform(0.8, 1.0, n), rng.uniform(1.1, 1.3, n),
            rng.uniform(0.0, 2.0, n), xi[:, 2], np.einsum("ni,ni->n", xi, xi))


def _close(a, b, tol):
    if isinstance(a, tuple):
        for x, y in zip(a, b):
            _close(x, y, tol)
    elif a is None:
        assert b is None
    else:
        np.testing.assert_allclose(a, b, rtol=tol, atol=tol)


def test_compiled_backend_selected_by_default():
    if os.environ.get("TILENS_PURE", "0") in ("1", "true", "yes"):
        pytest.skip("pure backend forced")
    assert _backend.BACKEND == "cython"


def test_pure_backend_forced_by_environment():
    env = dict(os.environ, TILENS_PURE="1")
    out = subprocess.run([sys.executable, "-c", "from tilens import _backend; print(_backend.BACKEND)"], env=env,
                         capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.sampled_from([1, -1, 0]), st.integers(0, 2))
def test_ti_jet_parity(seed, branch, order):
    P = _params(50, np.random.default_rng(seed))
    _close(ck.ti_jet(*P, branch, order), _pykernels.ti_jet(*P, branch, order), 1e-11)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.integers(0, 2))
def test_bspline_parity(seed, order):
    rng = np.random.default_rng(seed)
    coef = rng.normal(size=(7, 8, 9))
    s = rng.uniform(0, 1, (40, 3)) * (np.array(coef.shape) - 1)
    _close(ck.bspline3_jet(coef, s, order), _pykernels.bspline3_jet(coef, s, order), 1e-12)


def test_bspline_matches_scipy_interpolation():
    rng = np.random.default_rng(0)
    data = rng.normal(size=(9, 9, 9))
    coef = ndimage.spline_filter(data, order=3, mode="mirror")
    s = rng.uniform(0, 8, (30, 3))
    ref = ndimage.map_coordinates(coef, s.T, order=3, mode="mirror", prefilter=False)
    for k in (ck, _pykernels):
        val = k.bspline3_jet(coef, s, 0)
        val = val[0] if isinstance(val, tuple) else val
        np.testing.assert_allclose(val, ref, atol=1e-12)


def test_ti_jet_gradient_matches_finite_differences():
    P = list(_params(5, np.random.default_rng(1)))
    g, dg, _, bad = _pykernels.ti_jet(*P, 1, 2)
    assert not bad.any()
    h = 1e-6
    for j in range(7):
        up = [p.copy() for p in P]
        dn = [p.copy() for p in P]
        up[j] += h
        dn[j] -= h
        fd = (_pykernels.ti_jet(*up, 1, 0)[0] - _pykernels.ti_jet(*dn, 1, 0)[0]) / (2 * h)
        np.testing.assert_allclose(dg[:, j], fd, rtol=1e-6, atol=1e-8)
