"""Pure NumPy reference implementations of the hot kernels.

These mirror ``_ckernels.pyx`` line for line and are used when the compiled
extension is unavailable (or when ``TILENS_PURE=1``).
"""

import numpy as np

# variable order for the Hamiltonian jet
NVAR = 7  # a11, a33, a55, a66, E2, T, S


def ti_jet(a11, a33, a55, a66, e2, T, S, branch, order=2):
    """Value, gradient and Hessian of a TI wave speed in primitive variables.

    Parameters
    ----------
    a11, a33, a55, a66, e2 : ndarray, shape (n,)
        Material parameters at the evaluation points.
    T, S : ndarray, shape (n,)
        ``T = xi . xibar`` and ``S = |xi|^2``.
    branch : int
        ``+1`` for qP, ``-1`` for qSV, ``0`` for qSH.
    order : int
        Highest derivative order returned (0, 1 or 2).

    Returns
    -------
    g : ndarray, shape (n,)
    dg : ndarray, shape (n, 7) or None
    d2g : ndarray, shape (n, 7, 7) or None
    bad : ndarray of bool, shape (n,)
        Points where the discriminant is not positive.
    """
    a11, a33, a55, a66, e2, T, S = (np.asarray(v, dtype=float) for v in (a11, a33, a55, a66, e2, T, S))
    n = T.shape[0]
    T2 = T * T
    I2 = S - T2
    gw = np.zeros((n, NVAR))
    Hw = np.zeros((n, NVAR, NVAR))
    bad = np.zeros(n, dtype=bool)
    if branch == 0:
        g = a66 * I2 + a55 * T2
        gw[:, 2] = T2
        gw[:, 3] = I2
        gw[:, 5] = a66
        gw[:, 6] = a55
        Hw[:, 3, 5] = Hw[:, 5, 3] = 1.0
        Hw[:, 2, 6] = Hw[:, 6, 2] = 1.0
    else:
        sg = float(branch)
        d1 = a11 - a55
        d3 = a33 - a55
        A = d1 * I2 + d3 * T2
        B = 4.0 * e2 * I2 * T2
        D = A * A - B
        bad = ~(D > 0.0)
        R = np.sqrt(np.where(bad, 1.0, D))
        L = (a11 + a55) * I2 + (a33 + a55) * T2
        g = L + sg * R
        # 1 +- A/R in cancellation-free form
        cm = -B / (R * (R + A))
        cp = 2.0 - cm
        c_same = cp if branch > 0 else cm
        c_opp = cm if branch > 0 else cp
        gw[:, 0] = I2 * c_same
        gw[:, 1] = T2 * c_same
        gw[:, 2] = (I2 + T2) * c_opp
        gw[:, 4] = -2.0 * sg * I2 * T2 / R
        gw[:, 5] = (a11 + a55) + sg * (A * d1 - 2.0 * e2 * T2) / R
        gw[:, 6] = (a33 + a55) + sg * (A * d3 - 2.0 * e2 * I2) / R
        if order >= 2:
            Aw = np.zeros((n, NVAR))
            Aw[:, 0] = I2
            Aw[:, 1] = T2
            Aw[:, 2] = -(I2 + T2)
            Aw[:, 5] = d1
            Aw[:, 6] = d3
            Bw = np.zeros((n, NVAR))
            Bw[:, 4] = 4.0 * I2 * T2
            Bw[:, 5] = 4.0 * e2 * T2
            Bw[:, 6] = 4.0 * e2 * I2
            R3 = R ** 3
            AA = Aw[:, :, None] * Aw[:, None, :]
            AB = Aw[:, :, None] * Bw[:, None, :]
            BB = Bw[:, :, None] * Bw[:, None, :]
            Hw = sg * ((-B / R3)[:, None, None] * AA
                       + (A / (2.0 * R3))[:, None, None] * (AB + np.swapaxes(AB, 1, 2))
                       - BB / (4.0 * R3)[:, None, None])
            # L_ww + sg*A*A_ww/R, combined without cancellation
            for i, j, c in ((0, 5, c_same), (1, 6, c_same), (2, 5, c_opp), (2, 6, c_opp)):
                Hw[:, i, j] += c
                Hw[:, j, i] += c
            # -sg*B_ww/(2R)
            for i, j, v in ((4, 5, 4.0 * T2), (4, 6, 4.0 * I2), (5, 6, 4.0 * e2)):
                w = -sg * v / (2.0 * R)
                Hw[:, i, j] += w
                Hw[:, j, i] += w
    if order < 1:
        return g, None, None, bad
    # chain rule from (.., I2, T2) to (.., T, S)
    dg = gw.copy()
    dg[:, 5] = 2.0 * T * (gw[:, 6] - gw[:, 5])
    dg[:, 6] = gw[:, 5]
    if order < 2:
        return g, dg, None, bad
    M = Hw.copy()
    M[:, :, 5] = 2.0 * T[:, None] * (Hw[:, :, 6] - Hw[:, :, 5])
    M[:, :, 6] = Hw[:, :, 5]
    d2g = M.copy()
    d2g[:, 5, :] = 2.0 * T[:, None] * (M[:, 6, :] - M[:, 5, :])
    d2g[:, 6, :] = M[:, 5, :]
    d2g[:, 5, 5] += 2.0 * (gw[:, 6] - gw[:, 5])
    return g, dg, d2g, bad


_W = (
    lambda t: (1.0 - t) ** 3 / 6.0,
    lambda t: (3.0 * t ** 3 - 6.0 * t ** 2 + 4.0) / 6.0,
    lambda t: (-3.0 * t ** 3 + 3.0 * t ** 2 + 3.0 * t + 1.0) / 6.0,
    lambda t: t ** 3 / 6.0,
)
_DW = (
    lambda t: -0.5 * (1.0 - t) ** 2,
    lambda t: 0.5 * (3.0 * t ** 2 - 4.0 * t),
    lambda t: 0.5 * (-3.0 * t ** 2 + 2.0 * t + 1.0),
    lambda t: 0.5 * t ** 2,
)
_D2W = (
    lambda t: 1.0 - t,
    lambda t: 3.0 * t - 2.0,
    lambda t: 1.0 - 3.0 * t,
    lambda t: t,
)


def _mirror(i, n):
    if n == 1:
        return np.zeros_like(i)
    period = 2 * (n - 1)
    i = np.abs(i) % period
    return np.where(i >= n, period - i, i)


def bspline3_jet(coef, s, order=2):
    """Evaluate a tensor cubic B-spline and its derivatives.

    Parameters
    ----------
    coef : ndarray, shape (n0, n1, n2)
        Spline coefficients (mirror boundary convention).
    s : ndarray, shape (n, 3)
        Evaluation points in fractional index coordinates, already clamped
        to the grid box.
    order : int
        0, 1 or 2.

    Returns
    -------
    val : ndarray, shape (n,)
    grad : ndarray, shape (n, 3) or None
    hess : ndarray, shape (n, 3, 3) or None
        Derivatives with respect to index coordinates.
    """
    coef = np.ascontiguousarray(coef, dtype=float)
    s = np.asarray(s, dtype=float)
    n = s.shape[0]
    dims = coef.shape
    base = []
    w = []
    for d in range(3):
        fl = np.floor(s[:, d])
        fl = np.minimum(fl, dims[d] - 2) if dims[d] > 1 else fl
        t = s[:, d] - fl
        base.append(fl.astype(np.int64) - 1)
        w.append([np.stack([f(t) for f in tab], axis=1) for tab in (_W, _DW, _D2W)[: order + 1]])
    val = np.zeros(n)
    grad = np.zeros((n, 3)) if order >= 1 else None
    hess = np.zeros((n, 3, 3)) if order >= 2 else None
    for i in range(4):
        ii = _mirror(base[0] + i, dims[0])
        for j in range(4):
            jj = _mirror(base[1] + j, dims[1])
            for k in range(4):
                kk = _mirror(base[2] + k, dims[2])
                c = coef[ii, jj, kk]
                w0 = w[0][0][:, i]
                w1 = w[1][0][:, j]
                w2 = w[2][0][:, k]
                val += c * w0 * w1 * w2
                if order >= 1:
                    d0 = w[0][1][:, i]
                    d1 = w[1][1][:, j]
                    d2 = w[2][1][:, k]
                    grad[:, 0] += c * d0 * w1 * w2
                    grad[:, 1] += c * w0 * d1 * w2
                    grad[:, 2] += c * w0 * w1 * d2
                if order >= 2:
                    hess[:, 0, 0] += c * w[0][2][:, i] * w1 * w2
                    hess[:, 1, 1] += c * w0 * w[1][2][:, j] * w2
                    hess[:, 2, 2] += c * w0 * w1 * w[2][2][:, k]
                    hess[:, 0, 1] += c * d0 * d1 * w2
                    hess[:, 0, 2] += c * d0 * w1 * d2
                    hess[:, 1, 2] += c * w0 * d1 * d2
    if order >= 2:
        hess[:, 1, 0] = hess[:, 0, 1]
        hess[:, 2, 0] = hess[:, 0, 2]
        hess[:, 2, 1] = hess[:, 1, 2]
    return val, grad, hess
