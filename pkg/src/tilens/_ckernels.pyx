# Compiled versions of the hot kernels; see _pykernels.py for the reference.
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, floor, fabs

cnp.import_array()

DEF NV = 7


def ti_jet(a11_, a33_, a55_, a66_, e2_, T_, S_, int branch, int order=2):
    """Value, gradient and Hessian of a TI wave speed (compiled)."""
    cdef double[::1] a11 = np.ascontiguousarray(a11_, dtype=np.float64)
    cdef double[::1] a33 = np.ascontiguousarray(a33_, dtype=np.float64)
    cdef double[::1] a55 = np.ascontiguousarray(a55_, dtype=np.float64)
    cdef double[::1] a66 = np.ascontiguousarray(a66_, dtype=np.float64)
    cdef double[::1] e2 = np.ascontiguousarray(e2_, dtype=np.float64)
    cdef double[::1] Tv = np.ascontiguousarray(T_, dtype=np.float64)
    cdef double[::1] Sv = np.ascontiguousarray(S_, dtype=np.float64)
    cdef Py_ssize_t n = Tv.shape[0]
    g_ = np.empty(n)
    bad_ = np.zeros(n, dtype=np.uint8)
    dg_ = np.zeros((n, NV)) if order >= 1 else None
    d2g_ = np.zeros((n, NV, NV)) if order >= 2 else None
    cdef double[::1] g = g_
    cdef unsigned char[::1] bad = bad_
    cdef double[:, ::1] dg
    cdef double[:, :, ::1] d2g
    if order >= 1:
        dg = dg_
    if order >= 2:
        d2g = d2g_
    cdef double gw[NV]
    cdef double Hw[NV][NV]
    cdef double M[NV][NV]
    cdef double Aw[NV]
    cdef double Bw[NV]
    cdef Py_ssize_t p, i, j
    cdef double T, T2, I2, d1, d3, A, B, D, R, R3, L, cm, cp, cs, co, sg, w
    sg = <double>branch
    for p in range(n):
        T = Tv[p]
        T2 = T * T
        I2 = Sv[p] - T2
        for i in range(NV):
            gw[i] = 0.0
            for j in range(NV):
                Hw[i][j] = 0.0
        if branch == 0:
            g[p] = a66[p] * I2 + a55[p] * T2
            gw[2] = T2
            gw[3] = I2
            gw[5] = a66[p]
            gw[6] = a55[p]
            Hw[3][5] = 1.0
            Hw[5][3] = 1.0
            Hw[2][6] = 1.0
            Hw[6][2] = 1.0
        else:
            d1 = a11[p] - a55[p]
            d3 = a33[p] - a55[p]
            A = d1 * I2 + d3 * T2
            B = 4.0 * e2[p] * I2 * T2
            D = A * A - B
            if not (D > 0.0):
                bad[p] = 1
                D = 1.0
            R = sqrt(D)
            L = (a11[p] + a55[p]) * I2 + (a33[p] + a55[p]) * T2
            g[p] = L + sg * R
            cm = -B / (R * (R + A))
            cp = 2.0 - cm
            if branch > 0:
                cs = cp
                co = cm
            else:
                cs = cm
                co = cp
            gw[0] = I2 * cs
            gw[1] = T2 * cs
            gw[2] = (I2 + T2) * co
            gw[4] = -2.0 * sg * I2 * T2 / R
            gw[5] = (a11[p] + a55[p]) + sg * (A * d1 - 2.0 * e2[p] * T2) / R
            gw[6] = (a33[p] + a55[p]) + sg * (A * d3 - 2.0 * e2[p] * I2) / R
            if order >= 2:
                for i in range(NV):
                    Aw[i] = 0.0
                    Bw[i] = 0.0
                Aw[0] = I2
                Aw[1] = T2
                Aw[2] = -(I2 + T2)
                Aw[5] = d1
                Aw[6] = d3
                Bw[4] = 4.0 * I2 * T2
                Bw[5] = 4.0 * e2[p] * T2
                Bw[6] = 4.0 * e2[p] * I2
                R3 = R * R * R
                for i in range(NV):
                    for j in range(NV):
                        Hw[i][j] = sg * (-B / R3 * Aw[i] * Aw[j]
                                         + A / (2.0 * R3) * (Aw[i] * Bw[j] + Bw[i] * Aw[j])
                                         - Bw[i] * Bw[j] / (4.0 * R3))
                Hw[0][5] += cs
                Hw[5][0] += cs
                Hw[1][6] += cs
                Hw[6][1] += cs
                Hw[2][5] += co
                Hw[5][2] += co
                Hw[2][6] += co
                Hw[6][2] += co
                w = -sg * 4.0 * T2 / (2.0 * R)
                Hw[4][5] += w
                Hw[5][4] += w
                w = -sg * 4.0 * I2 / (2.0 * R)
                Hw[4][6] += w
                Hw[6][4] += w
                w = -sg * 4.0 * e2[p] / (2.0 * R)
                Hw[5][6] += w
                Hw[6][5] += w
        if order >= 1:
            for i in range(5):
                dg[p, i] = gw[i]
            dg[p, 5] = 2.0 * T * (gw[6] - gw[5])
            dg[p, 6] = gw[5]
        if order >= 2:
            for i in range(NV):
                for j in range(5):
                    M[i][j] = Hw[i][j]
                M[i][5] = 2.0 * T * (Hw[i][6] - Hw[i][5])
                M[i][6] = Hw[i][5]
            for j in range(NV):
                for i in range(5):
                    d2g[p, i, j] = M[i][j]
                d2g[p, 5, j] = 2.0 * T * (M[6][j] - M[5][j])
                d2g[p, 6, j] = M[5][j]
            d2g[p, 5, 5] += 2.0 * (gw[6] - gw[5])
    return g_, dg_, d2g_, bad_.astype(bool)


cdef inline Py_ssize_t _mirror(Py_ssize_t i, Py_ssize_t n) nogil:
    cdef Py_ssize_t period
    if n == 1:
        return 0
    period = 2 * (n - 1)
    if i < 0:
        i = -i
    i = i % period
    if i >= n:
        i = period - i
    return i


cdef inline void _weights(double t, double* w, double* dw, double* d2w) nogil:
    cdef double u = 1.0 - t
    w[0] = u * u * u / 6.0
    w[1] = (3.0 * t * t * t - 6.0 * t * t + 4.0) / 6.0
    w[2] = (-3.0 * t * t * t + 3.0 * t * t + 3.0 * t + 1.0) / 6.0
    w[3] = t * t * t / 6.0
    dw[0] = -0.5 * u * u
    dw[1] = 0.5 * (3.0 * t * t - 4.0 * t)
    dw[2] = 0.5 * (-3.0 * t * t + 2.0 * t + 1.0)
    dw[3] = 0.5 * t * t
    d2w[0] = u
    d2w[1] = 3.0 * t - 2.0
    d2w[2] = 1.0 - 3.0 * t
    d2w[3] = t


def bspline3_jet(coef_, s_, int order=2):
    """Tensor cubic B-spline value, gradient and Hessian (compiled)."""
    cdef double[:, :, ::1] coef = np.ascontiguousarray(coef_, dtype=np.float64)
    cdef double[:, ::1] s = np.ascontiguousarray(s_, dtype=np.float64)
    cdef Py_ssize_t n = s.shape[0]
    cdef Py_ssize_t n0 = coef.shape[0], n1 = coef.shape[1], n2 = coef.shape[2]
    val_ = np.zeros(n)
    grad_ = np.zeros((n, 3))
    hess_ = np.zeros((n, 3, 3))
    cdef double[::1] val = val_
    cdef double[:, ::1] grad = grad_
    cdef double[:, :, ::1] hess = hess_
    cdef double w0[4], w1[4], w2[4], dw0[4], dw1[4], dw2[4], ew0[4], ew1[4], ew2[4]
    cdef Py_ssize_t p, i, j, k, b0, b1, b2, ii, jj, kk
    cdef double f0, f1, f2, c, v, gx, gy, gz, hxx, hyy, hzz, hxy, hxz, hyz
    with nogil:
        for p in range(n):
            f0 = floor(s[p, 0])
            f1 = floor(s[p, 1])
            f2 = floor(s[p, 2])
            if n0 > 1 and f0 > n0 - 2:
                f0 = n0 - 2
            if n1 > 1 and f1 > n1 - 2:
                f1 = n1 - 2
            if n2 > 1 and f2 > n2 - 2:
                f2 = n2 - 2
            _weights(s[p, 0] - f0, w0, dw0, ew0)
            _weights(s[p, 1] - f1, w1, dw1, ew1)
            _weights(s[p, 2] - f2, w2, dw2, ew2)
            b0 = <Py_ssize_t>f0 - 1
            b1 = <Py_ssize_t>f1 - 1
            b2 = <Py_ssize_t>f2 - 1
            v = 0.0
            gx = 0.0
            gy = 0.0
            gz = 0.0
            hxx = 0.0
            hyy = 0.0
            hzz = 0.0
            hxy = 0.0
            hxz = 0.0
            hyz = 0.0
            for i in range(4):
                ii = _mirror(b0 + i, n0)
                for j in range(4):
                    jj = _mirror(b1 + j, n1)
                    for k in range(4):
                        kk = _mirror(b2 + k, n2)
                        c = coef[ii, jj, kk]
                        v += c * w0[i] * w1[j] * w2[k]
                        if order >= 1:
                            gx += c * dw0[i] * w1[j] * w2[k]
                            gy += c * w0[i] * dw1[j] * w2[k]
                            gz += c * w0[i] * w1[j] * dw2[k]
                        if order >= 2:
                            hxx += c * ew0[i] * w1[j] * w2[k]
                            hyy += c * w0[i] * ew1[j] * w2[k]
                            hzz += c * w0[i] * w1[j] * ew2[k]
                            hxy += c * dw0[i] * dw1[j] * w2[k]
                            hxz += c * dw0[i] * w1[j] * dw2[k]
                            hyz += c * w0[i] * dw1[j] * dw2[k]
            val[p] = v
            grad[p, 0] = gx
            grad[p, 1] = gy
            grad[p, 2] = gz
            hess[p, 0, 0] = hxx
            hess[p, 1, 1] = hyy
            hess[p, 2, 2] = hzz
            hess[p, 0, 1] = hxy
            hess[p, 1, 0] = hxy
            hess[p, 0, 2] = hxz
            hess[p, 2, 0] = hxz
            hess[p, 1, 2] = hyz
            hess[p, 2, 1] = hyz
    return val_, (grad_ if order >= 1 else None), (hess_ if order >= 2 else None)
