"""Independent reference computations used only by the tests."""

import numpy as np


def christoffel_eigs(a11, a33, a55, a66, e2, axis, xi):
    """Eigenvalues of the TI Christoffel matrix, built in an axis-aligned frame.

    The coupling stiffness is recovered from ``(c13 + c55)^2 = d1 d3 - E2``.
    Returns sorted eigenvalues, shape (n, 3).
    """
    axis = np.asarray(axis, float)
    axis = axis / np.linalg.norm(axis, axis=-1, keepdims=True)
    xi = np.asarray(xi, float)
    n = xi.shape[0]
    axis = np.broadcast_to(axis, (n, 3))
    # orthonormal frame (e1, f2, axis) via Gram-Schmidt on a fixed helper vector
    helper = np.where(np.abs(axis[:, :1]) < 0.9, np.array([[1.0, 0, 0]]), np.array([[0, 1.0, 0]]))
    e1 = helper - np.sum(helper * axis, 1, keepdims=True) * axis
    e1 /= np.linalg.norm(e1, axis=1, keepdims=True)
    f2 = np.cross(axis, e1)
    k1, k2, k3 = (np.sum(xi * e, 1) for e in (e1, f2, axis))
    c = np.sqrt((a11 - a55) * (a33 - a55) - e2)
    G = np.empty((n, 3, 3))
    G[:, 0, 0] = a11 * k1 ** 2 + a66 * k2 ** 2 + a55 * k3 ** 2
    G[:, 1, 1] = a66 * k1 ** 2 + a11 * k2 ** 2 + a55 * k3 ** 2
    G[:, 2, 2] = a55 * (k1 ** 2 + k2 ** 2) + a33 * k3 ** 2
    G[:, 0, 1] = G[:, 1, 0] = (a11 - a66) * k1 * k2
    G[:, 0, 2] = G[:, 2, 0] = c * k1 * k3
    G[:, 1, 2] = G[:, 2, 1] = c * k2 * k3
    return np.linalg.eigvalsh(G)


def plug_in_G(a11, a33, a55, e2, I2, T2, sign):
    """Scalar plug-in of the displayed qP/qSV formula."""
    A = (a11 - a55) * I2 + (a33 - a55) * T2
    return (a11 + a55) * I2 + (a33 + a55) * T2 + sign * np.sqrt(A * A - 4.0 * e2 * I2 * T2)


def central_diff(f, x, h=1e-5):
    """Sixth-order central difference gradient of ``f`` at the rows of ``x``."""
    c = np.array([-1, 9, -45, 0, 45, -9, 1]) / 60.0
    x = np.asarray(x, float)
    g = np.zeros_like(x)
    for j in range(x.shape[1]):
        for k, ck in zip(range(-3, 4), c):
            if ck == 0:
                continue
            y = x.copy()
            y[:, j] += k * h
            g[:, j] += ck * f(y)
        g[:, j] /= h
    return g
