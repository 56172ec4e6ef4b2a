"""Pseudolinearization weights, ray transforms and normal operators.

For a base model ``m`` and a second model ``mt`` differing in ``a11, a33,
E2`` the difference of the Hamiltonian vector fields is written through the
weights ``E^nu`` (s-averaged parameter derivatives of ``G``).  Integrating it
along ``m``-rays against the ``mt`` flow Jacobian at the remaining travel
time gives the transforms ``I^nu`` and ``It^nu``; the angular average ``L``
turns them into the normal operators ``N^nu`` and ``Nt^nu``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _backend
from .errors import ValidationError
from .fields import ScalarField, _as_points
from .material_model import Mode, phase_jet, xi_of_omega
from .raytracer import Domain, flow, symplectic_inverse, trace_to_exit

NU_NAMES = ("a11", "a33", "E2")
_NU_INDEX = {"a11": 0, "a33": 1, "E2": 4}


def parse_nu(nu) -> str:
    key = str(nu).strip().lower().replace("^", "").replace("_", "")
    table = {"a11": "a11", "11": "a11", "a33": "a33", "33": "a33", "e2": "E2"}
    if key not in table:
        raise ValidationError(f"unknown parameter {nu!r}; expected a11, a33 or E2")
    return table[key]


def gauss_legendre(a, b, n):
    """Nodes and weights of the ``n``-point Gauss-Legendre rule on ``[a, b]`` (broadcasting)."""
    z, w = np.polynomial.legendre.leggauss(n)
    a = np.asarray(a, float)[..., None]
    b = np.asarray(b, float)[..., None]
    return 0.5 * (a + b) + 0.5 * (b - a) * z, 0.5 * (b - a) * w


def composite_gl(a, b, panels, order):
    """Composite Gauss-Legendre rule with equal panels, per row of ``a, b``."""
    a = np.atleast_1d(np.asarray(a, float))
    b = np.atleast_1d(np.asarray(b, float))
    edges = a[:, None] + (b - a)[:, None] * np.linspace(0.0, 1.0, panels + 1)[None]
    t, w = gauss_legendre(edges[:, :-1], edges[:, 1:], order)
    return t.reshape(a.size, -1), w.reshape(a.size, -1)


_S_NODES, _S_WEIGHTS = gauss_legendre(0.0, 1.0, 8)


@dataclass(frozen=True)
class Cutoff:
    """Angular cutoff in ``u = xi_T / |xi|``.

    Equal to 1 for ``|u| < eps/2``, 0 for ``|u| > eps``, with a quintic
    smoothstep (C^2) in between.
    """

    eps: float = 0.15

    def __post_init__(self):
        if not 0 < self.eps <= 1:
            raise ValidationError("cutoff eps must lie in (0, 1]")

    def profile(self, u):
        t = np.clip((np.abs(u) - 0.5 * self.eps) / (0.5 * self.eps), 0.0, 1.0)
        return 1.0 - t ** 3 * (10.0 - 15.0 * t + 6.0 * t * t)

    def __call__(self, m, x, xi):
        xb, _, _ = m.axis.jet(_as_points(x), 0)
        xi = np.asarray(xi, float).reshape(-1, 3)
        return self.profile(np.einsum("ni,ni->n", xi, xb) / np.linalg.norm(xi, axis=1))


class _Everywhere:
    eps = np.inf

    def profile(self, u):
        return np.ones_like(np.asarray(u, float))

    def __call__(self, m, x, xi):
        return np.ones(np.asarray(xi).reshape(-1, 3).shape[0])


NO_CUTOFF = _Everywhere()


def weight_jet(m, mt, mode, nu, x, xi, order=1):
    """``E^nu`` and (for ``order=1``) its gradients in ``x`` and ``xi``.

    ``E^nu = int_0^1 dG/dnu(a + s r) ds`` with 8 Gauss nodes in ``s``, where
    ``r = mt - m`` in the parameters ``a11, a33, E2``.

    Returns
    -------
    E : ndarray, shape (n,)
    Ex, Exi : ndarray, shape (n, 3), or None
    """
    mode = Mode.parse(mode)
    k = _NU_INDEX[parse_nu(nu)]
    x = _as_points(x)
    xi = np.asarray(xi, float).reshape(-1, 3)
    if x.shape[0] != xi.shape[0]:
        x = np.broadcast_to(x, xi.shape).copy()
    P, dP, _ = m.params_jet(x, order)
    Pt, dPt, _ = (m if mt is None else mt).params_jet(x, order)
    xb, D, _ = m.axis.jet(x, order)
    T = np.einsum("ni,ni->n", xi, xb)
    S = np.einsum("ni,ni->n", xi, xi)
    E = np.zeros(x.shape[0])
    Ex = np.zeros_like(x) if order else None
    Exi = np.zeros_like(x) if order else None
    dT_dx = np.einsum("ni,nij->nj", xi, D) if order else None
    for s, w in zip(_S_NODES, _S_WEIGHTS):
        Ps = P + s * (Pt - P)
        cols = [np.ascontiguousarray(Ps[:, i]) for i in range(5)]
        _, dg, d2g, bad = _backend.ti_jet(*cols, T, S, mode.sign, 2 if order else 1)
        if np.any(bad):
            from .material_model import _check_bad
            _check_bad(bad, x)
        E += w * dg[:, k]
        if order:
            row = d2g[:, k, :]
            dPs = dP + s * (dPt - dP)
            Ex += w * (np.einsum("nk,nkj->nj", row[:, :5], dPs) + row[:, 5:6] * dT_dx)
            Exi += w * (row[:, 5:6] * xb + 2.0 * row[:, 6:7] * xi)
    return E, Ex, Exi


def weight_E_nu(m, mt, mode, nu, x, xi):
    """Pseudolinearization weight ``E^nu(x, xi)``."""
    return weight_jet(m, mt, mode, nu, x, xi, order=0)[0]


def parameter_differences(m, mt, x, order=1):
    """Differences ``r_nu = mt - m`` (columns a11, a33, E2) and their gradients."""
    P, dP, _ = m.params_jet(_as_points(x), order)
    Pt, dPt, _ = mt.params_jet(_as_points(x), order)
    cols = [0, 1, 4]
    r = (Pt - P)[:, cols]
    dr = (dPt - dP)[:, cols] if order else None
    return r, dr


# ray quadrature


@dataclass
class RayQuadrature:
    """Quadrature data along the full ``m``-rays through phase points.

    Attributes
    ----------
    x, xi : ndarray, shape (n, 3)
        The phase points.
    t_in : ndarray, shape (n,)
        Time from the entry point to ``x``.
    total : ndarray, shape (n,)
        Entry-to-exit travel time.
    s, w : ndarray, shape (n, K)
        Quadrature times (measured from the entry point) and weights.
    Z : ndarray, shape (n, K, 6)
        ``m``-states at the nodes.
    B : ndarray, shape (n, K, 6, 6)
        ``mt`` flow Jacobians at the remaining travel time from each node.
    Jx : ndarray, shape (n, 6, 6)
        ``mt`` flow Jacobian at the remaining travel time from ``(x, xi)``.
    """

    x: np.ndarray
    xi: np.ndarray
    t_in: np.ndarray
    total: np.ndarray
    s: np.ndarray
    w: np.ndarray
    Z: np.ndarray
    B: np.ndarray
    Jx: np.ndarray

    @classmethod
    def build(cls, m, mt, mode, x, xi, *, domain=None, panels=16, order=8, window=None, tol=1e-10):
        """Trace the rays and assemble nodes and Jacobians.

        Parameters
        ----------
        mt : MaterialModel or None
            Second model; ``None`` (or ``m`` itself) uses the flow cocycle
            ``J(T) J(s)^-1`` from a single variational pass.
        window : float, optional
            Restrict the nodes to ``|s - t_in| <= window``.
        """
        mode = Mode.parse(mode)
        domain = domain or Domain.for_model(m)
        x = _as_points(x)
        xi = np.asarray(xi, float).reshape(-1, 3)
        if x.shape[0] != xi.shape[0]:
            x = np.broadcast_to(x, xi.shape).copy()
        n = x.shape[0]
        back = trace_to_exit(m, mode, x, xi, domain, tol, backward=True)
        fwd = trace_to_exit(m, mode, x, xi, domain, tol)
        t_in, tau = back.tau, fwd.tau
        total = t_in + tau
        lo, hi = np.zeros(n), total.copy()
        if window is not None:
            lo = np.maximum(lo, t_in - window)
            hi = np.minimum(hi, t_in + window)
        s, w = composite_gl(lo, hi, panels, order)
        K = s.shape[1]
        z_in = np.concatenate([back.exit_x, back.exit_xi], axis=1)
        same = mt is None or mt is m
        # stops: nodes, the base point and the exit
        allst = np.concatenate([s, t_in[:, None], total[:, None]], axis=1)
        perm = np.argsort(allst, axis=1, kind="stable")
        inv = np.argsort(perm, axis=1)
        st = np.take_along_axis(allst, perm, axis=1)
        fr = flow(m, mode, z_in[:, :3], z_in[:, 3:], total, tol, jacobian=same, stops=st)
        ys = np.concatenate([fr.stop_x, fr.stop_xi], axis=2)
        ys = np.take_along_axis(ys, inv[..., None], axis=1)
        Z = ys[:, :K]
        if same:
            Js = np.take_along_axis(fr.stop_J, inv[..., None, None], axis=1)
            JT = Js[:, K + 1]
            Jinv = symplectic_inverse(Js[:, :K + 1].reshape(-1, 6, 6)).reshape(n, K + 1, 6, 6)
            prod = np.einsum("nij,nkjl->nkil", JT, Jinv)
            B, Jx = prod[:, :K], prod[:, K]
        else:
            starts = Z.reshape(-1, 6)
            rem = (total[:, None] - s).ravel()
            B = flow(mt, mode, starts[:, :3], starts[:, 3:], rem, tol, jacobian=True).J.reshape(n, K, 6, 6)
            Jx = flow(mt, mode, x, xi, tau, tol, jacobian=True).J
        return cls(x, xi, t_in, total, s, w, Z, B, Jx)

    def points(self):
        return self.Z[..., :3].reshape(-1, 3)



def _is_complex(field):
    return bool(getattr(field, "is_complex", False))


def transform_I_nu(m, mt, mode, nu, g, x=None, xi=None, quad: RayQuadrature | None = None, **kw):
    """``I^nu[g](x, xi) = -int E^nu (dXit/dxi)(tau(.), .) g(X) dt`` along the ``m``-ray.

    Parameters
    ----------
    g : callable
        Vector field ``g(points (N, 3)) -> (N, 3)``.
    quad : RayQuadrature, optional
        Reuse precomputed ray data (otherwise built from ``x, xi``).

    Returns
    -------
    ndarray, shape (n, 3)
    """
    q = quad or RayQuadrature.build(m, mt, mode, x, xi, **kw)
    n, K = q.s.shape
    pts = q.points()
    E = weight_E_nu(m, mt, mode, nu, pts, q.Z[..., 3:].reshape(-1, 3)).reshape(n, K)
    gv = np.asarray(g(pts)).reshape(n, K, 3)
    return -np.einsum("nk,nk,nkij,nkj->ni", q.w, E, q.B[:, :, 3:, 3:], gv)


def transform_Itilde_nu(m, mt, mode, nu, f, x=None, xi=None, quad: RayQuadrature | None = None, **kw):
    """``It^nu[f] = int (-(dXit/dxi) d_x E + (dXit/dx) d_xi E) f(X) dt`` along the ``m``-ray."""
    q = quad or RayQuadrature.build(m, mt, mode, x, xi, **kw)
    n, K = q.s.shape
    pts = q.points()
    _, Ex, Exi = weight_jet(m, mt, mode, nu, pts, q.Z[..., 3:].reshape(-1, 3), 1)
    vec = (-np.einsum("nkij,nkj->nki", q.B[:, :, 3:, 3:], Ex.reshape(n, K, 3))
           + np.einsum("nkij,nkj->nki", q.B[:, :, 3:, :3], Exi.reshape(n, K, 3)))
    fv = np.asarray(f(pts)).reshape(n, K)
    return np.einsum("nk,nk,nki->ni", q.w, fv, vec)


# sphere quadrature and the angular average


def _u_of_c(m, mode, x, c, e1):
    # u = xi_T/|xi| for the group direction with axial cosine c
    xb, _, _ = m.axis.jet(x, 0)
    om = c[:, None] * xb + np.sqrt(np.maximum(1.0 - c * c, 0.0))[:, None] * e1
    xi = xi_of_omega(m, mode, x, om)
    return np.einsum("ni,ni->n", xi, xb) / np.linalg.norm(xi, axis=1)


def _frame(xb):
    ref = np.where(np.abs(xb[:, 2:3]) < 0.9, np.array([[0, 0, 1.0]]), np.array([[1.0, 0, 0]]))
    e1 = np.cross(xb, ref)
    e1 /= np.linalg.norm(e1, axis=1)[:, None]
    return e1, np.cross(xb, e1)


def cutoff_band(m, mode, x, cutoff, iters=60):
    """Axial cosines of the group direction where ``|u|`` reaches ``eps/2`` and ``eps``.

    Uses the axial symmetry of the wave speed about the local axis.
    """
    x = _as_points(x)
    xb, _, _ = m.axis.jet(x, 0)
    e1, _ = _frame(xb)
    out = []
    for level in (0.5 * cutoff.eps, cutoff.eps):
        if level >= 1.0:
            out.append(np.ones(x.shape[0]))
            continue
        lo, hi = np.zeros(x.shape[0]), np.ones(x.shape[0])
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            above = _u_of_c(m, mode, x, mid, e1) >= level
            hi = np.where(above, mid, hi)
            lo = np.where(above, lo, mid)
        out.append(0.5 * (lo + hi))
    return out[0], out[1]


def sphere_rule(m, mode, x, cutoff=Cutoff(), n_theta=64, n_phi=128):
    """Directions and weights covering the support of ``chi`` at a single point.

    Product of Gauss-Legendre panels in the axial cosine (split at the
    cutoff knots) and the trapezoid rule in azimuth.

    Returns
    -------
    omega : ndarray, shape (k, 3)
    weight : ndarray, shape (k,)
        Includes the cutoff value.
    xi : ndarray, shape (k, 3)
    """
    x = _as_points(x)[:1]
    c_half, c_full = cutoff_band(m, mode, x, cutoff)
    c_half, c_full = float(c_half[0]), float(c_full[0])
    n_side = max(n_theta // 4, 2)
    parts = [gauss_legendre(-c_half, c_half, n_theta - 2 * n_side)]
    if c_full > c_half:
        parts += [gauss_legendre(-c_full, -c_half, n_side), gauss_legendre(c_half, c_full, n_side)]
    c = np.concatenate([p[0] for p in parts])
    wc = np.concatenate([p[1] for p in parts])
    phi = 2.0 * np.pi * np.arange(n_phi) / n_phi
    xb, _, _ = m.axis.jet(x, 0)
    e1, e2 = _frame(xb)
    sn = np.sqrt(1.0 - c * c)
    om = (c[:, None, None] * xb[0] + sn[:, None, None] * (np.cos(phi)[None, :, None] * e1[0]
                                                         + np.sin(phi)[None, :, None] * e2[0])).reshape(-1, 3)
    w = np.repeat(wc, n_phi) * (2.0 * np.pi / n_phi)
    xi = xi_of_omega(m, mode, np.repeat(x, om.shape[0], 0), om)
    w = w * cutoff(m, np.repeat(x, om.shape[0], 0), xi)
    keep = w > 0
    return om[keep], w[keep], xi[keep]


def adjoint_L(mt, mode, v, x, cutoff=Cutoff(), n_theta=64, n_phi=128, jacobians=None, base=None):
    """Angular average ``L[v](x) = int chi (-dXit/dxi)^-1 v(x, xi(omega)) d omega``.

    Parameters
    ----------
    v : callable
        ``v(x_rows (k, 3), xi (k, 3)) -> (k, 3)``.
    jacobians : ndarray, shape (k, 6, 6), optional
        Precomputed ``mt`` Jacobians at the remaining travel time for the
        rule's directions (computed here otherwise).
    base : MaterialModel, optional
        Model defining ``xi(omega)``, the cutoff and the remaining travel
        time; defaults to ``mt``.
    """
    base = base or mt
    x = _as_points(x)[:1]
    om, w, xi = sphere_rule(base, mode, x, cutoff, n_theta, n_phi)
    if w.size == 0:
        return np.zeros(3)
    X = np.repeat(x, om.shape[0], 0)
    if jacobians is None:
        tau = trace_to_exit(base, mode, X, xi).tau
        jacobians = flow(mt, mode, X, xi, tau, jacobian=True).J
    vals = np.asarray(v(X, xi))
    sol = np.linalg.solve(-jacobians[:, 3:, 3:], vals[..., None])[..., 0]
    return np.einsum("k,ki->i", w, sol)


def _gradient_callable(u):
    if isinstance(u, ScalarField):
        return lambda p: u.jet(p, 1).g
    return u


def apply_N_nu(m, mt, mode, nu, u, nodes, cutoff=Cutoff(), n_theta=32, n_phi=64, panels=16, order=8,
               window=None, tol=1e-10, tilde=False):
    """``N^nu[grad u]`` (or ``Nt^nu[u]`` with ``tilde``) at the given nodes.

    Parameters
    ----------
    u : ScalarField or callable
        Scalar field; for ``tilde=False`` a callable is interpreted as the
        vector field ``grad u``.
    nodes : ndarray, shape (p, 3)

    Returns
    -------
    ndarray, shape (p, 3)
    """
    nodes = _as_points(nodes)
    out = np.zeros((nodes.shape[0], 3), dtype=complex if _is_complex(u) else float)
    for i, x in enumerate(nodes):
        om, w, xi = sphere_rule(m, mode, x, cutoff, n_theta, n_phi)
        if w.size == 0:
            continue
        q = RayQuadrature.build(m, mt, mode, np.repeat(x[None], len(w), 0), xi, panels=panels, order=order,
                                window=window, tol=tol)
        if tilde:
            f = u if not isinstance(u, ScalarField) else (lambda p, u=u: u(p))
            vals = transform_Itilde_nu(m, mt, mode, nu, f, quad=q)
        else:
            vals = transform_I_nu(m, mt, mode, nu, _gradient_callable(u), quad=q)
        sol = np.linalg.solve(-q.Jx[:, 3:, 3:], vals[..., None])[..., 0]
        out[i] = np.einsum("k,ki->i", w, sol)
    return out


def apply_Ntilde_nu(m, mt, mode, nu, u, nodes, **kw):
    """``Nt^nu[u]`` at the given nodes (see :func:`apply_N_nu`)."""
    return apply_N_nu(m, mt, mode, nu, u, nodes, tilde=True, **kw)


def apply_N_grid(m, mt, mode, nu, u, cutoff=Cutoff(), tilde=False, mask=None, **kw):
    """Apply ``N^nu`` (or ``Nt^nu``) at every node of a :class:`GridField`.

    Returns an array of shape ``u.data.shape + (3,)``; nodes outside the
    domain ball or outside ``mask`` are left at zero.
    """
    pts = u.points()
    inside = Domain.for_model(m).b(pts) < 0
    if mask is not None:
        inside &= np.asarray(mask, bool).ravel()
    out = np.zeros((pts.shape[0], 3))
    idx = np.nonzero(inside)[0]
    if idx.size:
        out[idx] = apply_N_nu(m, mt, mode, nu, u, pts[idx], cutoff=cutoff, tilde=tilde, **kw)
    return out.reshape(u.data.shape + (3,))


# identities


def vector_field_difference(m, mt, mode, x, xi):
    """``Vt - V`` with ``V = (d_xi G, -d_x G)``, evaluated directly from both models."""
    a = phase_jet(m, mode, x, xi, 1)
    b = phase_jet(mt, mode, x, xi, 1)
    return np.concatenate([b.Gxi - a.Gxi, -(b.Gx - a.Gx)], axis=1)


def su_identity_check(m, mt, mode, x0, xi0, t, panels=16, order=8, tol=1e-13):
    """Relative residual of the flow-difference identity on ``[0, t]``.

    Left side ``Zt(t, z) - Z(t, z)`` from two flows; right side
    ``int_0^t dZt/dz(t - s, Z(s, z)) (Vt - V)(Z(s, z)) ds`` by composite
    Gauss-Legendre quadrature with restarted ``mt`` variational flows.

    Returns
    -------
    residual : ndarray, shape (n,)
        ``|lhs - rhs| / |lhs|`` (absolute when ``lhs`` vanishes).
    lhs, rhs : ndarray, shape (n, 6)
    """
    mode = Mode.parse(mode)
    x0 = _as_points(x0)
    xi0 = np.asarray(xi0, float).reshape(-1, 3)
    if x0.shape[0] != xi0.shape[0]:
        x0 = np.broadcast_to(x0, xi0.shape).copy()
    n = x0.shape[0]
    t = np.broadcast_to(np.asarray(t, float), (n,)).copy()
    za = flow(m, mode, x0, xi0, t, tol)
    zb = flow(mt, mode, x0, xi0, t, tol)
    lhs = np.concatenate([zb.x - za.x, zb.xi - za.xi], axis=1)
    s, w = composite_gl(np.zeros(n), t, panels, order)
    K = s.shape[1]
    fr = flow(m, mode, x0, xi0, t, tol, stops=s)
    Zx, Zxi = fr.stop_x.reshape(-1, 3), fr.stop_xi.reshape(-1, 3)
    dV = vector_field_difference(m, mt, mode, Zx, Zxi)
    J = flow(mt, mode, Zx, Zxi, (t[:, None] - s).ravel(), tol, jacobian=True).J
    rhs = np.einsum("nk,nkij,nkj->ni", w, J.reshape(n, K, 6, 6), dV.reshape(n, K, 6))
    scale = np.linalg.norm(lhs, axis=1)
    err = np.linalg.norm(lhs - rhs, axis=1)
    residual = np.where(scale > 0, err / np.where(scale > 0, scale, 1.0), err)
    return residual, lhs, rhs


def lens_difference(m, mt, mode, x, xi, domain=None, tol=1e-11):
    """``Xit(T, z) - Xi(T, z)`` for the entry state ``z`` of the ``m``-ray through ``(x, xi)``.

    ``T`` is the ``m`` entry-to-exit time; with perturbations supported in the
    domain this is the covector part of the lens-data difference.
    """
    domain = domain or Domain.for_model(m)
    back = trace_to_exit(m, mode, x, xi, domain, tol, backward=True)
    fwd = trace_to_exit(m, mode, x, xi, domain, tol)
    T = back.tau + fwd.tau
    zb = flow(mt, mode, back.exit_x, back.exit_xi, T, tol)
    za = flow(m, mode, back.exit_x, back.exit_xi, T, tol)
    return zb.xi - za.xi


def pseudo_data_residual(m, mt, mode, x, xi, panels=16, order=8, tol=1e-11, quad=None):
    """``sum_nu I^nu[grad r_nu] + It^nu[r_nu]`` per ray, with ``r = mt - m``.

    Returns
    -------
    ndarray, shape (n, 3)
    """
    q = quad or RayQuadrature.build(m, mt, mode, x, xi, panels=panels, order=order, tol=tol)
    n, K = q.s.shape
    pts = q.points()
    r, dr = parameter_differences(m, mt, pts, 1)
    total = np.zeros((n, 3))
    for j, nu in enumerate(NU_NAMES):
        total += transform_I_nu(m, mt, mode, nu, lambda p, j=j: dr[:, j], quad=q)
        total += transform_Itilde_nu(m, mt, mode, nu, lambda p, j=j: r[:, j], quad=q)
    return total
