"""Symbol predictions for the normal operators and oscillatory probes.

Predictions are great-circle integrals of the pseudolinearization weights;
probes apply an operator to a Gaussian-windowed plane wave centred at the
evaluation point and read off the local symbol.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import sympy as sp

from .errors import ProbeInvalidError, ValidationError
from .fields import _as_points
from .material_model import Mode, a_pm, alpha, curvature_term, h_pm, mean_curvature, xi_of_omega, xi_T_xi_I
from .pseudolin import (Cutoff, NO_CUTOFF, RayQuadrature, gauss_legendre, parse_nu, weight_E_nu, weight_jet,
                        _frame)
from .raytracer import flow, trace_to_exit

_S_NODES, _S_WEIGHTS = gauss_legendre(0.0, 1.0, 8)


@dataclass
class SymbolSample:
    """Symbol value at ``(x, zeta)``.

    ``value`` is a 3x3 matrix for the ``N`` operators (scalar multiples of the
    identity for predictions) and a 3-vector for the ``Nt`` operators.
    """

    x: np.ndarray
    zeta: np.ndarray
    value: np.ndarray
    order: int = -1
    vanishing: float | None = None
    meta: dict = field(default_factory=dict)

    @property
    def scalar(self):
        v = np.asarray(self.value)
        return complex(np.trace(v) / 3.0) if v.shape == (3, 3) else complex(np.linalg.norm(v))

    def offdiag_fraction(self):
        v = np.asarray(self.value)
        d = np.diag(np.diag(v))
        return float(np.linalg.norm(v - d) / max(np.linalg.norm(d), 1e-300))


# the conic set Sigma = span xibar


def transverse_u(m, x, zeta):
    """``u = xi_I(zeta) / |zeta|``; zero exactly on ``Sigma``."""
    z = np.asarray(zeta, float).reshape(-1, 3)
    _, I2 = xi_T_xi_I(m, np.broadcast_to(_as_points(x), z.shape), z)
    return np.sqrt(I2) / np.linalg.norm(z, axis=1)


def on_sigma(m, x, zeta, tol=1e-12):
    return transverse_u(m, x, zeta) <= tol


def scan_covector(m, x, zmag, u, direction=None):
    """Covectors of length ``zmag`` with transverse fraction ``u`` off ``Sigma``."""
    x = _as_points(x)[:1]
    xb, _, _ = m.axis.jet(x, 0)
    e1 = _frame(xb)[0][0] if direction is None else np.asarray(direction, float)
    e1 = e1 - (e1 @ xb[0]) * xb[0]
    e1 /= np.linalg.norm(e1)
    u = np.atleast_1d(np.asarray(u, float))
    return zmag * (np.sqrt(1.0 - u * u)[:, None] * xb[0] + u[:, None] * e1)


def great_circle(zeta, n=256):
    """Trapezoid nodes on ``zeta^perp`` intersected with the unit sphere."""
    z = np.asarray(zeta, float)
    zh = z / np.linalg.norm(z)
    e1, e2 = _frame(zh[None])
    phi = 2.0 * np.pi * np.arange(n) / n
    om = np.cos(phi)[:, None] * e1 + np.sin(phi)[:, None] * e2
    return om, np.full(n, 2.0 * np.pi / n)


def _circle_data(m, mode, x, zeta, n):
    om, w = great_circle(zeta, n)
    X = np.repeat(_as_points(x)[:1], n, 0)
    xi = xi_of_omega(m, mode, X, om)
    return X, om, w, xi


def principal_prediction(m, mt, mode, nu, x, zeta, cutoff=Cutoff(), n=256) -> SymbolSample:
    """``sigma_-1(N^nu)(x, zeta) = (2 pi / |zeta|) int_{zeta^perp} chi E^nu(x, xi(omega))``."""
    zeta = np.asarray(zeta, float)
    X, om, w, xi = _circle_data(m, mode, x, zeta, n)
    a = 2.0 * np.pi * np.sum(w * cutoff(m, X, xi) * weight_E_nu(m, mt, mode, nu, X, xi))
    zn = np.linalg.norm(zeta)
    return SymbolSample(X[0], zeta, a / zn * np.eye(3), -1, meta={"a_minus1": a})


def principal_prediction_tilde(m, mt, mode, nu, x, zeta, cutoff=Cutoff(), n=256, tol=1e-10) -> SymbolSample:
    """Principal symbol of ``Nt^nu`` (a 3-vector acting on scalars).

    The weight at the base point is ``chi (d_x E - (dXit/dxi)^-1 (dXit/dx) d_xi E)``.
    """
    zeta = np.asarray(zeta, float)
    X, om, w, xi = _circle_data(m, mode, x, zeta, n)
    _, Ex, Exi = weight_jet(m, mt, mode, nu, X, xi, 1)
    tau = trace_to_exit(m, mode, X, xi, tol=tol).tau
    J = flow(m if mt is None else mt, mode, X, xi, tau, tol, jacobian=True).J
    corr = np.linalg.solve(J[:, 3:, 3:], np.einsum("nij,nj->ni", J[:, 3:, :3], Exi)[..., None])[..., 0]
    vec = cutoff(m, X, xi)[:, None] * (Ex - corr)
    a = 2.0 * np.pi * np.einsum("n,ni->i", w, vec)
    return SymbolSample(X[0], zeta, a / np.linalg.norm(zeta), -1, meta={"a_minus1": a})


def a_IT(m, mode, x, zeta, cutoff=Cutoff(), n=256):
    """``a_{I/T}(x, zeta) = 4 pi int_{zeta^perp} chi xi_{I/T}^2(omega)``."""
    X, om, w, xi = _circle_data(m, mode, x, zeta, n)
    T, I2 = xi_T_xi_I(m, X, xi)
    chi = cutoff(m, X, xi)
    return 4.0 * np.pi * np.sum(w * chi * I2), 4.0 * np.pi * np.sum(w * chi * T * T)


def _endpoint_params(m, mt, x):
    P, _, _ = m.params_jet(_as_points(x)[:1], 0)
    Pt, _, _ = (m if mt is None else mt).params_jet(_as_points(x)[:1], 0)
    return P[0], Pt[0]


def log_mean(a, b):
    """Logarithmic mean ``(b - a) / (ln b - ln a)`` of positive numbers."""
    if np.isclose(a, b, rtol=1e-12, atol=0.0):
        return 0.5 * (a + b)
    return (b - a) / (np.log(b) - np.log(a))


def parameter_means(m, mt, x):
    """The ``s``-averaged quantities entering the closed-form symbols.

    Returns
    -------
    dict
        ``d1_l`` (logarithmic mean of ``a11 - a55``), ``e2_d1sq_mean``
        (mean of ``E2 / (a11 - a55)^2``), ``e2_d1_mean`` (mean of
        ``E2 / (a11 - a55)``), and the base values.
    """
    P, Pt = _endpoint_params(m, mt, x)
    d1a, d1b = P[0] - P[2], Pt[0] - P[2]
    s = _S_NODES
    d1s = d1a + s * (d1b - d1a)
    e2s = P[4] + s * (Pt[4] - P[4])
    return {
        "d1_l": log_mean(d1a, d1b),
        "e2_d1sq_mean": float(np.sum(_S_WEIGHTS * e2s / d1s ** 2)),
        "e2_d1_mean": float(np.sum(_S_WEIGHTS * e2s / d1s)),
        "P": P,
        "Pt": Pt,
    }


def f_on_equator(m, mt, mode, nu, x):
    """Factor ``f^nu`` of ``E^nu = f^nu xi_T^2`` on the equator ``xi_T = 0``."""
    mode = Mode.parse(mode)
    nu = parse_nu(nu)
    sg = mode.sign
    if sg == 0:
        raise ValidationError("qSH weights are outside the recovery setting")
    pm = parameter_means(m, mt, x)
    if nu == "a33":
        return 1.0 + sg
    if nu == "E2":
        return -sg * 2.0 / pm["d1_l"]
    if sg == 1:
        raise ValidationError("E^11 for qP does not factor through xi_T^2 (the operator is elliptic)")
    return -2.0 * pm["e2_d1sq_mean"]


def subprincipal_prediction(m, mt, mode, nu, x, s, cutoff=Cutoff(), n=256) -> SymbolSample:
    """Subprincipal symbol on ``Sigma`` at ``zeta = s xibar(x)``.

    ``value`` holds ``a_-2 |zeta|^-2`` times the identity; ``meta`` carries
    ``a_minus2`` (circle quadrature) and ``closed_form`` (mean-curvature
    expression, valid since the cutoff equals 1 on the equator).
    """
    mode = Mode.parse(mode)
    x = _as_points(x)[:1]
    xb, _, _ = m.axis.jet(x, 0)
    zeta = s * xb[0]
    om, w = great_circle(xb[0], n)
    X = np.repeat(x, n, 0)
    a, ga = a_pm(m, mode, x, order=1)
    a, ga = float(a[0]), ga[0]
    h = float(h_pm(m, mode, x)[0])
    f = f_on_equator(m, mt, mode, nu, x)
    xi = om / (4.0 * a)
    chi = cutoff(m, X, xi)
    integrand = curvature_term(m, X, om) / (4.0 * a) * (1.0 + 4.0 * a / h) - (xb[0] @ ga) / (8.0 * a * a)
    val = np.sign(s) * 2j * np.pi / h * f * np.sum(w * chi * integrand)
    H = float(mean_curvature(m, x)[0])
    closed = np.sign(s) * 1j * np.pi ** 2 * f / h * (H / a * (1.0 + 4.0 * a / h) - (xb[0] @ ga) / (2.0 * a * a))
    return SymbolSample(x[0], zeta, val / s ** 2 * np.eye(3), -2,
                        meta={"a_minus2": val, "closed_form": closed, "f": f, "h": h, "H": H})


# quantitative estimates with the cutoff


@dataclass
class ParameterBounds:
    """Uniform bounds feeding the explicit ``O(eps^2)`` constants."""

    d1_min: float
    d3_max: float
    e2_abs_max: float

    @classmethod
    def from_models(cls, m, mt, x):
        P, Pt = _endpoint_params(m, mt, x)
        d1 = [P[0] - P[2], Pt[0] - P[2]]
        d3 = [P[1] - P[2], Pt[1] - P[2]]
        return cls(min(d1), max(d3), max(abs(P[4]), abs(Pt[4])))


def _eps_constants(eps, b: ParameterBounds):
    eta = eps * eps / (1.0 - eps * eps)
    q = 4.0 * b.e2_abs_max * eta / b.d1_min ** 2
    if q >= 1.0:
        raise ValidationError("cutoff too wide for the stated parameter bounds")
    delta = 1.0 / np.sqrt(1.0 - q) - 1.0
    return eta, delta


def cutoff_estimate_table(m, mt, x, zeta, eps, bounds: ParameterBounds | None = None, n=256):
    """Leading principal-symbol predictions through ``a_{+-,I/T}`` with brackets.

    Returns
    -------
    dict
        Keys ``N11+``, ``N11-``, ``N33+``, ``N33-``, ``NE2+``, ``NE2-``; values
        are ``(prediction, lower, upper)``.
    """
    cutoff = Cutoff(eps)
    b = bounds or ParameterBounds.from_models(m, mt, x)
    eta, delta = _eps_constants(eps, b)
    pm = parameter_means(m, mt, x)
    aI_p, aT_p = a_IT(m, "qp", x, zeta, cutoff, n)
    aI_m, aT_m = a_IT(m, "qsv", x, zeta, cutoff, n)
    d1, d3 = b.d1_min, b.d3_max
    rel_e2 = max(1.0 - d1 / (d1 + d3 * eta), delta)
    lo11 = d1 ** 2 / (d1 + d3 * eta) ** 2
    hi11 = 2.0 * (1.0 + delta) ** 2 / (2.0 + delta)
    rel_11m = max(1.0 - lo11, hi11 - 1.0)
    zn = np.linalg.norm(zeta)

    def sym(p, lo, hi):
        return tuple(v / zn for v in (p, min(lo, hi), max(lo, hi)))

    p11p = aI_p
    p11m = -pm["e2_d1sq_mean"] * aT_m
    p33p = aT_p
    pe2p = -aT_p / pm["d1_l"]
    pe2m = aT_m / pm["d1_l"]
    return {
        "N11+": sym(p11p, p11p * (1 - delta / 2), p11p * (1 + delta / 2)),
        "N11-": sym(p11m, p11m * (1 - rel_11m), p11m * (1 + rel_11m)),
        "N33+": sym(p33p, p33p * (1 - delta / 2), p33p * (1 + delta / 2)),
        "N33-": sym(0.0, -0.5 * delta * aT_m, 0.0),
        "NE2+": sym(pe2p, pe2p * (1 - rel_e2), pe2p * (1 + rel_e2)),
        "NE2-": sym(pe2m, pe2m * (1 - rel_e2), pe2m * (1 + rel_e2)),
    }


# functional relationships

_REL_TARGETS = {"a33": ("a11", "E2"), "E2": ("a11", "a33"), "a11": ("a33", "E2")}


@dataclass
class Relationship:
    """Known relation ``target = f(other two)`` given as an expression."""

    target: str
    expr: sp.Expr

    @classmethod
    def parse(cls, text):
        """Parse ``"a33 = 0.5*a11 + 0.1*E2"``-style relations."""
        if "=" not in text:
            raise ValidationError("relationship must read '<param> = <expression>'")
        lhs, rhs = text.split("=", 1)
        target = parse_nu(lhs)
        syms = {k: sp.Symbol(k) for k in ("a11", "a33", "E2")}
        expr = sp.sympify(rhs, locals=syms)
        extra = expr.free_symbols - {syms[k] for k in _REL_TARGETS[target]}
        if extra:
            raise ValidationError(f"relationship may only use {_REL_TARGETS[target]}, got {sorted(map(str, extra))}")
        return cls(target, expr)

    def ftilde(self, m, mt, x):
        """``f~_nu = int_0^1 df/dnu(nu + s r_nu) ds`` for both free parameters."""
        P, Pt = _endpoint_params(m, mt, x)
        idx = {"a11": 0, "a33": 1, "E2": 4}
        out = {}
        for name in _REL_TARGETS[self.target]:
            d = sp.lambdify([sp.Symbol(k) for k in ("a11", "a33", "E2")], sp.diff(self.expr, sp.Symbol(name)))
            vals = []
            for s in _S_NODES:
                p = P + s * (Pt - P)
                vals.append(float(d(p[idx["a11"]], p[idx["a33"]], p[idx["E2"]])))
            out[name] = float(np.dot(_S_WEIGHTS, vals))
        return out


@dataclass
class EffectiveSymbol:
    """2x2 effective leading symbol for a functional relationship."""

    unknowns: tuple
    table: np.ndarray
    direct: np.ndarray
    det_table: float
    det_direct: float
    ftilde: dict
    flags: dict


def effective_symbols(m, mt, relationship, x, zeta, eps, n=256, sub_s=None):
    """Effective 2x2 principal symbol under ``relationship`` at ``(x, zeta)``.

    ``table`` uses the quantitative forms through ``a_{+-,I/T}``; ``direct``
    adds ``f~_nu`` times the principal prediction of the eliminated
    parameter to each remaining one.  Rows are (qP, qSV); columns follow
    ``unknowns``.

    For the ``a11`` relationship, passing ``sub_s`` evaluates the
    subprincipal determinant on ``Sigma`` at ``zeta = sub_s xibar``
    (returned in ``flags``).
    """
    rel = relationship if isinstance(relationship, Relationship) else Relationship.parse(relationship)
    cutoff = Cutoff(eps)
    ft = rel.ftilde(m, mt, x)
    pm = parameter_means(m, mt, x)
    aI_p, aT_p = a_IT(m, "qp", x, zeta, cutoff, n)
    aI_m, aT_m = a_IT(m, "qsv", x, zeta, cutoff, n)
    zn = np.linalg.norm(zeta)
    d1l = pm["d1_l"]
    if rel.target == "a33":
        unknowns = ("a11", "E2")
        f11, fe = ft["a11"], ft["E2"]
        table = np.array([[aI_p + f11 * aT_p, (-1.0 / d1l + fe) * aT_p],
                          [0.0, aT_m / d1l]])
    elif rel.target == "E2":
        unknowns = ("a11", "a33")
        f11, f33 = ft["a11"], ft["a33"]
        table = np.array([[aI_p - f11 / d1l * aT_p, (1.0 - f33 / d1l) * aT_p],
                          [f11 / d1l * aT_m, f33 / d1l * aT_m]])
    else:
        unknowns = ("a33", "E2")
        f33, fe = ft["a33"], ft["E2"]
        q = pm["e2_d1sq_mean"]
        table = np.array([[aT_p + f33 * aI_p, -aT_p / d1l + fe * aI_p],
                          [-q * f33 * aT_m, (1.0 / d1l - q * fe) * aT_m]])
    table = table / zn

    def sig(mode, nu):
        return principal_prediction(m, mt, mode, nu, x, zeta, cutoff, n).scalar.real

    direct = np.empty((2, 2))
    for i, mode in enumerate(("qp", "qsv")):
        elim = sig(mode, rel.target)
        for j, nu in enumerate(unknowns):
            direct[i, j] = sig(mode, nu) + ft[nu] * elim
    det_t = float(np.linalg.det(table))
    det_d = float(np.linalg.det(direct))
    u = float(transverse_u(m, x, zeta)[0])
    flags = {"off_sigma": u > 1e-12, "det_nonzero": abs(det_d) > 1e-12 * max(np.abs(direct).max() ** 2, 1e-300)}
    if rel.target == "a33":
        flags["ftilde_condition"] = ft["a11"] >= 0
        flags["upper_left_positive"] = direct[0, 0] > 0
    elif rel.target == "E2":
        flags["ftilde_condition"] = abs(ft["a33"]) > 0
    else:
        flags["ftilde_condition"] = ft["a33"] != 0
        if sub_s is not None:
            flags.update(_a11_subprincipal_det(m, mt, x, sub_s, ft, cutoff, n))
    return EffectiveSymbol(unknowns, table, direct, det_t, det_d, ft, flags)


def _a11_subprincipal_det(m, mt, x, s, ft, cutoff, n):
    xb, _, _ = m.axis.jet(_as_points(x)[:1], 0)
    zeta = s * xb[0]
    p11 = principal_prediction(m, mt, "qp", "a11", x, zeta, cutoff, n).scalar.real
    sub_e2 = subprincipal_prediction(m, mt, "qsv", "E2", x, s, cutoff, n).scalar
    sub_11 = subprincipal_prediction(m, mt, "qsv", "a11", x, s, cutoff, n).scalar
    f33, fe = ft["a33"], ft["E2"]
    full = (f33 * p11) * (sub_e2 + fe * sub_11) - (fe * p11) * (f33 * sub_11)
    return {"sub_det": complex(full), "sub_det_formula": complex(f33 * p11 * sub_e2)}


# probes


def probe_field(x, zeta, sigma):
    """``u(y) = exp(i zeta.(y - x)) exp(-|y - x|^2 / (2 sigma^2))`` as a callable."""
    x = np.asarray(x, float).reshape(3)
    zeta = np.asarray(zeta, float)

    def u(pts):
        d = np.asarray(pts, float) - x
        return np.exp(1j * d @ zeta - np.einsum("ni,ni->n", d, d) / (2.0 * sigma ** 2))

    u.is_complex = True
    return u


def zeta_adapted_rule(zeta, sigma, n_beta=48, n_phi=256, bend=0.0):
    """Directions concentrated near the great circle ``zeta^perp``.

    ``omega = cos(b) (cos(p) e1 + sin(p) e2) + sin(b) zeta_hat`` with Gauss
    nodes in ``b`` over ``|b| <= min(pi/2, 6 / (sigma |zeta|) + 6 sigma bend)``
    and the trapezoid rule in ``p``; weights include ``cos(b)``.  ``bend``
    bounds the ray acceleration along ``zeta_hat``, which shifts the
    stationary directions off the great circle.
    """
    z = np.asarray(zeta, float)
    zn = np.linalg.norm(z)
    zh = z / zn
    e1, e2 = _frame(zh[None])
    bmax = min(0.5 * np.pi, 6.0 / (sigma * zn) + 6.0 * sigma * bend)
    b, wb = gauss_legendre(-bmax, bmax, n_beta)
    p = 2.0 * np.pi * np.arange(n_phi) / n_phi
    B, Pp = np.meshgrid(b, p, indexing="ij")
    om = (np.cos(B)[..., None] * (np.cos(Pp)[..., None] * e1 + np.sin(Pp)[..., None] * e2)
          + np.sin(B)[..., None] * zh).reshape(-1, 3)
    w = (wb[:, None] * np.cos(b)[:, None] * np.full(n_phi, 2.0 * np.pi / n_phi)[None]).ravel()
    return om, w


def probe_homogeneous(m, mt, mode, nu, x, zeta, cutoff=Cutoff(), sigma=0.5, n_beta=48, n_phi=256):
    """Exact response of ``N^nu`` to ``e_j u`` at the probe centre for homogeneous models.

    Straight rays and identity Jacobians reduce each line integral of the
    probe to ``sqrt(2 pi) sigma exp(-sigma^2 (omega.zeta)^2 / 2)``.
    Returns the 3x3 response matrix (a multiple of the identity).
    """
    if not (m.is_homogeneous and (mt is None or mt.is_homogeneous)):
        raise ValidationError("probe_homogeneous needs homogeneous models; use probe_rays")
    om, w = zeta_adapted_rule(zeta, sigma, n_beta, n_phi)
    X = np.repeat(_as_points(x)[:1], om.shape[0], 0)
    xi = xi_of_omega(m, mode, X, om)
    c = om @ np.asarray(zeta, float)
    line = np.sqrt(2.0 * np.pi) * sigma * np.exp(-0.5 * (sigma * c) ** 2)
    val = np.sum(w * cutoff(m, X, xi) * weight_E_nu(m, mt, mode, nu, X, xi) * line)
    return val * np.eye(3, dtype=complex)


def probe_rays(m, mt, mode, nu, x, zeta, cutoff=Cutoff(), sigma=0.5, n_beta=16, n_phi=64, panels=24, order=8,
               tol=1e-10):
    """Ray-traced response of ``N^nu`` to ``e_j u`` at the probe centre (3x3 matrix).

    Works for heterogeneous models; the ray quadrature is restricted to the
    probe window ``|t| <= 6 sigma`` around the centre, and the direction
    band is widened by the ray bending along ``zeta``.
    """
    x1 = _as_points(x)[:1]
    oc, _ = great_circle(zeta, 64)
    zh = np.asarray(zeta, float) / np.linalg.norm(zeta)
    bend = float(np.max(np.abs(alpha(m, mode, x1, oc) @ zh)))
    om, w = zeta_adapted_rule(zeta, sigma, n_beta, n_phi, bend)
    X = np.repeat(x1, om.shape[0], 0)
    xi = xi_of_omega(m, mode, X, om)
    chi = cutoff(m, X, xi)
    keep = chi * w > 0
    om, w, X, xi, chi = om[keep], w[keep], X[keep], xi[keep], chi[keep]
    q = RayQuadrature.build(m, mt, mode, X, xi, panels=panels, order=order, window=6.0 * sigma, tol=tol)
    n, K = q.s.shape
    pts = q.points()
    E = weight_E_nu(m, mt, mode, nu, pts, q.Z[..., 3:].reshape(-1, 3)).reshape(n, K)
    uv = probe_field(x1[0], zeta, sigma)(pts).reshape(n, K)
    Imat = -np.einsum("nk,nk,nk,nkij->nij", q.w, E, uv, q.B[:, :, 3:, 3:])
    sol = np.linalg.solve(-q.Jx[:, 3:, 3:].astype(complex), Imat)
    return np.einsum("n,nij->ij", w * chi, sol)


def probe_operator_symbol(apply, x, zetas, h, sigma=None, check_nyquist=True):
    """Estimate a symbol by applying an operator to modulated Gaussians.

    Parameters
    ----------
    apply : callable
        ``apply(x, zeta, sigma) -> (3, 3)`` response matrix at the probe centre.
    h : float
        Grid spacing defining the admissible band ``|zeta|_inf * h <= pi``.
    sigma : float, optional
        Gaussian width; 8 grid spacings by default.

    Raises
    ------
    ProbeInvalidError
        If a probe frequency exceeds the grid Nyquist limit.
    """
    sigma = 8.0 * h if sigma is None else sigma
    out = []
    for zeta in np.atleast_2d(np.asarray(zetas, float)):
        if check_nyquist and np.abs(zeta).max() * h > np.pi:
            raise ProbeInvalidError(f"|zeta|={np.linalg.norm(zeta):.4g} exceeds the Nyquist limit pi/h={np.pi / h:.4g}")
        val = np.asarray(apply(x, zeta, sigma))
        out.append(SymbolSample(np.asarray(x, float).reshape(3), zeta, val, -1, meta={"sigma": sigma, "h": h}))
    return out


def fit_exponent(u, values):
    """Slope of ``log|values|`` against ``log u`` (least squares)."""
    u = np.asarray(u, float)
    v = np.abs(np.asarray(values))
    return float(np.polyfit(np.log(u), np.log(v), 1)[0])


def vanishing_scan(m, mt, mode, nu, x, zmag=1024.0, u=None, cutoff=Cutoff(0.6), sigma=0.5, method="probe",
                   n=256):
    """Transverse scan towards ``Sigma`` and the fitted vanishing exponent.

    Parameters
    ----------
    method : {"probe", "prediction"}
        Homogeneous analytic probe or great-circle prediction.

    Returns
    -------
    exponent : float
    u : ndarray
    values : ndarray
    """
    u = np.geomspace(0.02, 0.2, 9) if u is None else np.asarray(u, float)
    zs = scan_covector(m, x, zmag, u)
    vals = []
    for z in zs:
        if method == "probe":
            vals.append(probe_homogeneous(m, mt, mode, nu, x, z, cutoff, sigma)[0, 0].real)
        else:
            vals.append(principal_prediction(m, mt, mode, nu, x, z, cutoff, n).scalar.real)
    vals = np.array(vals)
    return fit_exponent(u, vals), u, vals
