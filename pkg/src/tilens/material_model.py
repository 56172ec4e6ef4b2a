"""Transversely isotropic material models and their wave-speed Hamiltonians.

The qP/qSV speeds are evaluated in frame-free form through ``T = xi . xibar``
and ``S = |xi|^2`` (so ``xi_T = T`` and ``xi_I^2 = S - T^2``), and all phase
space derivatives follow from the primitive-variable jet in ``_backend``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from . import _backend
from .errors import ConvexityError, ModelInvalidError, ValidationError
from .fields import AxisField, ConstantField, ScalarField, SumField, _as_points

PARAM_NAMES = ("a11", "a33", "a55", "a66", "E2")


class Mode(enum.Enum):
    """Wave branch: qP (sign +1), qSV (sign -1) or qSH."""

    QP = "qp"
    QSV = "qsv"
    QSH = "qsh"

    @property
    def sign(self) -> int:
        return {"qp": 1, "qsv": -1, "qsh": 0}[self.value]

    @classmethod
    def parse(cls, value) -> "Mode":
        if isinstance(value, Mode):
            return value
        key = str(value).strip().lower().replace("+", "p").replace("-", "")
        aliases = {"qp": "qp", "p": "qp", "qsv": "qsv", "sv": "qsv", "qsh": "qsh", "sh": "qsh"}
        if key not in aliases:
            raise ValidationError(f"unknown mode {value!r}; expected qp, qsv or qsh")
        return cls(aliases[key])


@dataclass(frozen=True)
class MaterialModel:
    """Five TI parameter fields plus the axis of isotropy.

    Parameters
    ----------
    a11, a33, a55, a66, E2 : ScalarField
    axis : AxisField
        ``xibar = grad f / |grad f|`` for the layer function ``f``.
    domain_radius : float
        Radius of the ball (centred at the origin) carrying the experiment.
    """

    a11: ScalarField
    a33: ScalarField
    a55: ScalarField
    a66: ScalarField
    E2: ScalarField
    axis: AxisField
    domain_radius: float = 1.0
    name: str = field(default="model", compare=False)

    def __post_init__(self):
        if not self.domain_radius > 0:
            raise ValidationError("domain_radius must be positive")

    @classmethod
    def constant(cls, a11, a33, a55, a66, E2, axis=(0.0, 0.0, 1.0), domain_radius=1.0, name="homogeneous"):
        return cls(*(ConstantField(v) for v in (a11, a33, a55, a66, E2)), AxisField(direction=axis),
                   domain_radius, name)

    @classmethod
    def isotropic(cls, lam, mu, axis=(0.0, 0.0, 1.0), domain_radius=1.0):
        return cls.constant(lam + 2 * mu, lam + 2 * mu, mu, mu, 0.0, axis, domain_radius, "isotropic")

    @property
    def fields(self):
        return (self.a11, self.a33, self.a55, self.a66, self.E2)

    @property
    def is_homogeneous(self) -> bool:
        return all(f.is_constant for f in self.fields) and self.axis.is_constant

    def params_jet(self, x, order=2):
        """Parameter values ``P (n,5)`` with gradients ``(n,5,3)`` and Hessians ``(n,5,3,3)``."""
        jets = [f.jet(x, order) for f in self.fields]
        P = np.stack([j.v for j in jets], axis=1)
        dP = np.stack([j.g for j in jets], axis=1) if order >= 1 else None
        d2P = np.stack([j.H for j in jets], axis=1) if order >= 2 else None
        return P, dP, d2P

    def perturbed(self, r11: ScalarField | None = None, r33: ScalarField | None = None,
                  rE2: ScalarField | None = None, name="perturbed") -> "MaterialModel":
        """Return ``m + r`` with the given differences in ``a11, a33, E2``."""
        return replace(
            self,
            a11=self.a11 if r11 is None else SumField(self.a11, r11),
            a33=self.a33 if r33 is None else SumField(self.a33, r33),
            E2=self.E2 if rE2 is None else SumField(self.E2, rE2),
            name=name,
        )

    def validate(self, x):
        """Check the pointwise parameter invariants at points ``x``."""
        x = _as_points(x)
        P, _, _ = self.params_jet(x, 0)
        a11, a33, a55, a66, e2 = P.T
        for ok, msg in ((a11 - a55 > 0, "a11 - a55 must be positive"),
                        (a33 - a55 > 0, "a33 - a55 must be positive"),
                        (a55 > 0, "a55 must be positive"), (a66 > 0, "a66 must be positive"),
                        (e2 < (a11 - a55) * (a33 - a55), "E2 must stay below (a11-a55)(a33-a55)")):
            if not np.all(ok):
                raise ModelInvalidError(msg, x[int(np.argmin(ok))])
        # the discriminant is positive on all unit xi iff E2 < d1*d3 and (E2 <= 0 or branches separate)
        u = np.linspace(0.0, 1.0, 65)
        I2 = 1.0 - u ** 2
        T2 = u ** 2
        d1 = (a11 - a55)[:, None]
        d3 = (a33 - a55)[:, None]
        disc = (d1 * I2 + d3 * T2) ** 2 - 4.0 * e2[:, None] * I2 * T2
        if not np.all(disc > 0):
            bad = np.nonzero(~np.all(disc > 0, axis=1))[0][0]
            raise ModelInvalidError("qP/qSV branches touch (non-positive discriminant)", x[bad])


@dataclass
class PhaseJet:
    """Hamiltonian value and phase-space derivatives at ``n`` points.

    ``Gxxi[n, i, j] = d^2 G / dx_i dxi_j``.
    """

    G: np.ndarray
    Gx: np.ndarray | None = None
    Gxi: np.ndarray | None = None
    Gxx: np.ndarray | None = None
    Gxxi: np.ndarray | None = None
    Gxixi: np.ndarray | None = None


def _check_bad(bad, x):
    if np.any(bad):
        raise ModelInvalidError("non-positive discriminant under the square root", x[int(np.argmax(bad))])


def phase_jet(m: MaterialModel, mode, x, xi, order=1, xi_only=False) -> PhaseJet:
    """Evaluate ``G`` and its derivatives up to ``order`` at ``(x, xi)``.

    With ``xi_only`` the spatial derivatives are skipped.
    """
    mode = Mode.parse(mode)
    x = _as_points(x)
    xi = np.asarray(xi, dtype=float).reshape(-1, 3)
    if xi.shape[0] != x.shape[0]:
        x = np.broadcast_to(x, xi.shape).copy()
    n = x.shape[0]
    pord = 0 if xi_only else order
    P, dP, d2P = m.params_jet(x, pord)
    xb, D, D2 = m.axis.jet(x, pord)
    T = np.einsum("ni,ni->n", xi, xb)
    S = np.einsum("ni,ni->n", xi, xi)
    if np.any(S == 0):
        raise ValidationError("covector must be nonzero")
    g, dg, d2g, bad = _backend.ti_jet(P[:, 0], P[:, 1], P[:, 2], P[:, 3], P[:, 4], T, S, mode.sign, order)
    _check_bad(bad, x)
    out = PhaseJet(g)
    if order < 1:
        return out
    # first derivatives of u = (a11, a33, a55, a66, E2, T, S) in z = (x, xi)
    du = np.zeros((n, 7, 6))
    du[:, 5, 3:] = xb
    du[:, 6, 3:] = 2.0 * xi
    if not xi_only:
        du[:, :5, :3] = dP
        du[:, 5, :3] = np.einsum("ni,nij->nj", xi, D)
    Gz = np.einsum("nk,nkz->nz", dg, du)
    out.Gx, out.Gxi = Gz[:, :3], Gz[:, 3:]
    if order < 2:
        return out
    d2u = np.zeros((n, 7, 6, 6))
    d2u[:, 6, 3:, 3:] = 2.0 * np.eye(3)
    if not xi_only:
        d2u[:, :5, :3, :3] = d2P
        d2u[:, 5, :3, :3] = np.einsum("ni,nijk->njk", xi, D2)
        d2u[:, 5, :3, 3:] = np.swapaxes(D, 1, 2)  # [x_j, xi_i] = D[i, j]
        d2u[:, 5, 3:, :3] = D
    Gzz = np.einsum("nka,nkl,nlb->nab", du, d2g, du, optimize=True) + np.einsum("nk,nkab->nab", dg, d2u)
    out.Gxx, out.Gxxi, out.Gxixi = Gzz[:, :3, :3], Gzz[:, :3, 3:], Gzz[:, 3:, 3:]
    return out


def eval_G(m, mode, x, xi):
    """Wave speed ``G(x, xi)`` (vectorized over rows)."""
    return phase_jet(m, mode, x, xi, 0, xi_only=True).G


def grad_xi_G(m, mode, x, xi):
    return phase_jet(m, mode, x, xi, 1, xi_only=True).Gxi


def grad_x_G(m, mode, x, xi):
    return phase_jet(m, mode, x, xi, 1).Gx


def hess_xi_G(m, mode, x, xi):
    return phase_jet(m, mode, x, xi, 2, xi_only=True).Gxixi


def a_pm(m, mode, x, order=0):
    """``a_+ = a11`` (qP), ``a_- = a55`` (qSV), ``a66`` (qSH) with optional gradient."""
    mode = Mode.parse(mode)
    fld = {1: m.a11, -1: m.a55, 0: m.a66}[mode.sign]
    j = fld.jet(_as_points(x), order)
    return (j.v, j.g) if order else j.v


def h_pm(m, mode, x):
    """Axis-axis Hessian entry of ``G`` on the equator, per branch."""
    mode = Mode.parse(mode)
    P, _, _ = m.params_jet(_as_points(x), 0)
    a11, a33, a55, a66, e2 = P.T
    if mode.sign == 1:
        return 4.0 * (a33 - e2 / (a11 - a55))
    if mode.sign == -1:
        return 4.0 * (a55 + e2 / (a11 - a55))
    return 2.0 * a55


def xi_T_xi_I(m, x, xi):
    """Return ``(xi_T, xi_I^2)`` relative to the local axis."""
    x = _as_points(x)
    xi = np.asarray(xi, dtype=float).reshape(-1, 3)
    xb, _, _ = m.axis.jet(x, 0)
    T = np.einsum("ni,ni->n", xi, xb)
    return T, np.maximum(np.einsum("ni,ni->n", xi, xi) - T * T, 0.0)


def xi_of_omega(m, mode, x, omega, tol=1e-12, max_iter=50):
    """Invert ``omega = d_xi G(x, xi)`` by damped Newton iteration.

    Parameters
    ----------
    omega : ndarray, shape (n, 3)
        Target group directions (any nonzero length).

    Raises
    ------
    ConvexityError
        If the iteration does not reach ``tol`` within ``max_iter`` steps.
    """
    mode = Mode.parse(mode)
    omega = np.asarray(omega, dtype=float).reshape(-1, 3)
    x = _as_points(x)
    if x.shape[0] != omega.shape[0]:
        x = np.broadcast_to(x, omega.shape).copy()
    a = a_pm(m, mode, x)
    seed = 2.0 if mode.sign == 0 else 4.0
    xi = omega / (seed * a)[:, None]
    scale = np.linalg.norm(omega, axis=1)
    jet = phase_jet(m, mode, x, xi, 2, xi_only=True)
    res = jet.Gxi - omega
    rn = np.linalg.norm(res, axis=1)
    for _ in range(max_iter):
        todo = rn > tol * np.maximum(scale, 1e-300)
        if not np.any(todo):
            return xi
        idx = np.nonzero(todo)[0]
        step = -np.linalg.solve(jet.Gxixi[idx], res[idx][..., None])[..., 0]
        lam = np.ones(idx.size)
        cand = xi[idx] + step
        for _ in range(30):
            cj = phase_jet(m, mode, x[idx], cand, 1, xi_only=True)
            cr = np.linalg.norm(cj.Gxi - omega[idx], axis=1)
            worse = cr >= rn[idx]
            if not np.any(worse):
                break
            lam = np.where(worse, 0.5 * lam, lam)
            cand = xi[idx] + lam[:, None] * step
        xi[idx] = cand
        jet_i = phase_jet(m, mode, x[idx], cand, 2, xi_only=True)
        res[idx] = jet_i.Gxi - omega[idx]
        rn[idx] = np.linalg.norm(res[idx], axis=1)
        jet.Gxixi[idx] = jet_i.Gxixi
    if np.any(rn > tol * np.maximum(scale, 1e-300)):
        bad = int(np.argmax(rn / np.maximum(scale, 1e-300)))
        raise ConvexityError(f"Newton for xi(omega) did not converge at x={x[bad].tolist()}, "
                             f"omega={omega[bad].tolist()} (residual {rn[bad]:.3e})")
    return xi


def alpha(m, mode, x, omega):
    """Half the initial ray acceleration, ``X(t) = x + omega t + alpha t^2 + O(t^3)``."""
    omega = np.asarray(omega, dtype=float).reshape(-1, 3)
    xi = xi_of_omega(m, mode, x, omega)
    j = phase_jet(m, mode, np.broadcast_to(_as_points(x), omega.shape), xi, 2)
    return 0.5 * (np.einsum("nj,nji->ni", omega, j.Gxxi) - np.einsum("nj,nji->ni", j.Gx, j.Gxixi))


def curvature_term(m, x, omega):
    """Second fundamental form ``[(omega . d) xibar] . omega`` of the layers."""
    x = _as_points(x)
    omega = np.asarray(omega, dtype=float).reshape(-1, 3)
    _, D, _ = m.axis.jet(np.broadcast_to(x, omega.shape), 1)
    return np.einsum("ni,nij,nj->n", omega, D, omega)


def mean_curvature(m, x):
    """Mean curvature ``H = div(xibar) / 2`` of the layer through ``x``."""
    _, D, _ = m.axis.jet(_as_points(x), 1)
    return 0.5 * np.trace(D, axis1=1, axis2=2)


def d_t_xiT(m, mode, x, omega):
    """Rate of change of ``xi_T`` along the ray for ``omega`` orthogonal to the axis."""
    x = _as_points(x)
    omega = np.asarray(omega, dtype=float).reshape(-1, 3)
    xb, _, _ = m.axis.jet(x, 0)
    a, ga = a_pm(m, mode, x, order=1)
    return curvature_term(m, x, omega) / (4.0 * a) - np.einsum("ni,ni->n", xb, ga) / (8.0 * a * a)


def d_par_xiT(m, mode, x, s):
    """Derivative of ``xi_T`` along the axis direction of ``omega``: ``sgn(s)/h``."""
    return np.sign(s) / h_pm(m, mode, x)
