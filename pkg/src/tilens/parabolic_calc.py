"""Parabolic symbol classes ``S^{m,k}`` relative to ``Sigma = span e_n``.

Symbols are callables ``a(x, zeta)`` on arrays of shape ``(n, d)``.  In a
foliated chart the last frequency coordinate spans ``Sigma``, so
``zeta'`` is everything but the last component.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import NotParabolicError, ValidationError

DYADS = tuple(2.0 ** j for j in range(4, 11))


def d_sigma(zeta):
    """``sqrt(|zeta'|^2 / |zeta|^2 + 1 / |zeta|)`` for ``Sigma = span e_n``."""
    z = np.atleast_2d(np.asarray(zeta, float))
    r = np.linalg.norm(z, axis=1)
    zp2 = np.sum(z[:, :-1] ** 2, axis=1)
    return np.sqrt(zp2 / r ** 2 + 1.0 / r)


@dataclass
class SmkSymbol:
    """A symbol ``a(x, zeta)`` with declared orders ``(m, k)``.

    Parameters
    ----------
    func : callable
        ``func(x, zeta) -> (n,)`` complex array for ``x`` of shape
        ``(n, dx)`` and ``zeta`` of shape ``(n, d)``.
    x_dependent : bool
        Whether tangent ``x``-derivatives need testing.
    """

    func: Callable
    m: float
    k: float
    dx: int = 1
    d: int = 2
    x_dependent: bool = True
    name: str = ""
    meta: dict = field(default_factory=dict)

    def __call__(self, x, zeta):
        x = np.atleast_2d(np.asarray(x, float))
        zeta = np.atleast_2d(np.asarray(zeta, float))
        if x.shape[0] != zeta.shape[0]:
            x = np.broadcast_to(x, (zeta.shape[0], x.shape[1]))
        return np.asarray(self.func(x, zeta), dtype=complex)

    def __mul__(self, other: "SmkSymbol"):
        return SmkSymbol(lambda x, z: self(x, z) * other(x, z), self.m + other.m, self.k + other.k, self.dx, self.d,
                         self.x_dependent or other.x_dependent, f"({self.name})*({other.name})")

    def with_orders(self, m, k):
        return SmkSymbol(self.func, m, k, self.dx, self.d, self.x_dependent, self.name, dict(self.meta))


def includes(m, k, m2, k2):
    """Whether ``S^{m,k}`` sits inside ``S^{m2,k2}``."""
    return m <= m2 + 1e-12 and m - k / 2.0 <= m2 - k2 / 2.0 + 1e-12


# sampling


def dyadic_samples(r, d, x_points, n_dirs=3, seed=0):
    """Frequencies of length ``r`` spanning ``|p|`` from ``Sigma`` to the transverse plane.

    ``|p| = |zeta'| / |zeta|`` takes the values 0, ``r^-1/2`` times
    (1/4, 1, 4) and (0.1, 0.3, 0.6, 1), both signs of the axial component.
    """
    rng = np.random.default_rng(seed)
    ps = np.concatenate([[0.0], r ** -0.5 * np.array([0.25, 1.0, 4.0]), [0.1, 0.3, 0.6, 1.0]])
    ps = np.unique(np.clip(ps, 0.0, 1.0))
    dirs = rng.normal(size=(n_dirs, d - 1))
    dirs /= np.linalg.norm(dirs, axis=1)[:, None]
    if d == 2:
        dirs = np.array([[1.0], [-1.0]])
    Z = []
    for p in ps:
        for s in (1.0, -1.0):
            for e in dirs if p > 0 else dirs[:1]:
                Z.append(np.concatenate([r * p * e, [s * r * np.sqrt(1.0 - p * p)]]))
    Z = np.array(Z)
    X = np.atleast_2d(np.asarray(x_points, float))
    return np.repeat(X, Z.shape[0], 0), np.tile(Z, (X.shape[0], 1))


# degree-0 vector fields, applied by nested central differences

_FD = (np.array([-2.0, -1.0, 1.0, 2.0]), np.array([1.0, -8.0, 8.0, -1.0]) / 12.0)


def _ops(sym: SmkSymbol):
    """Tangent operators (``x_j``, radial, ``|zeta| d_zeta_n``) and transverse ``|zeta| d_zeta'_i``."""
    tang = [("x", j) for j in range(sym.dx)] if sym.x_dependent else []
    tang += [("rad", None), ("n", sym.d - 1)]
    trans = [("w", i) for i in range(sym.d - 1)]
    return tang, trans


def _shift(op, x, z, t):
    kind, j = op
    if kind == "x":
        x = x.copy()
        x[:, j] += t
        return x, z
    if kind == "rad":
        return x, z * np.exp(t)[:, None]
    z = z.copy()
    z[:, j] += t * np.linalg.norm(z, axis=1)
    return x, z


def _step(op, z, rel):
    if op[0] == "x":
        return np.full(z.shape[0], rel)
    return rel * d_sigma(z)


def apply_word(sym: SmkSymbol, word, x, z, rel=0.05):
    """``W^alpha V^beta a`` at ``(x, z)`` for a word of operators (outermost first)."""
    if not word:
        return sym(x, z)
    op, rest = word[0], word[1:]
    h = _step(op, z, rel)
    acc = 0.0
    for o, c in zip(*_FD):
        xs, zs = _shift(op, x, z, o * h)
        acc = acc + c * apply_word(sym, rest, xs, zs, rel)
    return acc / h


@dataclass
class MembershipReport:
    m: float
    k: float
    dyads: np.ndarray
    constants: np.ndarray
    slope: float
    spread: float
    passed: bool
    worst_word: tuple = ()

    def summary(self):
        return (f"S^{{{self.m:g},{self.k:g}}}: C(r)={np.array2string(self.constants, precision=3)} "
                f"spread={self.spread:.3g} slope={self.slope:.3g} -> {'pass' if self.passed else 'fail'}")


def smk_membership_test(sym: SmkSymbol, m=None, k=None, x_points=None, dyads=DYADS, max_order=3,
                        spread_tol=4.0, slope_tol=0.25, rel=0.05, seed=0) -> MembershipReport:
    """Fit the constants in ``|W^alpha V^beta a| <= C r^m d^(k - |alpha|)`` per dyad.

    Passes when the constants over the top three dyads grow by at most a
    factor ``spread_tol`` and their log-log slope in ``r`` is at most
    ``slope_tol``.
    """
    m = sym.m if m is None else m
    k = sym.k if k is None else k
    x_points = np.zeros((1, sym.dx)) if x_points is None else np.atleast_2d(x_points)
    tang, trans = _ops(sym)
    ops = tang + trans
    words = [()]
    for n in range(1, max_order + 1):
        words += list(itertools.combinations_with_replacement(ops, n))
    consts, worst = [], []
    for r in dyads:
        X, Z = dyadic_samples(r, sym.d, x_points, seed=seed)
        d = d_sigma(Z)
        best, bw = 0.0, ()
        for w in words:
            na = sum(1 for o in w if o[0] == "w")
            val = np.abs(apply_word(sym, w, X, Z, rel))
            c = float(np.max(val / (r ** m * d ** (k - na))))
            if c > best:
                best, bw = c, w
        consts.append(best)
        worst.append(bw)
    consts = np.array(consts)
    top = consts[-3:]
    lr = np.log(np.asarray(dyads, float)[-3:])
    slope = float(np.polyfit(lr, np.log(np.maximum(top, 1e-300)), 1)[0])
    # growth relative to the first of the top dyads; decaying constants are fine
    spread = float(top.max() / max(top[0], 1e-300))
    ok = bool(np.all(np.isfinite(top)) and spread <= spread_tol and slope <= slope_tol)
    return MembershipReport(m, k, np.asarray(dyads, float), consts, slope, spread, ok, worst[-1])


# parabolic inverses


def inverse_parabolic(p_m: SmkSymbol, p_m1: SmkSymbol, m=None, x_points=None, dyads=DYADS, c_tol=1e-6,
                      decay_tol=0.25, seed=0) -> SmkSymbol:
    """``q = 1 / (p_m + i p_{m-1})`` with the lower bound ``|p| >= c r^m d^2`` verified.

    ``c_tol`` is relative: the smallest constant must exceed ``c_tol`` times
    the largest sampled ``|p| / (r^m d^2)``.

    Raises
    ------
    NotParabolicError
        If ``p_m`` is negative somewhere, or the lower-bound constant
        degenerates across scales (e.g. ``p_{m-1}`` vanishes on ``Sigma``).
    """
    m = p_m.m if m is None else m
    x_points = np.zeros((1, p_m.dx)) if x_points is None else np.atleast_2d(x_points)
    cs, top = [], 0.0
    for r in dyads:
        X, Z = dyadic_samples(r, p_m.d, x_points, seed=seed)
        a, b = p_m(X, Z), p_m1(X, Z)
        if np.any(a.real < -1e-12 * r ** m) or np.any(np.abs(a.imag) > 1e-12 * r ** m):
            raise NotParabolicError("leading part must be real and nonnegative")
        if np.any(np.abs(b.imag) > 1e-12 * r ** m):
            raise NotParabolicError("subleading part must be real")
        ratio = np.abs(a + 1j * b) / (r ** m * d_sigma(Z) ** 2)
        cs.append(float(ratio.min()))
        top = max(top, float(ratio.max()))
    cs = np.array(cs)
    slope = float(np.polyfit(np.log(np.asarray(dyads, float)), np.log(np.maximum(cs, 1e-300)), 1)[0])
    if cs.min() <= c_tol * top or slope < -decay_tol:
        raise NotParabolicError(f"lower bound |p| >= c r^m d^2 fails: c(r)={np.array2string(cs, precision=3)}")

    def q(x, z):
        return 1.0 / (p_m(x, z) + 1j * p_m1(x, z))

    return SmkSymbol(q, -m, -2, p_m.dx, p_m.d, p_m.x_dependent or p_m1.x_dependent, f"1/({p_m.name}+i{p_m1.name})",
                     {"lower_bound": cs})


def heat_symbols(c=None, b=None):
    """``p_2 = c(x, t) xi^2`` and ``p_1 = b(x, t) tau`` in 1+1 dimensions.

    Constant coefficients by default; ``c``/``b`` are callables of
    ``x`` with shape ``(n, 2)``.
    """
    cf = c or (lambda x: np.ones(x.shape[0]))
    bf = b or (lambda x: np.ones(x.shape[0]))
    dep = c is not None or b is not None
    t2 = [(cf, lambda z: z[:, 0] ** 2)]
    t1 = [(bf, lambda z: z[:, 1])]
    p2 = SmkSymbol(lambda x, z: cf(x) * z[:, 0] ** 2, 2, 2, 2, 2, dep, "c xi^2", {"terms": t2})
    p1 = SmkSymbol(lambda x, z: bf(x) * z[:, 1], 1, 0, 2, 2, dep, "b tau", {"terms": t1})
    return p2, p1


def _times_i(g):
    return lambda z: 1j * g(z)


def full_symbol(p_m: SmkSymbol, p_m1: SmkSymbol) -> SmkSymbol:
    """``p_m + i p_{m-1}``, keeping separable structure when both parts have it."""
    meta = {}
    if "terms" in p_m.meta and "terms" in p_m1.meta:
        meta["terms"] = list(p_m.meta["terms"]) + [(f, _times_i(g)) for f, g in p_m1.meta["terms"]]
    return SmkSymbol(lambda x, z: p_m(x, z) + 1j * p_m1(x, z), p_m.m, 2, p_m.dx, p_m.d,
                     p_m.x_dependent or p_m1.x_dependent, f"{p_m.name}+i{p_m1.name}", meta)


def frozen_tomography_symbols(table, sub_coeff, d=3):
    """Parabolic pair from a frozen-coefficient normal-operator symbol.

    Parameters
    ----------
    table : callable
        ``table(zeta) -> sigma_-1(x0, zeta) |zeta|`` (degree-0 principal
        part) in a chart with ``xibar(x0) = e_n``.
    sub_coeff : float
        ``Im a_-2(x0, xibar)``; the subprincipal part extends off
        ``Sigma`` as ``sub_coeff * zeta_n / |zeta|^2``.

    Returns the ``|zeta|^3``-rescaled pair ``(p_2, p_1)``.
    """
    p2 = SmkSymbol(lambda x, z: np.linalg.norm(z, axis=1) ** 2 * table(z), 2, 2, 3, d, False, "|z|^3 s_-1")
    p1 = SmkSymbol(lambda x, z: sub_coeff * z[:, -1], 1, 0, 3, d, False, "|z|^3 s_-2")
    return p2, p1


# periodic left quantization


@dataclass
class PeriodicGrid:
    """Uniform periodic grid on ``prod [0, L_i)``."""

    shape: tuple
    length: tuple

    def __post_init__(self):
        self.shape = tuple(int(n) for n in np.atleast_1d(self.shape))
        self.length = tuple(float(v) for v in np.broadcast_to(self.length, (len(self.shape),)))

    @property
    def spacing(self):
        return np.array(self.length) / np.array(self.shape)

    def points(self):
        axes = [np.arange(n) * h for n, h in zip(self.shape, self.spacing)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, len(self.shape))

    def frequencies(self):
        axes = [2.0 * np.pi * np.fft.fftfreq(n, d=h) for n, h in zip(self.shape, self.spacing)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, len(self.shape))

    @property
    def nyquist(self):
        return float(np.min(np.pi / self.spacing))


def quantize(a, u, grid: PeriodicGrid, chunk=1 << 22):
    """Discrete left quantization ``a(x, D) u`` on a periodic grid.

    ``(a(x, D) u)(x) = sum_k a(x, k) u_hat(k) exp(i k.x)`` with
    ``u_hat = fft(u) / N``.  Cost is ``N^2`` symbol evaluations.
    """
    u = np.asarray(u)
    if u.shape != grid.shape:
        raise ValidationError(f"field shape {u.shape} does not match grid {grid.shape}")
    terms = getattr(a, "meta", {}).get("terms")
    if terms is not None:
        # sum of products f(x) g(zeta): one FFT pair per term
        X, K = grid.points(), grid.frequencies()
        uh = np.fft.fftn(u)
        out = np.zeros(grid.shape, complex)
        for fx, gz in terms:
            out += fx(X).reshape(grid.shape) * np.fft.ifftn(uh * gz(K).reshape(grid.shape))
        return out
    n = u.size
    if len(grid.shape) > 2 and n > 24 ** 3:
        raise ValidationError("left quantization is limited to 2D grids or at most 24^3 nodes")
    uh = np.fft.fftn(u).ravel() / n
    X = grid.points()
    K = grid.frequencies()
    keep = np.abs(uh) > 0
    uh, K = uh[keep], K[keep]
    out = np.empty(n, complex)
    rows = max(1, chunk // max(K.shape[0], 1))
    for s in range(0, n, rows):
        xs = X[s:s + rows]
        nx = xs.shape[0]
        A = a(np.repeat(xs, K.shape[0], 0), np.tile(K, (nx, 1))).reshape(nx, -1)
        out[s:s + rows] = (A * np.exp(1j * xs @ K.T)) @ uh
    return out.reshape(grid.shape)


def multiplier(a_of_zeta, u, grid: PeriodicGrid):
    """Fourier multiplier path for ``x``-independent symbols."""
    K = grid.frequencies()
    return np.fft.ifftn(np.fft.fftn(u) * a_of_zeta(K).reshape(grid.shape))


def modulated_gaussian(grid: PeriodicGrid, x0, zeta, sigma):
    """``exp(i zeta.(y - x0)) exp(-|y - x0|^2 / (2 sigma^2))`` with periodic distance."""
    Y = grid.points()
    L = np.array(grid.length)
    dy = (Y - np.asarray(x0, float) + 0.5 * L) % L - 0.5 * L
    return (np.exp(1j * dy @ np.asarray(zeta, float) - np.sum(dy * dy, 1) / (2.0 * sigma ** 2))).reshape(grid.shape)


@dataclass
class ResidualReport:
    zmag: np.ndarray
    families: dict
    exponents: dict

    @property
    def worst_exponent(self):
        return max(self.exponents.values())


def parametrix_residual(p: SmkSymbol, q: SmkSymbol, grid: PeriodicGrid, zmags=(4.0, 8.0, 12.0, 16.0), sigma=0.75,
                        x0=None, angle=0.5, apply_N=None) -> ResidualReport:
    """Probe ``R = Q N - Id`` with modulated Gaussians and fit its decay in ``|zeta|``.

    Two probe families: fixed transverse fraction ``|zeta'|/|zeta| = angle``
    and the parabolic scaling ``|zeta'| = |zeta|^{1/2}`` towards ``Sigma``.
    The response is ``||R u|| / ||u||``.
    """
    x0 = np.array(grid.length) / 2.0 if x0 is None else np.asarray(x0, float)
    apply_N = apply_N or (lambda u: quantize(p, u, grid))

    def qfun(x, z):
        # q is a symbol only away from the zero section; drop |zeta| < 1
        big = np.linalg.norm(z, axis=1) >= 1.0
        return np.where(big, q(x, np.where(big[:, None], z, 1.0)), 0.0)

    qreg = SmkSymbol(qfun, q.m, q.k, q.dx, q.d, q.x_dependent)
    nyq = grid.nyquist
    out = {"fixed": [], "parabolic": []}
    zmags = np.asarray(zmags, float)
    for r in zmags:
        for fam, pfrac in (("fixed", angle), ("parabolic", r ** -0.5)):
            z = np.zeros(len(grid.shape))
            z[0] = r * pfrac
            z[-1] = r * np.sqrt(1.0 - pfrac ** 2)
            if np.abs(z).max() + 3.0 / sigma > nyq:
                raise ValidationError(f"probe |zeta|={r:g} too close to the grid Nyquist limit {nyq:.3g}")
            u = modulated_gaussian(grid, x0, z, sigma)
            Ru = quantize(qreg, apply_N(u), grid) - u
            out[fam].append(float(np.linalg.norm(Ru) / np.linalg.norm(u)))
    fams = {k: np.array(v) for k, v in out.items()}
    expo = {k: float(np.polyfit(np.log(zmags), np.log(np.maximum(v, 1e-300)), 1)[0]) for k, v in fams.items()}
    return ResidualReport(zmags, fams, expo)
