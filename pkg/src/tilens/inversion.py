"""Width, Poincare checks and linearized recovery experiments.

Recovery uses the frozen-coefficient linearization of the normal
operators: for a homogeneous background with a constant axis, ``N^nu`` is
the Fourier multiplier ``sigma(zeta) = (2 pi / |zeta|) int chi E^nu`` and the
``Nt^nu`` terms vanish.  Everything runs on a torus padded by a factor 2.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, spatial
from scipy.interpolate import CubicSpline
from scipy.spatial.transform import Rotation

from .errors import NumericalError, ValidationError
from .fields import BumpField, GridField, ScalarField, grid_points
from .material_model import MaterialModel
from .pseudolin import Cutoff, _frame, parse_nu
from .symbols import Relationship, principal_prediction

# width


@dataclass
class SupportWidth:
    points: np.ndarray
    width: float
    direction: np.ndarray
    box_width: float
    rotations: int


def _extent(P, n):
    s = P @ n
    return s.max() - s.min()


def point_width(P, n_rot=200, seed=0, n_starts=6):
    """Width of a point cloud: the smallest extent over rotated boxes.

    Each random rotation (uniform quaternions) contributes its three axes,
    and the convex-hull facet normals are added as candidates.  The best
    ``n_starts`` directions are then refined with Nelder-Mead on the sphere.
    Returns ``(width, direction, best_box_width)``.
    """
    P = np.asarray(P, float)
    if P.shape[0] < 2:
        return 0.0, np.array([0.0, 0.0, 1.0]), 0.0
    normals = np.empty((0, 3))
    if P.shape[0] > 8:
        try:
            hull = spatial.ConvexHull(P)
            P, normals = P[hull.vertices], hull.equations[:, :3]
        except spatial.QhullError:
            pass  # degenerate (planar) clouds keep every point
    R = Rotation.random(n_rot, random_state=seed).as_matrix()
    axes = np.concatenate([np.eye(3)[None], R], 0).transpose(0, 2, 1).reshape(-1, 3)
    s = P @ axes.T
    box = float((s.max(0) - s.min(0)).reshape(-1, 3).min(1).min())
    cand = np.concatenate([axes, normals])
    s = P @ cand.T
    ext = s.max(0) - s.min(0)

    def f(ang):
        th, ph = ang
        return _extent(P, np.array([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)]))

    best_w, best_n = float(ext.min()), cand[np.argmin(ext)]
    for n0 in cand[np.argsort(ext)[:n_starts]]:
        th0 = np.arccos(np.clip(n0[2], -1, 1))
        ph0 = np.arctan2(n0[1], n0[0])
        res = optimize.minimize(f, [th0, ph0], method="Nelder-Mead", options={"xatol": 1e-7, "fatol": 1e-10})
        if res.fun < best_w:
            th, ph = res.x
            best_w, best_n = float(res.fun), np.array([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)])
    return best_w, best_n, box


def support_points(u: GridField, threshold=None):
    data = np.abs(u.data)
    thr = 1e-8 * data.max() if threshold is None else threshold
    mask = data.ravel() > thr
    return u.points()[mask]


def boundary_points(u: GridField, fn, threshold=None, steps=30):
    """Support boundary located to sub-grid accuracy by bisection on ``fn``.

    Every grid edge joining a node inside ``{|u| > threshold}`` to one outside
    is bisected using the continuous field ``fn(points)``.
    """
    data = np.abs(u.data)
    thr = 1e-8 * data.max() if threshold is None else threshold
    inside = data > thr
    pts = u.points().reshape(data.shape + (3,))
    lo, hi = [], []
    for ax in range(3):
        a = [slice(None)] * 3
        b = [slice(None)] * 3
        a[ax], b[ax] = slice(0, -1), slice(1, None)
        ia, ib = inside[tuple(a)], inside[tuple(b)]
        pa, pb = pts[tuple(a)], pts[tuple(b)]
        for sel, p_in, p_out in ((ia & ~ib, pa, pb), (ib & ~ia, pb, pa)):
            lo.append(p_in[sel])
            hi.append(p_out[sel])
    if not lo:
        return support_points(u, threshold)
    p_in, p_out = np.concatenate(lo), np.concatenate(hi)
    for _ in range(steps):
        mid = 0.5 * (p_in + p_out)
        ok = np.abs(np.asarray(fn(mid))) > thr
        p_in = np.where(ok[:, None], mid, p_in)
        p_out = np.where(ok[:, None], p_out, mid)
    return np.concatenate([support_points(u, threshold), 0.5 * (p_in + p_out)])


def width(u: GridField, threshold=None, n_rot=200, seed=0, fn=None) -> SupportWidth:
    """Width of the support ``{|u| > threshold}`` of a grid field.

    With ``fn`` (the continuous field behind the samples) the support boundary
    is refined below the grid spacing; otherwise the grid nodes are used.
    """
    P = support_points(u, threshold) if fn is None else boundary_points(u, fn, threshold)
    w, n, box = point_width(P, n_rot, seed)
    return SupportWidth(P, w, n, box, n_rot)


# spectral norms on the padded torus


@dataclass
class Torus:
    """Padded periodic embedding of an ``n^3`` grid with spacing ``h``."""

    n: int
    h: float
    pad: int = 2

    @property
    def N(self):
        return self.pad * self.n

    def embed(self, a):
        a = np.asarray(a)
        out = np.zeros(a.shape[:-3] + (self.N,) * 3, dtype=a.dtype)
        out[..., :self.n, :self.n, :self.n] = a
        return out

    def restrict(self, a):
        return a[..., :self.n, :self.n, :self.n]

    def freqs(self):
        k = 2.0 * np.pi * np.fft.fftfreq(self.N, d=self.h)
        kr = 2.0 * np.pi * np.fft.rfftfreq(self.N, d=self.h)
        return np.meshgrid(k, k, kr, indexing="ij")

    def zeta(self):
        return np.stack(self.freqs(), -1)

    def parseval(self, uh_r):
        """``sum |u|^2 h^3`` from a real FFT (``rfftn``) with weights for the half spectrum."""
        w = np.full(uh_r.shape[-1], 2.0)
        w[0] = 1.0
        if self.N % 2 == 0:
            w[-1] = 1.0
        return float(np.sum(w * np.abs(uh_r) ** 2) * self.h ** 3 / self.N ** 3)


def sobolev_norm(u, torus: Torus, s=0.0, gradient=False):
    """Spectral ``H^s`` norm (or ``||grad u||_{H^s}``) of a field on the inner grid."""
    u = np.asarray(u, float)
    uh = np.fft.rfftn(torus.embed(u), axes=(-3, -2, -1))
    K = torus.freqs()
    k2 = K[0] ** 2 + K[1] ** 2 + K[2] ** 2
    wt = (1.0 + k2) ** s * (k2 if gradient else 1.0)
    extra = u.ndim - 3
    if extra:
        uh = uh.reshape(-1, *uh.shape[-3:])
        return float(np.sqrt(sum(torus.parseval(np.sqrt(wt) * c) for c in uh)))
    return float(np.sqrt(torus.parseval(np.sqrt(wt) * uh)))


@dataclass
class PoincareResult:
    l2: float
    grad: float
    h_half: float
    width: float
    ratio_l2: float
    ratio_h_half: float
    h1: float
    slack: float

    @property
    def passed(self):
        return self.ratio_l2 <= 1.0 + self.slack and self.ratio_h_half <= 1.0 + self.slack

    @property
    def cauchy_schwarz(self):
        """``||u||_{H^1/2}^2 <= ||u||_{L^2} ||u||_{H^1}``."""
        return self.h_half ** 2 <= self.l2 * self.h1 * (1 + 1e-12)


def poincare_check(u: GridField, w=None, threshold=None, n_rot=200, pad=2) -> PoincareResult:
    """Both quantitative Poincare ratios for a compactly supported grid field.

    ``ratio_l2 = ||u|| / (w/sqrt2 ||grad u||)`` and
    ``ratio_h_half = ||u||_{H^1/2} / ((w^2/2 + w/sqrt2)^{1/2} ||grad u||)``,
    with spectral derivatives on the padded torus.  ``slack`` is ``3h/w``.
    """
    h = float(u.spacing[0])
    if not np.allclose(u.spacing, h) or len(set(u.data.shape)) != 1:
        raise ValidationError("poincare_check needs a cubic grid with equal spacing")
    w = width(u, threshold, n_rot).width if w is None else w
    tor = Torus(u.data.shape[0], h, pad)
    l2 = sobolev_norm(u.data, tor)
    g = sobolev_norm(u.data, tor, gradient=True)
    hh = sobolev_norm(u.data, tor, 0.5)
    h1 = l2 + g
    if g == 0.0 or w == 0.0:
        raise ValidationError("degenerate field: zero gradient or zero width")
    return PoincareResult(l2, g, hh, w, l2 / (w / np.sqrt(2.0) * g), hh / (np.sqrt(w * w / 2 + w / np.sqrt(2.0)) * g),
                          h1, 3.0 * h / w)


def random_bump(rng, box_half=0.5, wmin=0.12, wmax=0.4):
    """A random ellipsoidal bump inside the box with full axes in ``[wmin, wmax]``."""
    axes = rng.uniform(wmin, wmax, 3) / 2.0
    R = Rotation.random(random_state=rng).as_matrix()
    c = rng.uniform(-1, 1, 3) * (box_half - axes.max())
    return BumpField(c, rng.choice([-1.0, 1.0]) * rng.uniform(0.5, 2.0), matrix=np.diag(1.0 / axes) @ R.T)


# frozen-coefficient symbol tables


class SymbolTable:
    """Degree-zero profile ``A(psi)`` with ``sigma_-1(zeta) = A(psi) / |zeta|``.

    ``psi`` is the angle between ``zeta`` and the axis; by axial symmetry of
    a homogeneous model this captures the full symbol.  A clamped cubic
    spline in ``psi`` over Chebyshev-clustered nodes.
    """

    def __init__(self, m: MaterialModel, mode, nu, x0, axis, cutoff=Cutoff(), n_psi=97, n_circle=256):
        self.axis = np.asarray(axis, float) / np.linalg.norm(axis)
        e1 = _frame(self.axis[None])[0][0]
        psi = 0.25 * np.pi * (1.0 - np.cos(np.linspace(0.0, np.pi, n_psi)))
        vals = np.empty(n_psi)
        for i, p in enumerate(psi):
            z = np.cos(p) * self.axis + np.sin(p) * e1
            vals[i] = principal_prediction(m, None, mode, nu, x0, z, cutoff, n_circle).meta["a_minus1"]
        self.psi, self.values = psi, vals
        self.spline = CubicSpline(psi, vals, bc_type=((1, 0.0), (1, 0.0)))

    def profile(self, zeta):
        z = np.asarray(zeta, float)
        r = np.linalg.norm(z, axis=-1)
        c = np.abs(z @ self.axis) / np.where(r > 0, r, 1.0)
        return self.spline(np.arccos(np.clip(c, 0.0, 1.0)))

    def __call__(self, zeta):
        z = np.asarray(zeta, float)
        r = np.linalg.norm(z, axis=-1)
        return np.where(r > 0, self.profile(z) / np.where(r > 0, r, 1.0), 0.0)


# scenarios

ILL_POSED = {frozenset(("a11", "a33"))}


@dataclass
class Scenario:
    """``one:<nu>:<mode>``, ``two:<nu1>,<nu2>`` or ``func:<relation>``."""

    kind: str
    unknowns: tuple
    modes: tuple
    relationship: Relationship | None = None
    text: str = ""

    @classmethod
    def parse(cls, text):
        parts = text.split(":", 1)
        kind = parts[0].strip().lower()
        if kind == "one":
            try:
                nu, mode = parts[1].split(":")
            except (IndexError, ValueError):
                raise ValidationError("one-parameter scenario reads 'one:<nu>:<mode>'") from None
            from .material_model import Mode
            Mode.parse(mode)
            return cls("one", (parse_nu(nu),), (mode.strip().lower(),), None, text)
        if kind == "two":
            nus = tuple(parse_nu(v) for v in parts[1].split(","))
            if len(nus) != 2 or nus[0] == nus[1]:
                raise ValidationError("two-parameter scenario needs two distinct parameters")
            return cls("two", nus, ("qp", "qsv"), None, text)
        if kind == "func":
            rel = Relationship.parse(parts[1])
            from .symbols import _REL_TARGETS
            return cls("func", _REL_TARGETS[rel.target], ("qp", "qsv"), rel, text)
        raise ValidationError(f"unknown scenario kind '{kind}'")

    @property
    def ill_posed(self):
        return self.kind == "two" and frozenset(self.unknowns) in ILL_POSED


@dataclass
class RecoveryProblem:
    """Linearized recovery on an ``n^3`` grid over ``[-half, half]^3``.

    The background is frozen at ``x0`` (parameters and axis).
    """

    scenario: Scenario
    model: MaterialModel
    n: int = 32
    half: float = 0.5
    eps: float = 0.15
    x0: tuple = (0.0, 0.0, 0.0)
    lam: float | None = None
    mask: np.ndarray | None = None
    tables: dict = field(default_factory=dict)
    ftilde: dict = field(default_factory=dict)

    def __post_init__(self):
        if isinstance(self.scenario, str):
            self.scenario = Scenario.parse(self.scenario)
        self.h = 2.0 * self.half / (self.n - 1)
        self.torus = Torus(self.n, self.h)
        x0 = np.asarray(self.x0, float)[None]
        axis = self.model.axis.jet(x0, 0)[0][0]
        self.axis = axis
        cutoff = Cutoff(self.eps)
        sc = self.scenario
        needed = set(sc.unknowns)
        if sc.relationship is not None:
            needed.add(sc.relationship.target)
            self.ftilde = sc.relationship.ftilde(self.model, None, x0)
        for mode in sc.modes:
            for nu in needed:
                if (mode, nu) not in self.tables:
                    self.tables[(mode, nu)] = SymbolTable(self.model, mode, nu, x0, axis, cutoff)
        Z = self.torus.zeta()
        self._zeta = Z
        self._coef = np.empty((len(sc.modes), len(sc.unknowns)) + Z.shape[:-1])
        for i, mode in enumerate(sc.modes):
            for j, nu in enumerate(sc.unknowns):
                c = self.tables[(mode, nu)](Z)
                if sc.relationship is not None:
                    c = c + self.ftilde[nu] * self.tables[(mode, sc.relationship.target)](Z)
                self._coef[i, j] = c
        if self.mask is None:
            self.mask = np.ones((self.n,) * 3, bool)

    @property
    def grid_origin(self):
        return np.full(3, -self.half)

    def points(self):
        return grid_points(self.grid_origin, np.full(3, self.h), (self.n,) * 3)

    def sample(self, f: ScalarField):
        return f(self.points()).reshape((self.n,) * 3)

    def symbol_matrix(self):
        """Per-frequency ``(modes x unknowns)`` scalar symbols on the torus."""
        return self._coef

    # operator and adjoint; data are 3-vector fields per mode on the padded torus

    def forward(self, r):
        """``f_mode = sum_nu N^nu_mode [grad r_nu]`` on the padded torus."""
        r = np.asarray(r, float).reshape(len(self.scenario.unknowns), *(self.n,) * 3)
        rh = np.fft.rfftn(self.torus.embed(r), axes=(-3, -2, -1))
        s = np.einsum("mu...,u...->m...", self._coef, rh)
        out = np.empty((len(self.scenario.modes), 3) + (self.torus.N,) * 3)
        for c in range(3):
            out[:, c] = np.fft.irfftn(1j * self._zeta[..., c] * s, s=(self.torus.N,) * 3, axes=(-3, -2, -1))
        return out

    def adjoint(self, f):
        fh = np.fft.rfftn(f, axes=(-3, -2, -1))
        div = sum(-1j * self._zeta[..., c] * fh[:, c] for c in range(3))
        s = np.einsum("mu...,m...->u...", self._coef, div)
        return self.torus.restrict(np.fft.irfftn(s, s=(self.torus.N,) * 3, axes=(-3, -2, -1)))

    def _gram(self, r):
        """``(A^T A + lam grad^T grad)`` applied to an unknown-grid field."""
        rh = np.fft.rfftn(self.torus.embed(r), axes=(-3, -2, -1))
        k2 = np.sum(self._zeta ** 2, -1)
        s = np.einsum("mu...,u...->m...", self._coef, rh)
        back = np.einsum("mu...,m...->u...", self._coef, s) * k2
        # gradient penalty in grid units (h * grad) so the default lambda is box-size free
        back = back + (self.lam or 0.0) * self.h ** 2 * k2 * rh
        return self.torus.restrict(np.fft.irfftn(back, s=(self.torus.N,) * 3, axes=(-3, -2, -1)))

    def operator_norm_sq(self, iters=30, seed=0):
        """Power-iteration estimate of ``||A||^2`` on masked fields."""
        rng = np.random.default_rng(seed)
        v = rng.normal(size=(len(self.scenario.unknowns),) + (self.n,) * 3) * self.mask
        lam0, self.lam = self.lam, 0.0
        est = 0.0
        for _ in range(iters):
            v /= np.linalg.norm(v)
            w = self._gram(v) * self.mask
            est = float(np.vdot(v, w).real)
            v = w
        self.lam = lam0
        return est

    def default_lambda(self):
        return 1e-6 * self.operator_norm_sq()


@dataclass
class Recovery:
    r: np.ndarray
    iterations: int
    residual: float
    data_misfit: float
    converged: bool
    lam: float
    history: list


def conjugate_gradient(apply, b, x0, tol=1e-10, maxiter=2000):
    """Plain CG for a symmetric positive definite operator; fixed reduction order."""
    x = x0.copy()
    r = b - apply(x)
    p = r.copy()
    rr = float(np.sum(r * r))
    bn = max(float(np.sqrt(np.sum(b * b))), float(np.sqrt(rr)), 1e-300)
    hist = [np.sqrt(rr) / bn]
    it = 0
    while it < maxiter and np.sqrt(rr) > tol * bn:
        Ap = apply(p)
        pAp = float(np.sum(p * Ap))
        if pAp <= 0:
            raise NumericalError("CG breakdown: operator not positive definite on the search space")
        a = rr / pAp
        x += a * p
        r -= a * Ap
        rr_new = float(np.sum(r * r))
        p = r + (rr_new / rr) * p
        rr = rr_new
        it += 1
        hist.append(np.sqrt(rr) / bn)
    return x, it, float(np.sqrt(rr) / bn), hist


def recover(problem: RecoveryProblem, f, x_init=None, tol=1e-10, maxiter=2000) -> Recovery:
    """Minimize ``||A r - f||^2 + lam ||h grad r||^2`` over masked fields by CG."""
    if problem.lam is None:
        problem.lam = problem.default_lambda()
    nu = len(problem.scenario.unknowns)
    M = np.broadcast_to(problem.mask, (nu,) + problem.mask.shape)
    b = problem.adjoint(f) * M
    x0 = np.zeros_like(b) if x_init is None else np.asarray(x_init, float) * M
    x, it, res, hist = conjugate_gradient(lambda v: problem._gram(v) * M, b, x0, tol, maxiter)
    fn = np.linalg.norm(f)
    mis = float(np.linalg.norm(problem.forward(x) - f) / fn) if fn > 0 else float(np.linalg.norm(problem.forward(x)))
    return Recovery(x, it, res, mis, res <= tol, problem.lam, hist)


def relative_error(r_hat, r_true):
    return float(np.linalg.norm(r_hat - r_true) / np.linalg.norm(r_true))


def support_mask(problem: RecoveryProblem, fields, dilate=1):
    """Mask of the union of supports, dilated by ``dilate`` grid cells."""
    from scipy import ndimage
    m = np.zeros((problem.n,) * 3, bool)
    for f in fields:
        m |= np.abs(f) > 0
    if dilate:
        m = ndimage.binary_dilation(m, iterations=dilate)
    return m


# ill-posed pair


@dataclass
class NearNull:
    direction: np.ndarray
    exponent: float
    exponent_reference: float | None
    u: np.ndarray
    smin: np.ndarray


def near_null_direction(problem: RecoveryProblem, zmag=None, u=None, reference: "RecoveryProblem | None" = None):
    """Smallest singular direction of the per-frequency symbol matrix near ``Sigma``.

    Scans ``zeta = |zeta| (sqrt(1-u^2) xibar + u e1)`` and fits the power of
    ``u`` in the smallest singular value; ``reference`` gives the same fit
    for a recoverable pair for comparison.
    """
    zmag = zmag or 0.5 * np.pi / problem.h
    u = np.geomspace(0.02, 0.2, 9) if u is None else np.asarray(u, float)
    e1 = _frame(problem.axis[None])[0][0]
    Z = zmag * (np.sqrt(1 - u * u)[:, None] * problem.axis + u[:, None] * e1)

    def scan(p):
        sc = p.scenario
        smin, dirs = [], []
        for z in Z:
            A = np.array([[p.tables[(mo, nu)](z[None])[0] + (p.ftilde.get(nu, 0.0) * p.tables[(mo, sc.relationship.target)](z[None])[0]
                                                             if sc.relationship else 0.0)
                           for nu in sc.unknowns] for mo in sc.modes])
            U, S, Vt = np.linalg.svd(A * zmag)
            smin.append(S[-1])
            dirs.append(Vt[-1] * np.sign(Vt[-1][np.argmax(np.abs(Vt[-1]))]))
        smin = np.array(smin)
        return np.array(dirs), smin, float(np.polyfit(np.log(u), np.log(smin), 1)[0])

    dirs, smin, ex = scan(problem)
    ref = scan(reference)[2] if reference is not None else None
    return NearNull(dirs[0], ex, ref, u, smin)


# stability


@dataclass
class StabilityRow:
    width: float
    grad: float
    data_h2: float
    h_half: float
    c_full: float
    c_absorbed: float


def stability_report(problem: RecoveryProblem, fields) -> list:
    """Empirical constants ``||grad u|| / (||A u||_{H^2} + ||u||_{H^1/2})`` and ``||grad u|| / ||A u||_{H^2}``."""
    rows = []
    tor = problem.torus
    for u in fields:
        u = np.asarray(u, float)
        if not np.any(u):
            continue
        g = sobolev_norm(u, tor, gradient=True)
        Au = problem.forward(u[None] if u.ndim == 3 else u)
        fh = np.fft.rfftn(Au, axes=(-3, -2, -1))
        K = tor.freqs()
        wt = (1.0 + K[0] ** 2 + K[1] ** 2 + K[2] ** 2) ** 2
        data = np.sqrt(sum(tor.parseval(np.sqrt(wt) * c) for c in fh.reshape(-1, *fh.shape[-3:])))
        hh = sobolev_norm(u, tor, 0.5)
        pts = problem.points()[np.abs(u if u.ndim == 3 else u.sum(0)).ravel() > 0]
        w = point_width(pts, 60)[0]
        rows.append(StabilityRow(w, g, data, hh, g / (data + hh), g / data))
    return rows


def calibrate_width_threshold(problem_factory, widths, n_trials=2, iters=400, target=1e-6, seed=0):
    """Largest mask width for which zero-data solves decay below ``target``.

    ``problem_factory(w)`` returns a problem whose mask has width ``w``.
    Returns ``(threshold, table)`` with ``table`` rows ``(w, worst ratio)``.
    """
    rng = np.random.default_rng(seed)
    table = []
    thr = 0.0
    for w in sorted(widths):
        p = problem_factory(w)
        nu = len(p.scenario.unknowns)
        worst = 0.0
        for _ in range(n_trials):
            r0 = rng.normal(size=(nu,) + (p.n,) * 3) * p.mask
            rec = recover(p, np.zeros((len(p.scenario.modes), 3) + (p.torus.N,) * 3), r0, tol=1e-300, maxiter=iters)
            worst = max(worst, float(np.linalg.norm(rec.r) / np.linalg.norm(r0)))
        table.append((w, worst))
        if worst < target:
            thr = w
    return thr, table
