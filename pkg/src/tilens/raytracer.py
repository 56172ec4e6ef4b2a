"""Hamiltonian ray tracing, lens data and travel-time reconstructions.

Rays solve ``x' = d_xi G``, ``xi' = -d_x G`` with the batched Dormand-Prince
integrator.  Optionally the 6x6 variational equations ``J' = DV J`` are
carried along, giving flow Jacobians.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConvexityError, TrappedRayError, ValidationError
from .integrator import STATUS_EVENT, STATUS_TMAX, dopri5_batch
from .material_model import Mode, MaterialModel, eval_G, grad_xi_G, hess_xi_G, phase_jet, xi_of_omega

OMEGA = np.block([[np.zeros((3, 3)), np.eye(3)], [-np.eye(3), np.zeros((3, 3))]])


@dataclass(frozen=True)
class Domain:
    """Ball ``{|x - c| < R}`` written as ``b(x) = |x - c|^2 - R^2 < 0``."""

    radius: float = 1.0
    center: tuple = (0.0, 0.0, 0.0)

    @classmethod
    def for_model(cls, m: MaterialModel):
        return cls(m.domain_radius)

    @property
    def diameter(self):
        return 2.0 * self.radius

    def b(self, x):
        d = np.asarray(x, float) - np.asarray(self.center)
        return np.einsum("ni,ni->n", d, d) - self.radius ** 2

    def grad_b(self, x):
        return 2.0 * (np.asarray(x, float) - np.asarray(self.center))

    def normal(self, x):
        g = self.grad_b(x)
        return g / np.linalg.norm(g, axis=1)[:, None]

    def chord(self, x, direction):
        """Entry and exit parameters of the line ``x + s*direction`` (unit direction)."""
        d = np.asarray(x, float) - np.asarray(self.center)
        bq = np.einsum("ni,ni->n", d, direction)
        cq = np.einsum("ni,ni->n", d, d) - self.radius ** 2
        disc = np.sqrt(np.maximum(bq * bq - cq, 0.0))
        return -bq - disc, -bq + disc


def hamiltonian_rhs(m, mode, jacobian=False, sign=1.0):
    """Right-hand side for ``(x, xi[, J])``; ``sign=-1`` runs time backwards."""
    mode = Mode.parse(mode)

    def rhs(y):
        x, xi = y[:, :3], y[:, 3:6]
        j = phase_jet(m, mode, x, xi, 2 if jacobian else 1)
        out = np.empty_like(y)
        out[:, :3] = sign * j.Gxi
        out[:, 3:6] = -sign * j.Gx
        if jacobian:
            n = y.shape[0]
            DV = np.empty((n, 6, 6))
            DV[:, :3, :3] = np.swapaxes(j.Gxxi, 1, 2)
            DV[:, :3, 3:] = j.Gxixi
            DV[:, 3:, :3] = -j.Gxx
            DV[:, 3:, 3:] = -j.Gxxi
            out[:, 6:] = sign * np.matmul(DV, y[:, 6:].reshape(n, 6, 6)).reshape(n, 36)
        return out

    return rhs


def _initial_state(x0, xi0, jacobian):
    x0 = np.atleast_2d(np.asarray(x0, float))
    xi0 = np.atleast_2d(np.asarray(xi0, float))
    if x0.shape[0] != xi0.shape[0]:
        x0 = np.broadcast_to(x0, xi0.shape)
    y0 = np.concatenate([x0, xi0], axis=1)
    if jacobian:
        y0 = np.concatenate([y0, np.tile(np.eye(6).ravel(), (y0.shape[0], 1))], axis=1)
    return y0


def _err_weight(jacobian):
    return None if not jacobian else np.concatenate([np.ones(6), np.full(36, 1.0)])


@dataclass
class FlowResult:
    """States after flowing for prescribed times (rows follow the input)."""

    x: np.ndarray
    xi: np.ndarray
    J: np.ndarray | None
    stop_x: np.ndarray | None = None
    stop_xi: np.ndarray | None = None
    stop_J: np.ndarray | None = None
    stop_ok: np.ndarray | None = None
    samples: list | None = None


def flow(m, mode, x0, xi0, t, tol=1e-10, jacobian=False, stops=None, record=False, h_max=None):
    """Flow ``(x0, xi0)`` for time ``t`` (scalar or per row, any sign).

    Parameters
    ----------
    stops : ndarray, shape (n, k), optional
        Intermediate times (same sign as ``t``, increasing in magnitude) at
        which states are recorded.

    Returns
    -------
    FlowResult
    """
    y0 = _initial_state(x0, xi0, jacobian)
    n = y0.shape[0]
    t = np.broadcast_to(np.asarray(t, float), (n,)).copy()
    out_y = np.empty_like(y0)
    kst = None if stops is None else np.asarray(stops, float).shape[1]
    sy = None if stops is None else np.full((n, kst, y0.shape[1]), np.nan)
    sok = None if stops is None else np.zeros((n, kst), bool)
    samples = [None] * n if record else None
    for sgn in (1.0, -1.0):
        rows = np.nonzero((t >= 0) if sgn > 0 else (t < 0))[0]
        if rows.size == 0:
            continue
        st = None if stops is None else np.abs(np.asarray(stops, float)[rows])
        res = dopri5_batch(hamiltonian_rhs(m, mode, jacobian, sgn), y0[rows], t_end=np.abs(t[rows]), stops=st,
                           rtol=tol, atol=tol, err_weight=_err_weight(jacobian), record=record, h_max=h_max)
        out_y[rows] = res.y
        if stops is not None:
            sy[rows] = res.stop_y
            sok[rows] = res.stop_ok
        if record:
            for k, r in enumerate(rows):
                ts, ys = res.samples[k]
                samples[r] = (sgn * ts, ys)
    J = out_y[:, 6:].reshape(n, 6, 6) if jacobian else None
    fr = FlowResult(out_y[:, :3], out_y[:, 3:6], J, samples=samples)
    if stops is not None:
        fr.stop_x, fr.stop_xi, fr.stop_ok = sy[..., :3], sy[..., 3:6], sok
        fr.stop_J = sy[..., 6:].reshape(n, kst, 6, 6) if jacobian else None
    return fr


def flow_jacobian(m, mode, x0, xi0, t, tol=1e-10):
    """6x6 Jacobian ``d(X, Xi)/d(x, xi)`` of the time-``t`` flow."""
    return flow(m, mode, x0, xi0, t, tol, jacobian=True).J


def symplectic_defect(J):
    """``max |J^T Omega J - Omega|`` per matrix."""
    J = np.asarray(J).reshape(-1, 6, 6)
    return np.abs(np.einsum("nji,jk,nkl->nil", J, OMEGA, J) - OMEGA).max(axis=(1, 2))


def symplectic_inverse(J):
    """Inverse of a symplectic matrix, ``-Omega J^T Omega``."""
    return -np.einsum("ij,nkj,kl->nil", OMEGA, J, OMEGA)


@dataclass
class LensRecord:
    """Entry covectors, exit covectors and travel times for a ray set."""

    entry_x: np.ndarray
    entry_xi: np.ndarray
    exit_x: np.ndarray
    exit_xi: np.ndarray
    tau: np.ndarray
    exit_J: np.ndarray | None = None
    samples: list | None = None

    def __len__(self):
        return self.tau.shape[0]


@dataclass
class RayTrajectory:
    """Sampled single ray with its exit data."""

    mode: Mode
    t: np.ndarray
    X: np.ndarray
    Xi: np.ndarray
    exit_time: float
    exit_point: np.ndarray
    exit_covector: np.ndarray
    J: np.ndarray | None = None


def _time_limit(m, mode, x0, xi0, domain):
    speed = np.linalg.norm(grad_xi_G(m, mode, x0, xi0), axis=1)
    # slack factor 2 for speed variation inside the domain
    return 50.0 * domain.diameter / (0.5 * speed), 0.25 * domain.diameter / speed


def trace_to_exit(m, mode, x0, xi0, domain=None, tol=1e-10, jacobian=False, record=False, backward=False,
                  stops=None):
    """Trace rays until they leave ``domain``.

    Parameters
    ----------
    backward : bool
        Trace the reversed flow (returns the entry point as "exit").
    stops : ndarray, optional
        Times (positive) at which to record states before the exit.

    Returns
    -------
    LensRecord
        With ``exit_J`` when ``jacobian`` is set.  When ``stops`` are given the
        record additionally carries ``stop_y`` and ``stop_ok`` attributes.

    Raises
    ------
    TrappedRayError
        If a ray is still inside after the time limit.
    ConvexityError
        If a ray leaves tangentially or inward.
    """
    mode = Mode.parse(mode)
    domain = domain or Domain.for_model(m)
    y0 = _initial_state(x0, xi0, jacobian)
    n = y0.shape[0]
    sign = -1.0 if backward else 1.0
    tmax, hmax = _time_limit(m, mode, y0[:, :3], y0[:, 3:6], domain)
    # rows sitting on the boundary and moving outward exit immediately
    b0 = domain.b(y0[:, :3])
    v0 = sign * grad_xi_G(m, mode, y0[:, :3], y0[:, 3:6])
    rate0 = np.einsum("ni,ni->n", domain.grad_b(y0[:, :3]), v0)
    at_exit = (b0 >= -1e-12 * domain.radius ** 2) & (rate0 > 0)
    tau = np.zeros(n)
    out = y0.copy()
    stop_y = stop_ok = None
    if stops is not None:
        stops = np.asarray(stops, float)
        stop_y = np.full((n, stops.shape[1], y0.shape[1]), np.nan)
        stop_ok = np.zeros((n, stops.shape[1]), bool)
    rows = np.nonzero(~at_exit)[0]
    samples = [None] * n if record else None
    if rows.size:
        res = dopri5_batch(
            hamiltonian_rhs(m, mode, jacobian, sign), y0[rows],
            event=lambda y: domain.b(y[:, :3]),
            event_rate=lambda y, dy: np.einsum("ni,ni->n", domain.grad_b(y[:, :3]), dy[:, :3]),
            rtol=tol, atol=tol, t_max=tmax[rows], err_weight=_err_weight(jacobian), record=record,
            h_max=hmax[rows], stops=None if stops is None else stops[rows])
        if np.any(res.status == STATUS_TMAX):
            bad = rows[np.nonzero(res.status == STATUS_TMAX)[0][0]]
            raise TrappedRayError(f"ray from x={y0[bad, :3].tolist()} xi={y0[bad, 3:6].tolist()} "
                                  f"did not exit before t_max={tmax[bad]:.3g}")
        tau[rows] = res.t
        out[rows] = res.y
        if stops is not None:
            stop_y[rows] = res.stop_y
            stop_ok[rows] = res.stop_ok
        if record:
            for k, r in enumerate(rows):
                ts, ys = res.samples[k]
                samples[r] = (ts, ys)
        assert np.all(res.status == STATUS_EVENT)
    xe, xie = out[:, :3], out[:, 3:6]
    ve = sign * grad_xi_G(m, mode, xe, xie)
    trans = np.einsum("ni,ni->n", domain.normal(xe), ve)
    if np.any(trans <= 0):
        bad = int(np.argmin(trans))
        raise ConvexityError(f"ray does not cross the boundary transversally at x={xe[bad].tolist()}")
    rec = LensRecord(y0[:, :3].copy(), y0[:, 3:6].copy(), xe.copy(), xie.copy(), tau,
                     out[:, 6:].reshape(n, 6, 6) if jacobian else None, samples)
    if stops is not None:
        rec.stop_y = stop_y
        rec.stop_ok = stop_ok
    return rec


def trajectory(m, mode, x0, xi0, domain=None, tol=1e-10, jacobian=False) -> RayTrajectory:
    """Single-ray convenience wrapper around :func:`trace_to_exit` with samples."""
    rec = trace_to_exit(m, mode, x0, xi0, domain, tol, jacobian, record=True)
    ts, ys = rec.samples[0]
    return RayTrajectory(Mode.parse(mode), ts, ys[:, :3], ys[:, 3:6], float(rec.tau[0]), rec.exit_x[0],
                         rec.exit_xi[0], ys[:, 6:].reshape(-1, 6, 6) if jacobian else None)


def travel_time(m, mode, x, xi, domain=None, tol=1e-10):
    """Time to exit from interior (or boundary) points."""
    return trace_to_exit(m, mode, x, xi, domain, tol).tau


def normalize_covector(m, mode, x, xi, level=0.5):
    """Rescale ``xi`` so that ``G(x, xi) = level``."""
    xi = np.atleast_2d(np.asarray(xi, float))
    g = eval_G(m, mode, x, xi)
    return xi * np.sqrt(level / g)[:, None]


def inward_covectors(m, mode, domain, x_boundary, directions, level=0.5):
    """Covectors at boundary points whose group velocity is along ``directions``."""
    xi = xi_of_omega(m, mode, x_boundary, directions)
    return normalize_covector(m, mode, x_boundary, xi, level)


def no_conjugate_check(m, mode, x, t_grid, omega_grid, tol=1e-9, threshold=1e-3):
    """Rank of ``dX/d(t, omega)`` along rays from ``x``.

    Parameters
    ----------
    x : array_like, shape (3,)
    t_grid : array_like
        Positive sample times.
    omega_grid : ndarray, shape (k, 3)
        Unit group directions.

    Returns
    -------
    dict
        ``min_singular`` (raw), ``min_singular_scaled`` (omega columns divided
        by t), the full scaled table, and ``conjugate`` flagging sign changes
        of the determinant along t or a scaled singular value below
        ``threshold``.
    """
    x = np.asarray(x, float).reshape(1, 3)
    om = np.asarray(omega_grid, float).reshape(-1, 3)
    om = om / np.linalg.norm(om, axis=1)[:, None]
    t_grid = np.sort(np.asarray(t_grid, float))
    xi0 = xi_of_omega(m, mode, np.repeat(x, len(om), 0), om)
    H = hess_xi_G(m, mode, np.repeat(x, len(om), 0), xi0)
    # tangent basis of the sphere at each omega
    ref = np.where(np.abs(om[:, 2:3]) < 0.9, np.array([[0, 0, 1.0]]), np.array([[1.0, 0, 0]]))
    e1 = np.cross(om, ref)
    e1 /= np.linalg.norm(e1, axis=1)[:, None]
    e2 = np.cross(om, e1)
    dxi = np.linalg.solve(H, np.stack([e1, e2], axis=2))  # (k, 3, 2)
    stops = np.tile(t_grid, (len(om), 1))
    fr = flow(m, mode, np.repeat(x, len(om), 0), xi0, t_grid[-1], tol, jacobian=True, stops=stops)
    sing = np.empty((len(om), len(t_grid)))
    scaled = np.empty_like(sing)
    det = np.empty_like(sing)
    for k in range(len(t_grid)):
        J = fr.stop_J[:, k]
        xdot = grad_xi_G(m, mode, fr.stop_x[:, k], fr.stop_xi[:, k])
        dom = np.einsum("nij,njk->nik", J[:, :3, 3:], dxi)
        M = np.concatenate([xdot[:, :, None], dom], axis=2)
        sing[:, k] = np.linalg.svd(M, compute_uv=False)[:, -1]
        Ms = np.concatenate([xdot[:, :, None], dom / t_grid[k]], axis=2)
        scaled[:, k] = np.linalg.svd(Ms, compute_uv=False)[:, -1]
        det[:, k] = np.linalg.det(Ms)
    flips = np.any(np.diff(np.sign(det), axis=1) != 0, axis=1)
    return {
        "min_singular": float(sing.min()),
        "min_singular_scaled": float(scaled.min()),
        "singular_scaled": scaled,
        "conjugate": bool(np.any(flips) or scaled.min() < threshold),
        "conjugate_directions": np.nonzero(flips | (scaled.min(axis=1) < threshold))[0],
    }


# boundary travel times and the lens reconstruction


def sphere_chart(domain, x1, offsets):
    """Boundary points at tangent offsets ``(a, b)`` via the exponential map at ``x1``."""
    x1 = np.asarray(x1, float)
    c = np.asarray(domain.center)
    R = domain.radius
    nrm = (x1 - c) / np.linalg.norm(x1 - c)
    ref = np.array([0, 0, 1.0]) if abs(nrm[2]) < 0.9 else np.array([1.0, 0, 0])
    e1 = np.cross(nrm, ref)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(nrm, e1)
    off = np.atleast_2d(np.asarray(offsets, float))
    rho = np.linalg.norm(off, axis=1)
    ang = rho / R
    tdir = np.where(rho[:, None] > 0, (off[:, :1] * e1 + off[:, 1:2] * e2) / np.where(rho > 0, rho, 1.0)[:, None], 0)
    pts = c + R * (np.cos(ang)[:, None] * nrm + np.sin(ang)[:, None] * tdir)
    return pts, nrm, e1, e2


def shoot(m, mode, domain, x0, targets, tol=1e-12, ode_tol=1e-12, max_iter=30, fd_step=1e-6):
    """Two-point rays from boundary point ``x0`` to boundary ``targets``.

    Newton iteration on the launch direction with finite-difference Jacobians,
    batched over targets.

    Returns
    -------
    LensRecord
        Rays with ``G = 1/2`` that exit at the targets.
    """
    targets = np.atleast_2d(np.asarray(targets, float))
    k = targets.shape[0]
    x0 = np.asarray(x0, float).reshape(1, 3)
    X0 = np.repeat(x0, k, 0)
    om = targets - x0
    om /= np.linalg.norm(om, axis=1)[:, None]

    def launch(dirs):
        return inward_covectors(m, mode, domain, np.repeat(x0, dirs.shape[0], 0), dirs)

    for it in range(max_iter):
        ref = np.where(np.abs(om[:, 2:3]) < 0.9, np.array([[0, 0, 1.0]]), np.array([[1.0, 0, 0]]))
        u1 = np.cross(om, ref)
        u1 /= np.linalg.norm(u1, axis=1)[:, None]
        u2 = np.cross(om, u1)
        trial = np.concatenate([om, om + fd_step * u1, om + fd_step * u2])
        trial /= np.linalg.norm(trial, axis=1)[:, None]
        rec = trace_to_exit(m, mode, np.repeat(x0, 3 * k, 0), launch(trial), domain, ode_tol)
        xe = rec.exit_x
        res = xe[:k] - targets
        err = np.linalg.norm(res, axis=1)
        if np.all(err < tol):
            out = trace_to_exit(m, mode, X0, launch(om), domain, ode_tol)
            return out
        Jm = np.stack([(xe[k:2 * k] - xe[:k]) / fd_step, (xe[2 * k:] - xe[:k]) / fd_step], axis=2)
        d = np.empty((k, 2))
        for i in range(k):
            d[i] = np.linalg.lstsq(Jm[i], -res[i], rcond=None)[0]
        om = om + d[:, :1] * u1 + d[:, 1:] * u2
        om /= np.linalg.norm(om, axis=1)[:, None]
    raise ConvexityError(f"shooting did not converge (max miss {err.max():.3e})")


@dataclass
class TravelTimeTable:
    """Boundary travel times ``tau_{x0}`` on a stencil around ``x1``."""

    x0: np.ndarray
    x1: np.ndarray
    spacing: float
    offsets: np.ndarray
    tau: np.ndarray
    e1: np.ndarray
    e2: np.ndarray
    normal: np.ndarray
    central: LensRecord


def boundary_traveltime_table(m, mode, domain, x0, x1, spacing=1e-3, tol=1e-12):
    """Travel times from ``x0`` to chart points around ``x1`` (4th-order stencil)."""
    st = np.array([-2, -1, 1, 2], float) * spacing
    offsets = np.array([[0.0, 0.0]] + [[s, 0.0] for s in st] + [[0.0, s] for s in st])
    pts, nrm, e1, e2 = sphere_chart(domain, x1, offsets)
    rec = shoot(m, mode, domain, x0, pts, ode_tol=tol)
    central = LensRecord(rec.entry_x[:1], rec.entry_xi[:1], rec.exit_x[:1], rec.exit_xi[:1], rec.tau[:1])
    return TravelTimeTable(np.asarray(x0, float), pts[0], spacing, offsets, rec.tau, e1, e2, nrm, central)


def lens_from_boundary_traveltimes(m, mode, domain, table: TravelTimeTable):
    """Exit covector at ``table.x1`` reconstructed from boundary travel times.

    Steps: tangential part of ``d tau`` by finite differences on the chart,
    normal coefficient from ``G(x1, xi) = 1/2`` (two roots), and the root
    whose group velocity points outward.
    """
    h = table.spacing
    tau = table.tau
    d1 = (tau[1] - 8 * tau[2] + 8 * tau[3] - tau[4]) / (12 * h)
    d2 = (tau[5] - 8 * tau[6] + 8 * tau[7] - tau[8]) / (12 * h)
    xt = d1 * table.e1 + d2 * table.e2
    x1 = table.x1.reshape(1, 3)
    n = table.normal

    def phi(lam):
        xi = xt + lam * n
        jet = phase_jet(m, mode, x1, xi.reshape(1, 3), 1, xi_only=True)
        return jet.G[0] - 0.5, float(jet.Gxi[0] @ n)

    roots = []
    for sgn in (1.0, -1.0):
        lam = sgn
        while phi(lam)[0] < 0:
            lam *= 2.0
        for _ in range(100):
            f, df = phi(lam)
            step = f / df
            lam -= step
            if abs(step) < 1e-15 * max(1.0, abs(lam)):
                break
        roots.append(lam)
    outward = []
    for lam in roots:
        xi = xt + lam * n
        v = grad_xi_G(m, mode, x1, xi.reshape(1, 3))[0]
        outward.append(v @ n > 0)
    if sum(outward) != 1:
        raise ConvexityError("normal roots do not separate into one outward and one inward branch")
    lam = roots[outward.index(True)]
    return xt + lam * n
