"""Batched adaptive Dormand-Prince 5(4) integration with events and stops.

Every ray (row of the state array) carries its own time and step size, so a
whole bundle advances in lock-step with per-row accept/reject decisions.
The Butcher tableau and the continuous extension are taken from
:class:`scipy.integrate.RK45`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import RK45

from .errors import IntegrationError

_A = RK45.A
_B = RK45.B
_C = RK45.C
_E = RK45.E
_P = RK45.P
_NS = RK45.n_stages  # 6, plus the FSAL stage

STATUS_RUNNING = 0
STATUS_TEND = 1
STATUS_EVENT = 2
STATUS_STOPS = 3
STATUS_TMAX = -1
STATUS_FAIL = -2


@dataclass
class BatchResult:
    """Outcome of :func:`dopri5_batch`.

    Attributes
    ----------
    t, y : ndarray
        Final time ``(n,)`` and state ``(n, d)`` of every row.
    status : ndarray of int
        One of the ``STATUS_*`` codes.
    stop_y : ndarray, shape (n, m, d) or None
        States at the requested stop times.
    stop_ok : ndarray of bool, shape (n, m) or None
        Whether each stop was reached before termination.
    samples : list of (t, y) per row, or None
        Accepted step end points when ``record`` is set.
    n_steps : int
        Number of lock-step iterations.
    """

    t: np.ndarray
    y: np.ndarray
    status: np.ndarray
    stop_y: np.ndarray | None
    stop_ok: np.ndarray | None
    samples: list | None
    n_steps: int


def _stages(rhs, y, f0, h):
    n, d = y.shape
    K = np.empty((_NS + 1, n, d))
    K[0] = f0
    for s in range(1, _NS):
        dy = np.tensordot(_A[s, :s], K[:s], axes=(0, 0)) * h[:, None]
        K[s] = rhs(y + dy)
    y_new = y + h[:, None] * np.tensordot(_B, K[:_NS], axes=(0, 0))
    K[_NS] = rhs(y_new)
    err = h[:, None] * np.tensordot(_E, K, axes=(0, 0))
    return y_new, K, err


def _single_step(rhs, y, h):
    return _stages(rhs, y, rhs(y), h)[0]


def _dense(y_old, K, h, theta):
    # y(t_old + theta*h) from the continuous extension
    p = np.stack([theta ** (i + 1) for i in range(_P.shape[1])], axis=1)  # (n, 4)
    Q = np.einsum("snd,sk->ndk", K, _P)
    return y_old + h[:, None] * np.einsum("ndk,nk->nd", Q, p)


def dopri5_batch(rhs, y0, *, t_end=None, stops=None, event=None, event_rate=None,
                 rtol=1e-10, atol=1e-10, h0=None, t_max=None, max_steps=200000,
                 record=False, err_weight=None, event_tol=1e-13, h_max=None):
    """Integrate ``y' = rhs(y)`` forward in time for a batch of rows.

    Parameters
    ----------
    rhs : callable
        ``rhs(y) -> dy`` for ``y`` of shape ``(k, d)`` (autonomous system).
    y0 : ndarray, shape (n, d)
    t_end : float or ndarray, optional
        Final time per row.
    stops : ndarray, shape (n, m), optional
        Increasing times at which the state is recorded exactly (padded with
        ``inf``).
    event : callable, optional
        ``event(y) -> g``; a row terminates when ``g`` crosses from negative to
        non-negative.  The crossing is located on the continuous extension and
        polished by Newton steps using ``event_rate(y, dy)``.
    rtol, atol : float
        Local error tolerances.
    t_max : float or ndarray, optional
        Rows still running past ``t_max`` get ``STATUS_TMAX``.
    err_weight : ndarray, shape (d,), optional
        Per-component weights in the error norm.
    h_max : float or ndarray, optional
        Largest step per row.

    Returns
    -------
    BatchResult
    """
    y = np.array(y0, dtype=float, copy=True)
    n, d = y.shape
    t = np.zeros(n)
    tend = np.full(n, np.inf) if t_end is None else np.broadcast_to(np.asarray(t_end, float), (n,)).copy()
    tmax = np.full(n, np.inf) if t_max is None else np.broadcast_to(np.asarray(t_max, float), (n,)).copy()
    if stops is not None:
        stops = np.asarray(stops, dtype=float)
        m = stops.shape[1]
        stop_y = np.full((n, m, d), np.nan)
        stop_ok = np.zeros((n, m), dtype=bool)
        kstop = np.zeros(n, dtype=np.int64)
        # stops at t = 0
        at0 = stops[:, 0] == 0.0 if m else np.zeros(n, bool)
        stop_y[at0, 0] = y[at0]
        stop_ok[at0, 0] = True
        kstop[at0] = 1
    else:
        m = 0
        stop_y = stop_ok = None
        kstop = np.zeros(n, dtype=np.int64)
    status = np.zeros(n, dtype=np.int64)
    if t_end is None and stops is None and event is None:
        raise ValueError("need t_end, stops or event")
    status[tend <= 0.0] = STATUS_TEND
    f = rhs(y)
    armed = np.ones(n, dtype=bool)
    if event is not None:
        g_old = event(y)
        # rows starting on the boundary arm once they are strictly inside
        armed = g_old < 0.0
    w = np.ones(d) if err_weight is None else np.asarray(err_weight, float)
    if h0 is None:
        scale = atol + rtol * np.abs(y)
        d0 = np.sqrt(np.mean((y / scale) ** 2, axis=1))
        d1 = np.sqrt(np.mean((f / scale) ** 2, axis=1))
        h = np.where((d0 < 1e-5) | (d1 < 1e-5), 1e-6, 0.01 * d0 / np.maximum(d1, 1e-300))
        h = np.minimum(h, 0.1)
    else:
        h = np.broadcast_to(np.asarray(h0, float), (n,)).copy()
    hmax = np.full(n, np.inf) if h_max is None else np.broadcast_to(np.asarray(h_max, float), (n,)).copy()
    h = np.minimum(h, hmax)
    samples = [[(0.0, y[i].copy())] for i in range(n)] if record else None
    it = 0
    while True:
        active = status == STATUS_RUNNING
        if m:
            exhausted = (kstop >= m) & np.isinf(tend) & (event is None)
            status[active & exhausted] = STATUS_STOPS
            active = status == STATUS_RUNNING
        if not np.any(active):
            break
        it += 1
        if it > max_steps:
            status[active] = STATUS_FAIL
            break
        idx = np.nonzero(active)[0]
        ti, yi, fi, hi = t[idx], y[idx], f[idx], h[idx]
        target = tend[idx].copy()
        if m:
            ks = np.minimum(kstop[idx], m - 1)
            nxt = np.where(kstop[idx] < m, stops[idx, ks], np.inf)
            target = np.minimum(target, nxt)
        remaining = target - ti
        clamp = hi >= remaining
        hu = np.where(clamp, remaining, hi)
        tiny = (hu <= 1e-14 * np.maximum(1.0, np.abs(ti))) & ~clamp
        if np.any(tiny):
            status[idx[tiny]] = STATUS_FAIL
            keep = ~tiny
            idx, ti, yi, fi, hi, hu, clamp = (v[keep] for v in (idx, ti, yi, fi, hi, hu, clamp))
            if idx.size == 0:
                continue
        y_new, K, err = _stages(rhs, yi, fi, hu)
        sc = atol + rtol * np.maximum(np.abs(yi), np.abs(y_new))
        en = np.sqrt(np.mean((w * err / sc) ** 2, axis=1))
        en = np.where(np.isfinite(en), en, np.inf)
        acc = en <= 1.0
        fac = np.where(en == 0.0, 10.0, 0.9 * np.maximum(en, 1e-300) ** -0.2)
        fac = np.where(acc, np.clip(fac, 0.2, 10.0), np.clip(fac, 0.1, 0.9))
        # keep the unclamped proposal after a stop-limited step
        h[idx] = np.minimum(np.where(acc & clamp, np.maximum(hi, hu * fac), hu * fac), hmax[idx])
        if not np.any(acc):
            continue
        a = np.nonzero(acc)[0]
        ia = idx[a]
        t_new = ti[a] + hu[a]
        yn = y_new[a]
        fn = K[_NS][a]
        if event is not None:
            g_new = event(yn)
            cross = armed[ia] & (g_new >= 0.0)
            if np.any(cross):
                c = np.nonzero(cross)[0]
                yo, Kc, hc = yi[a][c], K[:, a][:, c], hu[a][c]
                lo = np.zeros(c.size)
                hi_ = np.ones(c.size)
                for _ in range(60):
                    mid = 0.5 * (lo + hi_)
                    gm = event(_dense(yo, Kc, hc, mid))
                    pos = gm >= 0.0
                    hi_ = np.where(pos, mid, hi_)
                    lo = np.where(pos, lo, mid)
                hs = hi_ * hc
                ys = _single_step(rhs, yo, hs)
                for _ in range(6):
                    gs = event(ys)
                    if np.all(np.abs(gs) < event_tol):
                        break
                    rate = event_rate(ys, rhs(ys)) if event_rate is not None else None
                    if rate is None:
                        break
                    hs = hs - gs / rate
                    ys = _single_step(rhs, yo, hs)
                t_new[c] = ti[a][c] + hs
                yn[c] = ys
                fn[c] = rhs(ys)
                status[ia[c]] = STATUS_EVENT
            armed[ia] |= g_new < 0.0
        t[ia] = t_new
        y[ia] = yn
        f[ia] = fn
        if m:
            hit = clamp[a] & (kstop[ia] < m) & (status[ia] == STATUS_RUNNING)
            if np.any(hit):
                rows = ia[hit]
                stop_y[rows, kstop[rows]] = yn[hit]
                stop_ok[rows, kstop[rows]] = True
                kstop[rows] += 1
        done_t = (t_new >= tend[ia]) & (status[ia] == STATUS_RUNNING)
        status[ia[done_t]] = STATUS_TEND
        over = (t_new > tmax[ia]) & (status[ia] == STATUS_RUNNING)
        status[ia[over]] = STATUS_TMAX
        if record:
            for r, tt, yy in zip(ia, t_new, yn):
                samples[r].append((tt, yy.copy()))
    if record:
        samples = [(np.array([s[0] for s in smp]), np.array([s[1] for s in smp])) for smp in samples]
    if np.any(status == STATUS_FAIL):
        raise IntegrationError(f"step-size underflow or step budget exhausted for rows "
                               f"{np.nonzero(status == STATUS_FAIL)[0][:10].tolist()}")
    return BatchResult(t, y, status, stop_y, stop_ok, samples, it)
