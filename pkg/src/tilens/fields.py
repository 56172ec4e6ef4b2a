"""Scalar fields on R^3 with derivative jets, and the axis-of-isotropy field.

Every field exposes ``jet(x, order)`` returning a :class:`Jet` with the value,
gradient, Hessian and (for analytic fields) third derivatives at the points
``x`` of shape ``(n, 3)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations_with_replacement

import numpy as np
import sympy as sp
from scipy import ndimage
from sympy.parsing.sympy_parser import parse_expr, standard_transformations

from . import _backend
from .errors import ValidationError
from .gridio import read_tigrid


@dataclass
class Jet:
    """Derivative jet of a scalar field at ``n`` points."""

    v: np.ndarray
    g: np.ndarray | None = None
    H: np.ndarray | None = None
    T3: np.ndarray | None = None


def _as_points(x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[-1] != 3:
        raise ValidationError("points must have shape (n, 3)")
    return x


class ScalarField:
    """Base class; subclasses implement :meth:`jet`."""

    is_constant = False

    def jet(self, x, order=2) -> Jet:
        raise NotImplementedError

    def __call__(self, x):
        return self.jet(x, 0).v

    def __add__(self, other):
        return SumField(self, other)

    def describe(self):
        return type(self).__name__


class ConstantField(ScalarField):
    """Spatially constant field."""

    is_constant = True

    def __init__(self, value):
        self.value = float(value)

    def jet(self, x, order=2):
        x = _as_points(x)
        n = x.shape[0]
        return Jet(
            np.full(n, self.value),
            np.zeros((n, 3)) if order >= 1 else None,
            np.zeros((n, 3, 3)) if order >= 2 else None,
            np.zeros((n, 3, 3, 3)) if order >= 3 else None,
        )

    def describe(self):
        return {"constant": self.value}


_X, _Y, _Z = sp.symbols("x y z", real=True)
_ALLOWED = {
    "x": _X, "y": _Y, "z": _Z,
    "exp": sp.exp, "log": sp.log, "sqrt": sp.sqrt,
    "sin": sp.sin, "cos": sp.cos, "tan": sp.tan, "tanh": sp.tanh,
    "atan": sp.atan, "pi": sp.pi, "abs": sp.Abs, "Abs": sp.Abs,
    "Piecewise": sp.Piecewise, "Max": sp.Max, "Min": sp.Min,
}


def parse_expression(text: str) -> sp.Expr:
    """Parse a small arithmetic expression in ``x, y, z``."""
    try:
        expr = parse_expr(str(text), local_dict=dict(_ALLOWED), global_dict={"__builtins__": {}, **_sympy_globals()},
                          transformations=standard_transformations, evaluate=True)
    except Exception as exc:  # sympy raises many types
        raise ValidationError(f"cannot parse expression {text!r}: {exc}") from exc
    if not isinstance(expr, sp.Expr):
        raise ValidationError(f"expression {text!r} is not scalar")
    extra = expr.free_symbols - {_X, _Y, _Z}
    if extra:
        raise ValidationError(f"expression {text!r} uses unknown names {sorted(map(str, extra))}")
    return expr


def _sympy_globals():
    # parse_expr needs the sympy constructors it emits for literals
    return {"Integer": sp.Integer, "Float": sp.Float, "Rational": sp.Rational, "Symbol": sp.Symbol}


class ExprField(ScalarField):
    """Analytic field from a sympy expression, differentiated symbolically."""

    def __init__(self, expr):
        self.text = str(expr)
        self.expr = parse_expression(expr) if isinstance(expr, str) else sp.sympify(expr)
        self.is_constant = not self.expr.free_symbols
        self._fns = {}

    def _compiled(self, order):
        if order not in self._fns:
            v = (_X, _Y, _Z)
            exprs = [self.expr]
            if order >= 1:
                exprs += [sp.diff(self.expr, v[i]) for i in range(3)]
            if order >= 2:
                exprs += [sp.diff(self.expr, v[i], v[j]) for i, j in combinations_with_replacement(range(3), 2)]
            if order >= 3:
                exprs += [sp.diff(self.expr, v[i], v[j], v[k])
                          for i, j, k in combinations_with_replacement(range(3), 3)]
            self._fns[order] = sp.lambdify(v, exprs, modules="numpy")
        return self._fns[order]

    def jet(self, x, order=2):
        x = _as_points(x)
        n = x.shape[0]
        with np.errstate(all="ignore"):
            vals = self._compiled(order)(x[:, 0], x[:, 1], x[:, 2])
        vals = [np.broadcast_to(np.asarray(a, dtype=float), (n,)) for a in vals]
        jet = Jet(np.array(vals[0]))
        pos = 1
        if order >= 1:
            jet.g = np.stack(vals[1:4], axis=1)
            pos = 4
        if order >= 2:
            H = np.empty((n, 3, 3))
            for i, j in combinations_with_replacement(range(3), 2):
                H[:, i, j] = H[:, j, i] = vals[pos]
                pos += 1
            jet.H = H
        if order >= 3:
            T3 = np.empty((n, 3, 3, 3))
            for i, j, k in combinations_with_replacement(range(3), 3):
                for p in {(i, j, k), (i, k, j), (j, i, k), (j, k, i), (k, i, j), (k, j, i)}:
                    T3[(slice(None),) + p] = vals[pos]
                pos += 1
            jet.T3 = T3
        return jet

    def describe(self):
        return {"expr": self.text}


class BumpField(ScalarField):
    """Compact C^3 bump ``amp * (1 - |M (x - c)|^2)_+^4``.

    ``M`` maps the ellipsoidal support onto the unit ball.
    """

    def __init__(self, center, amplitude=1.0, radius=None, matrix=None):
        self.center = np.asarray(center, dtype=float)
        self.amp = float(amplitude)
        if matrix is None:
            matrix = np.eye(3) / float(radius)
        self.M = np.asarray(matrix, dtype=float)
        self.K = self.M.T @ self.M

    def jet(self, x, order=2):
        if order > 2:
            raise ValidationError("BumpField provides derivatives up to order 2")
        x = _as_points(x)
        d = x - self.center
        Md = d @ self.M.T
        q = 1.0 - np.einsum("ni,ni->n", Md, Md)
        inside = q > 0.0
        q = np.where(inside, q, 0.0)
        jet = Jet(self.amp * q ** 4)
        if order >= 1:
            grad_rho = 2.0 * d @ self.K  # gradient of |M d|^2
            jet.g = (-4.0 * self.amp * q ** 3)[:, None] * grad_rho
            if order >= 2:
                jet.H = (12.0 * self.amp * q ** 2)[:, None, None] * grad_rho[:, :, None] * grad_rho[:, None, :] \
                    - (8.0 * self.amp * q ** 3)[:, None, None] * self.K[None]
        return jet

    def support_radius(self):
        return 1.0 / np.linalg.svd(self.M, compute_uv=False).min()

    def describe(self):
        return {"bump": {"center": self.center.tolist(), "amplitude": self.amp, "matrix": self.M.tolist()}}


class SumField(ScalarField):
    """Pointwise sum of fields (used for perturbed models)."""

    def __init__(self, *parts):
        self.parts = parts
        self.is_constant = all(p.is_constant for p in parts)

    def jet(self, x, order=2):
        jets = [p.jet(x, order) for p in self.parts]
        out = Jet(sum(j.v for j in jets))
        if order >= 1:
            out.g = sum(j.g for j in jets)
        if order >= 2:
            out.H = sum(j.H for j in jets)
        if order >= 3:
            out.T3 = sum(j.T3 for j in jets)
        return out

    def describe(self):
        return {"sum": [p.describe() for p in self.parts]}


class GridField(ScalarField):
    """Scalar samples on a regular grid with C^2 cubic B-spline interpolation.

    Points outside the grid box are clamped to it, so the field is extended
    constantly along the box normals.
    """

    def __init__(self, data, origin, spacing, path=None):
        data = np.asarray(data, dtype=float)
        if data.ndim != 3:
            raise ValidationError("GridField expects scalar samples of shape (n0, n1, n2)")
        self.data = data
        self.origin = np.asarray(origin, dtype=float)
        self.spacing = np.broadcast_to(np.asarray(spacing, dtype=float), (3,)).copy()
        self.path = path
        self.coef = ndimage.spline_filter(data, order=3, mode="mirror", output=np.float64)
        self.is_constant = bool(np.ptp(data) == 0.0)

    @classmethod
    def from_file(cls, path):
        data, origin, spacing = read_tigrid(path)
        if data.ndim != 3:
            raise ValidationError(f"{path}: expected a scalar grid")
        return cls(data, origin, spacing, path=str(path))

    @classmethod
    def sample(cls, fn, origin, spacing, shape):
        """Sample a callable ``fn(points) -> values`` on a grid."""
        pts = grid_points(origin, spacing, shape)
        return cls(np.asarray(fn(pts)).reshape(shape), origin, spacing)

    def points(self):
        return grid_points(self.origin, self.spacing, self.data.shape)

    def jet(self, x, order=2):
        if order > 2:
            raise ValidationError("GridField provides derivatives up to order 2")
        x = _as_points(x)
        s = (x - self.origin) / self.spacing
        hi = np.array(self.data.shape, dtype=float) - 1.0
        sc = np.clip(s, 0.0, hi)
        clamped = s != sc
        v, g, H = _backend.bspline3_jet(self.coef, sc, order)
        jet = Jet(v)
        if order >= 1:
            g = np.where(clamped, 0.0, g) / self.spacing
            jet.g = g
        if order >= 2:
            mask = clamped[:, :, None] | clamped[:, None, :]
            jet.H = np.where(mask, 0.0, H) / np.outer(self.spacing, self.spacing)[None]
        return jet

    def describe(self):
        return {"grid": self.path or "<in-memory>"}


def grid_points(origin, spacing, shape):
    """Node coordinates of a regular grid in row-major order, shape (N, 3)."""
    axes = [origin[d] + spacing[d] * np.arange(shape[d]) for d in range(3)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


class AxisField:
    """Unit axis of isotropy ``xibar = grad f / |grad f|`` with derivatives.

    Parameters
    ----------
    layer : ScalarField, optional
        Layer function ``f``.  Needs third derivatives when second derivatives
        of the axis are requested.
    direction : array_like, optional
        Constant axis, used instead of ``layer``.
    """

    def __init__(self, layer: ScalarField | None = None, direction=None):
        if (layer is None) == (direction is None):
            raise ValidationError("give exactly one of layer or direction")
        self.layer = layer
        if direction is not None:
            d = np.asarray(direction, dtype=float)
            nd = np.linalg.norm(d)
            if nd == 0:
                raise ValidationError("axis direction must be nonzero")
            self.direction = d / nd
        else:
            self.direction = None
        self.is_constant = direction is not None or (
            isinstance(layer, ExprField)
            and all(sp.diff(layer.expr, a, b) == 0 for a, b in combinations_with_replacement((_X, _Y, _Z), 2)))

    def jet(self, x, order=1):
        """Return ``(xb, D, D2)``; ``D[n,i,j] = d_j xb_i``, ``D2[n,i,j,k] = d_j d_k xb_i``."""
        x = _as_points(x)
        n = x.shape[0]
        if self.direction is not None:
            xb = np.broadcast_to(self.direction, (n, 3)).copy()
            D = np.zeros((n, 3, 3)) if order >= 1 else None
            D2 = np.zeros((n, 3, 3, 3)) if order >= 2 else None
            return xb, D, D2
        jet = self.layer.jet(x, order + 1)
        g = jet.g
        nrm = np.linalg.norm(g, axis=1)
        if np.any(nrm <= 1e-300):
            idx = int(np.argmin(nrm))
            from .errors import ModelInvalidError
            raise ModelInvalidError("layer function gradient vanishes", x[idx])
        xb = g / nrm[:, None]
        if order < 1:
            return xb, None, None
        H = jet.H
        q = np.einsum("nk,nkj->nj", xb, H)
        D = (H - xb[:, :, None] * q[:, None, :]) / nrm[:, None, None]
        if order < 2:
            return xb, D, None
        T3 = jet.T3
        dq = np.einsum("nlk,nlj->njk", D, H) + np.einsum("nl,nljk->njk", xb, T3)  # dq[j,k] = d_k q_j
        D2 = (T3 - D[:, :, None, :] * q[:, None, :, None] - xb[:, :, None, None] * dq[:, None, :, :]) \
            / nrm[:, None, None, None] - D[:, :, :, None] * q[:, None, None, :] / nrm[:, None, None, None]
        return xb, D, D2

    def describe(self):
        if self.direction is not None:
            return {"direction": self.direction.tolist()}
        return self.layer.describe()
