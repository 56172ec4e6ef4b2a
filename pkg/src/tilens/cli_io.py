"""Configuration parsing, experiment dispatch and artifact output.

Every subcommand is turned into a :class:`RunConfig` and executed by
:func:`run_scenario`, so a YAML run file and the equivalent command line
produce the same artifacts.  CSV floats carry 17 significant digits and all
randomness flows from the configured seed.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import platform
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .errors import ConfigError, NumericalError, ValidationError
from .fields import AxisField, BumpField, ConstantField, ExprField, GridField, SumField
from .material_model import MaterialModel, Mode

COMMANDS = ("forward", "lens", "pseudo", "symbol-check", "parabolic-check", "poincare", "width", "invert",
            "su-check")

TOLERANCE_DEFAULTS = {
    "ode_tol": 1e-10,
    "quad_nodes": 8,
    "quad_panels": 16,
    "eps": 0.15,
    "scan_eps": 0.6,
    "lambda_reg": 1e-6,
    "threshold": None,
    "n_theta": 32,
    "n_phi": 64,
}

# per-command options and their defaults; None marks "required" only where listed in _REQUIRED
OPTION_DEFAULTS = {
    "forward": {"rays": None, "n_rays": 16, "out": "lens.csv"},
    "lens": {"pairs": 4, "spacing": 1e-3, "out": "lens_check.csv"},
    "pseudo": {"nu": "a11", "field": None, "out_grid": None, "n_rays": 8, "out": "residual.csv"},
    "symbol-check": {"nu": "a11", "x": [0.0, 0.0, 0.0], "n_zeta": 4, "zmag": None, "sigma": None,
                     "scan": True, "out": "report.csv"},
    "parabolic-check": {"case": "heat", "p2": None, "p1": None, "m": 2.0, "out": "report.csv"},
    "poincare": {"field": None, "out": "poincare.csv"},
    "width": {"field": None, "out": "width.csv"},
    "invert": {"true_pert": None, "out_grid": "recon.tigrid", "out": "report.csv", "half": 0.5, "mask": "support",
               "maxiter": 4000},
    "su-check": {"n_rays": 16, "out": "su.csv"},
}

_REQUIRED = {
    "forward": {"models": ("base",)},
    "lens": {"models": ("base",)},
    "pseudo": {"models": ("base", "pert")},
    "symbol-check": {"models": ("base",)},
    "poincare": {"options": ("field",)},
    "width": {"options": ("field",)},
    "invert": {"models": ("base",), "options": ("true_pert",), "scenario": True},
    "su-check": {"models": ("base", "pert")},
}

TOP_KEYS = {"command", "seed", "out_dir", "models", "modes", "scenario", "grid", "tolerances", "options"}


# YAML with duplicate-key detection


class _StrictLoader(yaml.SafeLoader):
    pass


def _no_duplicates(loader, node, deep=False):
    seen = set()
    for key_node, _ in node.value:
        key = loader.construct_object(key_node, deep=deep)
        if key in seen:
            raise ConfigError(f"duplicate key '{key}' (line {key_node.start_mark.line + 1})")
        seen.add(key)
    return loader.construct_mapping(node, deep)


_StrictLoader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _no_duplicates)


def load_yaml(path):
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path) as fh:
            data = yaml.load(fh, Loader=_StrictLoader)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


# models and fields

MODEL_KEYS = {"a11", "a33", "a55", "a66", "E2", "axis", "domain_radius", "name"}
PERT_KEYS = {"a11", "a33", "E2"}


def build_field(spec, base_dir=".", where="field"):
    """Scalar field from a number, an expression, ``{grid: path}``, ``{bump: {...}}`` or ``{sum: [...]}``."""
    if isinstance(spec, bool):
        raise ConfigError(f"{where}: booleans are not fields")
    if isinstance(spec, (int, float)):
        return ConstantField(spec)
    if isinstance(spec, str):
        return ExprField(spec)
    if isinstance(spec, dict) and len(spec) == 1:
        (kind, val), = spec.items()
        if kind == "grid":
            return GridField.from_file(Path(base_dir) / val)
        if kind == "sum":
            return SumField(*(build_field(s, base_dir, f"{where}.sum[{i}]") for i, s in enumerate(val)))
        if kind == "bump":
            unknown = set(val) - {"center", "amplitude", "radius", "axes", "euler"}
            if unknown:
                raise ConfigError(f"{where}.bump: unknown keys {sorted(unknown)}")
            if ("radius" in val) == ("axes" in val):
                raise ConfigError(f"{where}.bump: give exactly one of radius or axes")
            center = val.get("center", [0.0, 0.0, 0.0])
            amp = val.get("amplitude", 1.0)
            if "radius" in val:
                return BumpField(center, amp, radius=val["radius"])
            from scipy.spatial.transform import Rotation
            R = Rotation.from_euler("xyz", val.get("euler", [0.0, 0.0, 0.0])).as_matrix()
            return BumpField(center, amp, matrix=np.diag(1.0 / np.asarray(val["axes"], float)) @ R.T)
    raise ConfigError(f"{where}: cannot interpret field specification {spec!r}")


def _section(data, name, path):
    # files may wrap their content in a single named section
    if set(data) == {name}:
        data = data[name]
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: '{name}' must be a mapping")
    return data


def build_model(spec, base_dir=".", path="<inline>") -> MaterialModel:
    spec = _section(spec, "model", path)
    errors = [f"unknown key '{k}'" for k in sorted(set(spec) - MODEL_KEYS)]
    errors += [f"missing key '{k}'" for k in ("a11", "a33", "a55", "a66", "E2") if k not in spec]
    if errors:
        raise ConfigError(f"{path}: " + "; ".join(errors))
    ax = spec.get("axis", [0.0, 0.0, 1.0])
    if isinstance(ax, dict):
        if set(ax) != {"layer"}:
            raise ConfigError(f"{path}: axis must be a 3-vector or {{layer: <field>}}")
        axis = AxisField(layer=build_field(ax["layer"], base_dir, "axis.layer"))
    else:
        axis = AxisField(direction=ax)
    fields = [build_field(spec[k], base_dir, k) for k in ("a11", "a33", "a55", "a66", "E2")]
    return MaterialModel(*fields, axis, float(spec.get("domain_radius", 1.0)), str(spec.get("name", Path(path).stem)))


def build_perturbation(spec, base_dir=".", path="<inline>"):
    spec = _section(spec, "perturbation", path)
    unknown = set(spec) - PERT_KEYS
    if unknown:
        raise ConfigError(f"{path}: unknown perturbation keys {sorted(unknown)}; allowed {sorted(PERT_KEYS)}")
    return {k: build_field(v, base_dir, k) for k, v in spec.items()}


def validation_points(m: MaterialModel, n=9):
    """Grid nodes inside the model ball used to check the parameter invariants."""
    g = np.linspace(-1.0, 1.0, n) * m.domain_radius
    P = np.stack(np.meshgrid(g, g, g, indexing="ij"), -1).reshape(-1, 3)
    return P[np.einsum("ni,ni->n", P, P) <= m.domain_radius ** 2]


def _load_model_ref(ref, base_dir, kind="model"):
    if isinstance(ref, str):
        p = Path(base_dir) / ref
        data = load_yaml(p)
        out = (build_model if kind == "model" else build_perturbation)(data, p.parent, str(p))
    elif isinstance(ref, dict):
        out = (build_model if kind == "model" else build_perturbation)(ref, base_dir)
    else:
        raise ConfigError(f"{kind} reference must be a path or a mapping")
    if kind == "model":
        out.validate(validation_points(out))
    return out


# run configuration


@dataclass
class RunConfig:
    """Validated experiment definition."""

    command: str
    seed: int = 0
    out_dir: str = "."
    models: dict = field(default_factory=dict)
    modes: list = field(default_factory=lambda: ["qp"])
    scenario: str | None = None
    grid: int = 32
    tolerances: dict = field(default_factory=lambda: dict(TOLERANCE_DEFAULTS))
    options: dict = field(default_factory=dict)
    base_dir: str = "."

    def echo(self):
        d = asdict(self)
        d.pop("base_dir")
        return d


def validate_config(data: dict, base_dir=".") -> RunConfig:
    """Check a raw mapping; all violations are collected into one :class:`ConfigError`."""
    errs = []
    unknown = set(data) - TOP_KEYS
    errs += [f"unknown key '{k}'" for k in sorted(unknown)]
    cmd = data.get("command")
    if cmd not in COMMANDS:
        errs.append(f"'command' must be one of {list(COMMANDS)}, got {cmd!r}")
        raise ConfigError("; ".join(errs))
    seed = data.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        errs.append("'seed' must be a non-negative integer")
    models = data.get("models", {}) or {}
    if not isinstance(models, dict):
        errs.append("'models' must map names (base, pert) to files or inline models")
        models = {}
    errs += [f"unknown model slot '{k}'" for k in sorted(set(models) - {"base", "pert"})]
    req = _REQUIRED.get(cmd, {})
    errs += [f"missing models.{k}" for k in req.get("models", ()) if k not in models]
    modes = data.get("modes", ["qp"])
    if isinstance(modes, str):
        modes = [modes]
    for md in modes:
        try:
            Mode.parse(md)
        except ValidationError as exc:
            errs.append(str(exc))
    scenario = data.get("scenario")
    if req.get("scenario") and not scenario:
        errs.append("missing 'scenario'")
    grid = data.get("grid", 32)
    if not isinstance(grid, int) or isinstance(grid, bool) or grid < 4:
        errs.append("'grid' must be an integer >= 4")
    tol = dict(TOLERANCE_DEFAULTS)
    user_tol = data.get("tolerances", {}) or {}
    errs += [f"unknown tolerance '{k}'" for k in sorted(set(user_tol) - set(TOLERANCE_DEFAULTS))]
    tol.update({k: v for k, v in user_tol.items() if k in TOLERANCE_DEFAULTS})
    for k, v in tol.items():
        if v is None and TOLERANCE_DEFAULTS[k] is None:
            continue
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not v > 0:
            errs.append(f"tolerance '{k}' must be a positive number, got {v!r}")
    opts = dict(OPTION_DEFAULTS[cmd])
    user_opts = data.get("options", {}) or {}
    errs += [f"unknown option '{k}' for {cmd}" for k in sorted(set(user_opts) - set(opts))]
    opts.update({k: v for k, v in user_opts.items() if k in opts})
    errs += [f"missing options.{k}" for k in req.get("options", ()) if opts.get(k) is None]
    if errs:
        raise ConfigError("; ".join(errs))
    # relative output directories follow the config file, like model references
    out_dir = Path(base_dir) / str(data.get("out_dir", "."))
    return RunConfig(cmd, seed, str(out_dir), dict(models), [str(m).lower() for m in modes],
                     scenario, grid, tol, opts, str(base_dir))


def parse_config(path) -> RunConfig:
    """Load and validate a YAML run file."""
    p = Path(path)
    return validate_config(load_yaml(p), p.parent)


# output helpers


def fmt(v):
    """17-significant-digit text for floats; integers and strings unchanged."""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) for v in r])


def sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(cfg: RunConfig, outputs, wall, extra=None):
    import scipy
    import sympy
    man = {
        "command": cfg.command,
        "seed": cfg.seed,
        "config": cfg.echo(),
        "versions": {"tilens": __version__, "python": platform.python_version(), "numpy": np.__version__,
                     "scipy": scipy.__version__, "sympy": sympy.__version__},
        "wall_clock_s": wall,
        "outputs": {Path(p).name: sha256(p) for p in outputs},
    }
    if extra:
        man["summary"] = extra
    path = Path(cfg.out_dir) / "manifest.json"
    with open(path, "w") as fh:
        json.dump(man, fh, indent=2, sort_keys=True, default=str)
    return path


# command implementations


def _out(cfg, key="out"):
    return str(Path(cfg.out_dir) / cfg.options[key])


def _models(cfg):
    base = _load_model_ref(cfg.models["base"], cfg.base_dir) if "base" in cfg.models else None
    pert = _load_model_ref(cfg.models["pert"], cfg.base_dir) if "pert" in cfg.models else None
    return base, pert


def _read_rays(path):
    arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if arr.shape[1] != 6:
        raise ValidationError(f"{path}: rays need 6 columns x0,x1,x2,xi0,xi1,xi2")
    return arr[:, :3], arr[:, 3:]


def _random_rays(m, mode, n, rng, inside=0.3):
    """Seeded random interior rays (unit-speed normalization is applied later)."""
    from .raytracer import normalize_covector
    R = m.domain_radius
    x = rng.uniform(-1, 1, (n, 3)) * inside * R / np.sqrt(3.0)
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1)[:, None]
    return x, normalize_covector(m, mode, x, d)


def cmd_forward(cfg, rng):
    from .raytracer import normalize_covector, trace_to_exit
    m, _ = _models(cfg)
    mode = cfg.modes[0]
    if cfg.options["rays"]:
        x, xi = _read_rays(Path(cfg.base_dir) / cfg.options["rays"])
        xi = normalize_covector(m, mode, x, xi)
    else:
        x, xi = _random_rays(m, mode, int(cfg.options["n_rays"]), rng)
    tol = cfg.tolerances["ode_tol"]
    back = trace_to_exit(m, mode, x, xi, tol=tol, backward=True)
    fwd = trace_to_exit(m, mode, back.exit_x, back.exit_xi, tol=tol)
    out = _out(cfg)
    hdr = [f"entry_x{i}" for i in range(3)] + [f"entry_xi{i}" for i in range(3)] + \
          [f"exit_x{i}" for i in range(3)] + [f"exit_xi{i}" for i in range(3)] + ["tau"]
    rows = np.concatenate([fwd.entry_x, fwd.entry_xi, fwd.exit_x, fwd.exit_xi, fwd.tau[:, None]], 1)
    write_csv(out, hdr, rows)
    return [out], {"rays": len(fwd)}


def cmd_lens(cfg, rng):
    from .raytracer import Domain, boundary_traveltime_table, lens_from_boundary_traveltimes
    m, _ = _models(cfg)
    mode = cfg.modes[0]
    dom = Domain.for_model(m)
    rows = []
    for _ in range(int(cfg.options["pairs"])):
        a = rng.normal(size=3)
        a /= np.linalg.norm(a)
        # targets on the far side so rays cross the interior
        b = -a + 0.5 * rng.normal(size=3)
        b /= np.linalg.norm(b)
        x0, x1 = a * dom.radius, b * dom.radius
        tab = boundary_traveltime_table(m, mode, dom, x0, x1, float(cfg.options["spacing"]))
        rec = lens_from_boundary_traveltimes(m, mode, dom, tab)
        tr = tab.central.exit_xi[0]
        err = np.linalg.norm(rec - tr) / np.linalg.norm(tr)
        rows.append([*x0, *tab.x1, *tr, *rec, tab.central.tau[0], err])
    hdr = [f"x0_{i}" for i in range(3)] + [f"x1_{i}" for i in range(3)] + [f"traced_xi{i}" for i in range(3)] + \
          [f"recon_xi{i}" for i in range(3)] + ["tau", "rel_error"]
    out = _out(cfg)
    write_csv(out, hdr, rows)
    return [out], {"max_rel_error": max(r[-1] for r in rows)}


def cmd_pseudo(cfg, rng):
    from .gridio import write_tigrid
    from .pseudolin import Cutoff, apply_N_grid, lens_difference, parse_nu, pseudo_data_residual
    m, mt = _models(cfg)
    mode = cfg.modes[0]
    tol = cfg.tolerances
    outs = []
    if cfg.options["field"]:
        u = GridField.from_file(Path(cfg.base_dir) / cfg.options["field"])
        Nu = apply_N_grid(m, mt, mode, parse_nu(cfg.options["nu"]), u, Cutoff(tol["eps"]),
                          n_theta=int(tol["n_theta"]), n_phi=int(tol["n_phi"]), panels=int(tol["quad_panels"]),
                          order=int(tol["quad_nodes"]))
        og = str(Path(cfg.out_dir) / (cfg.options["out_grid"] or "Nu.tigrid"))
        write_tigrid(og, Nu, u.origin, u.spacing)
        outs.append(og)
    x, xi = _random_rays(m, mode, int(cfg.options["n_rays"]), rng)
    pd = pseudo_data_residual(m, mt, mode, x, xi, panels=int(tol["quad_panels"]), order=int(tol["quad_nodes"]),
                              tol=tol["ode_tol"])
    res = pd - lens_difference(m, mt, mode, x, xi, tol=tol["ode_tol"])
    scale = np.maximum(np.linalg.norm(pd, axis=1), 1e-300)
    out = _out(cfg)
    write_csv(out, ["ray", "r0", "r1", "r2", "norm", "rel_norm"],
              [[i, *r, np.linalg.norm(r), np.linalg.norm(r) / scale[i]] for i, r in enumerate(res)])
    outs.append(out)
    return outs, {"max_rel_norm": float((np.linalg.norm(res, axis=1) / scale).max())}


def cmd_symbol_check(cfg, rng):
    from .pseudolin import Cutoff, parse_nu
    from .symbols import (principal_prediction, probe_homogeneous, probe_operator_symbol, probe_rays,
                          vanishing_scan)
    m, mt = _models(cfg)
    mode = cfg.modes[0]
    nu = parse_nu(cfg.options["nu"])
    x = np.asarray(cfg.options["x"], float)
    cutoff = Cutoff(cfg.tolerances["eps"])
    # grid-admissible band: |zeta|_inf <= pi / h on the unit box
    h = 1.0 / (cfg.grid - 1)
    homo = m.is_homogeneous and (mt is None or mt.is_homogeneous)
    d = rng.normal(size=(int(cfg.options["n_zeta"]), 3))
    d /= np.abs(d).max(1)[:, None]
    zmax = np.pi / h
    zetas = d * (zmax if cfg.options["zmag"] is None else float(cfg.options["zmag"]) /
                 np.linalg.norm(d, axis=1)[:, None])

    def apply(xx, z, s):
        if homo:
            return probe_homogeneous(m, mt, mode, nu, xx, z, cutoff, s)
        return probe_rays(m, mt, mode, nu, xx, z, cutoff, s, tol=cfg.tolerances["ode_tol"])

    sigma = cfg.options["sigma"]
    probes = probe_operator_symbol(apply, x, zetas, h, sigma)
    expo = float("nan")
    if cfg.options["scan"]:
        expo = vanishing_scan(m, mt, mode, nu, x, cutoff=Cutoff(cfg.tolerances["scan_eps"]),
                              method="probe" if homo else "prediction")[0]
    rows = []
    for pr in probes:
        pred = principal_prediction(m, mt, mode, nu, x, pr.zeta, cutoff).scalar
        got = pr.scalar
        rows.append([*x, *pr.zeta, np.real(pred), np.imag(pred), np.real(got), np.imag(got),
                     abs(got - pred) / abs(pred) if pred != 0 else abs(got), pr.offdiag_fraction(), expo])
    hdr = ["x0", "x1", "x2", "zeta0", "zeta1", "zeta2", "pred_re", "pred_im", "probe_re", "probe_im", "rel_error",
           "offdiag_fraction", "exponent"]
    out = _out(cfg)
    write_csv(out, hdr, rows)
    return [out], {"max_rel_error": max(r[-4] for r in rows), "exponent": expo}


def _parse_symbol_1d(text, name):
    import sympy as sp
    from sympy.parsing.sympy_parser import parse_expr, standard_transformations
    syms = {k: sp.Symbol(k) for k in ("x", "t", "xi", "tau")}
    allowed = {**syms, "sin": sp.sin, "cos": sp.cos, "exp": sp.exp, "sqrt": sp.sqrt, "pi": sp.pi}
    try:
        expr = parse_expr(str(text), local_dict=allowed, global_dict={
            "__builtins__": {}, "Integer": sp.Integer, "Float": sp.Float, "Rational": sp.Rational,
            "Symbol": sp.Symbol}, transformations=standard_transformations)
    except Exception as exc:  # sympy raises many types
        raise ConfigError(f"{name}: cannot parse {text!r}: {exc}") from exc
    extra = expr.free_symbols - set(syms.values())
    if extra:
        raise ConfigError(f"{name}: unknown names {sorted(map(str, extra))}")
    f = sp.lambdify([syms["x"], syms["t"], syms["xi"], syms["tau"]], expr, "numpy")
    return lambda X, Z: np.broadcast_to(np.asarray(f(X[:, 0], X[:, 1], Z[:, 0], Z[:, 1]), float), (X.shape[0],))


def cmd_parabolic_check(cfg, rng):
    from . import parabolic_calc as pc
    case = cfg.options["case"]
    rows = []
    summary = {}
    if case == "heat":
        c = lambda x: 1 + 0.3 * np.sin(x[:, 0]) * np.cos(x[:, 1])
        b = lambda x: 1 + 0.25 * np.cos(x[:, 0] + x[:, 1])
        p2, p1 = pc.heat_symbols(c, b)
        xp = np.array([[0.3, 1.0], [2.0, 4.0]])
    elif case == "custom":
        if not cfg.options["p2"] or not cfg.options["p1"]:
            raise ConfigError("custom case needs options p2 and p1 (expressions in x, t, xi, tau)")
        mm = float(cfg.options["m"])
        p2 = pc.SmkSymbol(_parse_symbol_1d(cfg.options["p2"], "p2"), mm, 2, 2, 2, True, "p2")
        p1 = pc.SmkSymbol(_parse_symbol_1d(cfg.options["p1"], "p1"), mm - 1, 0, 2, 2, True, "p1")
        xp = np.array([[0.3, 1.0], [2.0, 4.0]])
    elif case == "ne2":
        from .inversion import SymbolTable
        from .pseudolin import Cutoff
        from .symbols import subprincipal_prediction
        m, _ = _models(cfg) if "base" in cfg.models else (default_layer_model(), None)
        x0 = np.array([[0.0, 0.0, 1.0]])
        cutoff = Cutoff(cfg.tolerances["eps"])
        tab = SymbolTable(m, "qsv", "E2", x0, (0.0, 0.0, 1.0), cutoff)
        sub = subprincipal_prediction(m, None, "qsv", "E2", x0, 1.0, cutoff)
        coeff = float(np.imag(sub.meta["a_minus2"]))
        p2, p1 = pc.frozen_tomography_symbols(tab.profile, coeff)
        xp = np.zeros((1, 3))
        summary["sub_coeff"] = coeff
    else:
        raise ConfigError(f"unknown parabolic case {case!r}; expected heat, ne2 or custom")
    q = pc.inverse_parabolic(p2, p1, x_points=xp, seed=cfg.seed)
    for name, sym, m_, k_ in (("p_m", p2, p2.m, 2), ("q", q, q.m, q.k)):
        rep = pc.smk_membership_test(sym, m_, k_, x_points=xp, seed=cfg.seed)
        rows.append(["membership", name, m_, k_, rep.slope, rep.spread, int(rep.passed), float(rep.constants[-1])])
        summary[f"{name}_passed"] = bool(rep.passed)
    rows.append(["lower_bound", "p", p2.m, 2, float("nan"), float("nan"), 1, float(np.min(q.meta["lower_bound"]))])
    if p2.d == 2:
        grid = pc.PeriodicGrid((64, 64), 2 * np.pi)
        rep = pc.parametrix_residual(pc.full_symbol(p2, p1), q, grid)
        for fam, e in rep.exponents.items():
            rows.append(["residual", fam, q.m, q.k, e, float("nan"), int(e <= -0.4),
                         float(rep.families[fam][-1])])
            summary[f"residual_{fam}"] = e
    out = _out(cfg)
    write_csv(out, ["check", "symbol", "m", "k", "slope_or_exponent", "spread", "passed", "value"], rows)
    return [out], summary


def default_layer_model():
    """Spherically layered model used by the built-in ``ne2`` parabolic case."""
    return MaterialModel(ExprField("4.5 - 0.5*sqrt(x**2 + y**2 + z**2)"), ConstantField(3.0), ConstantField(1.0),
                         ConstantField(1.2), ConstantField(2.0),
                         AxisField(layer=ExprField("sqrt(x**2 + y**2 + z**2)")), 4.0, "spherical-layer")


def _load_grid(cfg):
    return GridField.from_file(Path(cfg.base_dir) / cfg.options["field"])


def cmd_poincare(cfg, rng):
    from .inversion import poincare_check
    u = _load_grid(cfg)
    r = poincare_check(u, threshold=cfg.tolerances["threshold"])
    out = _out(cfg)
    write_csv(out, ["l2", "grad", "h_half", "width", "ratio_l2", "ratio_h_half", "bound", "passed"],
              [[r.l2, r.grad, r.h_half, r.width, r.ratio_l2, r.ratio_h_half, 1 + r.slack, int(r.passed)]])
    return [out], {"passed": r.passed}


def cmd_width(cfg, rng):
    from .inversion import width
    u = _load_grid(cfg)
    w = width(u, cfg.tolerances["threshold"], seed=cfg.seed)
    out = _out(cfg)
    write_csv(out, ["width", "n0", "n1", "n2", "box_width", "support_nodes"],
              [[w.width, *w.direction, w.box_width, len(w.points)]])
    return [out], {"width": w.width}


def cmd_invert(cfg, rng):
    from .gridio import write_tigrid
    from .inversion import (RecoveryProblem, near_null_direction, recover, relative_error, support_mask)
    m, _ = _models(cfg)
    pert = _load_model_ref(cfg.options["true_pert"], cfg.base_dir, "perturbation")
    prob = RecoveryProblem(cfg.scenario, m, n=cfg.grid, half=float(cfg.options["half"]), eps=cfg.tolerances["eps"])
    sc = prob.scenario
    missing = [nu for nu in sc.unknowns if nu not in pert]
    if missing:
        raise ConfigError(f"true perturbation lacks fields for {missing}")
    out = _out(cfg)
    if sc.ill_posed:
        ref = RecoveryProblem("two:a11,E2", m, n=cfg.grid, half=float(cfg.options["half"]), eps=cfg.tolerances["eps"])
        nn = near_null_direction(prob, reference=ref)
        rows = [["near_null", sc.unknowns[0], nn.direction[0], nn.exponent, nn.exponent_reference],
                ["near_null", sc.unknowns[1], nn.direction[1], nn.exponent, nn.exponent_reference]]
        rows += [["smin", f"u={u:.6g}", s, float("nan"), float("nan")] for u, s in zip(nn.u, nn.smin)]
        write_csv(out, ["kind", "name", "value", "exponent", "reference_exponent"], rows)
        return [out], {"ill_posed": True, "exponent": nn.exponent, "reference_exponent": nn.exponent_reference}
    r = np.stack([prob.sample(pert[nu]) for nu in sc.unknowns])
    if cfg.options["mask"] == "support":
        prob.mask = support_mask(prob, list(r), 1)
    elif cfg.options["mask"] != "none":
        raise ConfigError("options.mask must be 'support' or 'none'")
    prob.lam = cfg.tolerances["lambda_reg"] * prob.operator_norm_sq(seed=cfg.seed)
    f = prob.forward(r)
    rec = recover(prob, f, maxiter=int(cfg.options["maxiter"]))
    og = str(Path(cfg.out_dir) / cfg.options["out_grid"])
    data = rec.r[0] if rec.r.shape[0] == 1 else np.moveaxis(rec.r, 0, -1)
    write_tigrid(og, data, prob.grid_origin, np.full(3, prob.h))
    rows = [[nu, relative_error(rec.r[i], r[i]), rec.iterations, rec.lam, rec.data_misfit, int(rec.converged)]
            for i, nu in enumerate(sc.unknowns)]
    write_csv(out, ["unknown", "rel_error", "iterations", "lambda", "data_misfit", "converged"], rows)
    return [og, out], {"rel_errors": {row[0]: row[1] for row in rows}}


def cmd_su_check(cfg, rng):
    from .pseudolin import su_identity_check
    m, mt = _models(cfg)
    mode = cfg.modes[0]
    x, xi = _random_rays(m, mode, int(cfg.options["n_rays"]), rng)
    t = rng.uniform(0.2, 1.0, len(x)) * m.domain_radius
    res, lhs, rhs = su_identity_check(m, mt, mode, x, xi, t, panels=int(cfg.tolerances["quad_panels"]),
                                      order=int(cfg.tolerances["quad_nodes"]), tol=min(cfg.tolerances["ode_tol"], 1e-13))
    out = _out(cfg)
    write_csv(out, ["ray", "t", "residual", "lhs_norm"],
              [[i, t[i], res[i], np.linalg.norm(lhs[i])] for i in range(len(res))])
    return [out], {"max_residual": float(res.max())}


HANDLERS = {"forward": cmd_forward, "lens": cmd_lens, "pseudo": cmd_pseudo, "symbol-check": cmd_symbol_check,
            "parabolic-check": cmd_parabolic_check, "poincare": cmd_poincare, "width": cmd_width,
            "invert": cmd_invert, "su-check": cmd_su_check}


def run_scenario(cfg: RunConfig):
    """Run one configured experiment; returns ``(outputs, manifest_path, summary)``."""
    os.makedirs(cfg.out_dir, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    t0 = time.perf_counter()
    outputs, summary = HANDLERS[cfg.command](cfg, rng)
    wall = time.perf_counter() - t0
    man = write_manifest(cfg, outputs, wall, summary)
    return outputs, man, summary


# command line


def _add_common(p, models=("base",), modes=True):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default=None, help="artifact directory (default: directory of --out)")
    for slot in models:
        flag = {"base": "--model", "pert": "--pert"}[slot]
        p.add_argument(flag, dest=slot, help=f"{slot} model YAML")
        if slot == "base":
            p.add_argument("--base", dest=slot, help=argparse.SUPPRESS)
    if modes:
        p.add_argument("--mode", default="qp")
    p.add_argument("--eps", type=float, default=None, help="cutoff width")
    p.add_argument("--ode-tol", type=float, default=None)


def build_parser():
    ap = argparse.ArgumentParser(prog="tilens", description="Travel-time tomography experiments for TI media")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a YAML experiment file")
    p.add_argument("config")

    p = sub.add_parser("forward", help="trace rays and write lens data")
    _add_common(p)
    p.add_argument("--rays")
    p.add_argument("--n-rays", type=int)
    p.add_argument("--out", default="lens.csv")

    p = sub.add_parser("lens", help="reconstruct exit covectors from boundary travel times")
    _add_common(p)
    p.add_argument("--pairs", type=int)
    p.add_argument("--spacing", type=float)
    p.add_argument("--out", default="lens_check.csv")

    p = sub.add_parser("pseudo", help="apply normal operators and report pseudolinearization residuals")
    _add_common(p, ("base", "pert"))
    p.add_argument("--nu", default="a11")
    p.add_argument("--field")
    p.add_argument("--n-rays", type=int)
    p.add_argument("--report", default="residual.csv")
    p.add_argument("--out", default=None, help="output grid for N[u]")

    p = sub.add_parser("symbol-check", help="compare probed and predicted symbols")
    _add_common(p, ("base", "pert"))
    p.add_argument("--nu", default="a11")
    p.add_argument("--grid", type=int, default=32)
    p.add_argument("--n-zeta", type=int)
    p.add_argument("--zmag", type=float)
    p.add_argument("--no-scan", action="store_true")
    p.add_argument("--out", default="report.csv")

    p = sub.add_parser("parabolic-check", help="parabolic symbol calculus checks")
    _add_common(p, ("base",), modes=False)
    p.add_argument("--case", default="heat", choices=["heat", "ne2", "custom"])
    p.add_argument("--p2")
    p.add_argument("--p1")
    p.add_argument("--order", type=float, default=2.0)
    p.add_argument("--out", default="report.csv")

    for name in ("poincare", "width"):
        p = sub.add_parser(name, help=f"{name} check for a grid field")
        p.add_argument("--field", required=True)
        p.add_argument("--threshold", type=float)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out-dir", default=None)
        p.add_argument("--out", default=f"{name}.csv")

    p = sub.add_parser("invert", help="linearized recovery")
    _add_common(p, modes=False)
    p.add_argument("--scenario", required=True)
    p.add_argument("--true-pert", required=True)
    p.add_argument("--grid", type=int, default=32)
    p.add_argument("--lambda-reg", type=float)
    p.add_argument("--mask", choices=["support", "none"], default="support")
    p.add_argument("--out", default="recon.tigrid")
    p.add_argument("--report", default="report.csv")

    p = sub.add_parser("su-check", help="flow-difference identity residuals")
    _add_common(p, ("base", "pert"))
    p.add_argument("--n-rays", type=int)
    p.add_argument("--out", default="su.csv")
    return ap


def config_from_args(a) -> RunConfig:
    """Translate parsed arguments into a validated :class:`RunConfig`."""
    if a.command == "run":
        return parse_config(a.config)
    cwd = os.getcwd()
    data = {"command": a.command, "seed": a.seed, "models": {}, "tolerances": {}, "options": {}}
    for slot in ("base", "pert"):
        if getattr(a, slot, None):
            data["models"][slot] = os.path.abspath(getattr(a, slot))
    if getattr(a, "mode", None):
        data["modes"] = [a.mode]
    for k in ("eps", "ode_tol", "lambda_reg", "threshold"):
        if getattr(a, k, None) is not None:
            data["tolerances"][k] = getattr(a, k)
    opts = data["options"]
    out_main = a.report if a.command in ("pseudo", "invert") else a.out
    out_dir = a.out_dir or (os.path.dirname(os.path.abspath(out_main)))
    opts["out"] = os.path.basename(out_main)
    if a.command == "forward":
        if a.rays:
            opts["rays"] = os.path.abspath(a.rays)
        if a.n_rays:
            opts["n_rays"] = a.n_rays
    elif a.command == "lens":
        if a.pairs:
            opts["pairs"] = a.pairs
        if a.spacing:
            opts["spacing"] = a.spacing
    elif a.command == "pseudo":
        opts["nu"] = a.nu
        if a.field:
            opts["field"] = os.path.abspath(a.field)
        if a.out:
            opts["out_grid"] = os.path.relpath(os.path.abspath(a.out), out_dir)
        if a.n_rays:
            opts["n_rays"] = a.n_rays
    elif a.command == "symbol-check":
        data["grid"] = a.grid
        opts["nu"] = a.nu
        opts["scan"] = not a.no_scan
        if a.n_zeta:
            opts["n_zeta"] = a.n_zeta
        if a.zmag:
            opts["zmag"] = a.zmag
    elif a.command == "parabolic-check":
        opts.update(case=a.case, p2=a.p2, p1=a.p1, m=a.order)
    elif a.command in ("poincare", "width"):
        opts["field"] = os.path.abspath(a.field)
    elif a.command == "invert":
        data["grid"] = a.grid
        data["scenario"] = a.scenario
        opts["true_pert"] = os.path.abspath(a.true_pert)
        opts["mask"] = a.mask
        opts["out_grid"] = os.path.relpath(os.path.abspath(a.out), out_dir)
    elif a.command == "su-check":
        if a.n_rays:
            opts["n_rays"] = a.n_rays
    data["out_dir"] = out_dir
    return validate_config(data, cwd)


def main(argv=None) -> int:
    ap = build_parser()
    a = ap.parse_args(argv)
    try:
        cfg = config_from_args(a)
        outputs, man, summary = run_scenario(cfg)
    except ValidationError as exc:
        print(f"tilens: error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"tilens: numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    for p in outputs:
        print(p)
    print(man)
    return 0


if __name__ == "__main__":
    sys.exit(main())
