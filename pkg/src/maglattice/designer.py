"""Design pipeline: spec file -> constraints -> LP -> rounding -> trap analysis.

Spec files are TOML.  Lengths inside ``[[site]]`` and ``[[constraint]]``
are in units of the lattice constant; ``[lattice] d`` is in metres and
``[film] Mz`` / ``delta`` are in A/m and metres.  Angles may be numbers
or arithmetic strings such as ``"5*pi/12"``.

    [lattice]
    zeta = "pi/3"
    d = 5e-6
    n1 = 200
    n2 = 200

    [film]
    Mz = 666666.67
    delta = 0.3e-6

    [[site]]
    xy = [0.0, 0.0]
    height = 0.5
    euler_phi = "pi/4"
    euler_theta = "pi/2"
    euler_psi = "5*pi/12"

    [[constraint]]
    type = "field"          # field | gradient | curvature | equal
    point = [0.5, 0.0, 0.5]
    component = "y"
    target = -0.0977

    [atom]
    species = "rb87"        # F, mF, gF, mass override the species values

    [analysis]
    ioffe_gauss = 9.8       # omit to equalize the a1 and a2 barriers
"""
from __future__ import annotations

import ast
import copy
import csv
import json
import logging
import math
import operator
import os
import sys
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize

from . import __version__
from . import analysis as an
from .constraints import (DesignProgram, TrapSite, add_curvature_constraint, add_equality_constraints,
                          add_field_constraint, add_gradient_constraints)
from .fieldcore import (GAUSS, LatticeGeometry, PeriodicField, PhysicalParams, ValidationError,
                        basis_derivative_rows, read_pattern, write_pattern)
from .lpsolve import build_instance, round_unrailed, solve, solve_orientation, unrailed_indices, LpSolution

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ["label", "x_m", "y_m", "z_m", "B0x_G", "B0y_G", "B0z_G", "B_I_G", "depth_G", "depth_mK",
                  "barriers_G", "f1_kHz", "f2_kHz", "f3_kHz", "eta1", "eta2", "eta3"]
MAP_COLUMNS = ["x/d", "y/d", "z/d", "Psi_reduced", "Bx_reduced", "By_reduced", "Bz_reduced"]


class DesignError(RuntimeError):
    """A pipeline stage failed; the original exception is ``__cause__``."""

    def __init__(self, stage: str, exc: Exception):
        super().__init__(f"[{stage}] {exc}")
        self.stage = stage
        self.original = exc


# ---------------------------------------------------------------------------
# spec parsing

_OPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul, ast.Div: operator.truediv,
        ast.Pow: operator.pow, ast.USub: operator.neg, ast.UAdd: operator.pos}
_NAMES = {"pi": math.pi}
_FUNCS = {"sqrt": math.sqrt, "sin": math.sin, "cos": math.cos, "tan": math.tan, "atan": math.atan}


def eval_number(value) -> float:
    """Number or arithmetic string over pi, sqrt, sin, cos, tan, atan."""
    if isinstance(value, bool):
        raise ValidationError(f"expected a number, got {value!r}")
    if isinstance(value, (int, float)):
        return float(value)
    if not isinstance(value, str):
        raise ValidationError(f"expected a number, got {value!r}")

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return float(node.value)
        if isinstance(node, ast.Name) and node.id in _NAMES:
            return _NAMES[node.id]
        if isinstance(node, ast.BinOp) and type(node.op) in _OPS:
            return _OPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _OPS:
            return _OPS[type(node.op)](ev(node.operand))
        if (isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in _FUNCS
                and len(node.args) == 1 and not node.keywords):
            return _FUNCS[node.func.id](ev(node.args[0]))
        raise ValidationError(f"unsupported expression {value!r}")

    try:
        tree = ast.parse(value.strip(), mode="eval")
    except SyntaxError:
        raise ValidationError(f"cannot parse {value!r}") from None
    try:
        out = ev(tree)
    except ZeroDivisionError:
        raise ValidationError(f"division by zero in {value!r}") from None
    if not math.isfinite(out):
        raise ValidationError(f"non-finite value {value!r}")
    return out


def _vector(value, n, what):
    if not isinstance(value, (list, tuple)) or len(value) != n:
        raise ValidationError(f"{what} needs {n} numbers, got {value!r}")
    return tuple(eval_number(v) for v in value)


def _require(table, key, where):
    if key not in table:
        raise ValidationError(f"missing key '{key}' in [{where}]")
    return table[key]


@dataclass
class DesignSpec:
    geometry: LatticeGeometry
    params: PhysicalParams
    sites: list
    constraints: list
    atom: an.AtomSpec = an.RB87
    ioffe_gauss: float | None = None
    raw: dict = field(default_factory=dict)

    def with_grid(self, n1: int, n2: int) -> "DesignSpec":
        raw = copy.deepcopy(self.raw)
        raw.setdefault("lattice", {}).update(n1=int(n1), n2=int(n2))
        return replace(self, geometry=self.geometry.with_grid(n1, n2), raw=raw)

    def with_constraint_target(self, index: int, target: float) -> "DesignSpec":
        if not -len(self.constraints) <= index < len(self.constraints):
            raise ValidationError(f"no constraint with index {index} ({len(self.constraints)} defined)")
        cons = [dict(c) for c in self.constraints]
        cons[index]["target"] = float(target)
        raw = copy.deepcopy(self.raw)
        raw["constraint"][index]["target"] = float(target)
        return replace(self, constraints=cons, raw=raw)


_CONSTRAINT_TYPES = ("field", "gradient", "curvature", "equal")


def parse_spec(data: dict) -> DesignSpec:
    lat = _require(data, "lattice", "top level")
    zeta = eval_number(_require(lat, "zeta", "lattice"))
    d = eval_number(_require(lat, "d", "lattice"))
    n1, n2 = int(_require(lat, "n1", "lattice")), int(_require(lat, "n2", "lattice"))
    film = data.get("film", {})
    params = PhysicalParams(Mz=eval_number(film.get("Mz", PhysicalParams.Mz)),
                            delta=eval_number(film.get("delta", PhysicalParams.delta)), d=d)
    geometry = LatticeGeometry(zeta, n1, n2)

    sites = []
    for k, s in enumerate(data.get("site", [])):
        xy = _vector(_require(s, "xy", "site"), 2, "site xy")
        h = eval_number(_require(s, "height", "site"))
        euler = tuple(eval_number(s.get(f"euler_{a}", dflt))
                      for a, dflt in (("phi", math.pi / 4), ("theta", math.pi / 2), ("psi", 0.0)))
        sites.append(TrapSite((xy[0], xy[1], h), euler, s.get("label", f"site{k}")))
    if not sites:
        raise ValidationError("spec needs at least one [[site]]")

    constraints = []
    for c in data.get("constraint", []):
        kind = _require(c, "type", "constraint")
        if kind not in _CONSTRAINT_TYPES:
            raise ValidationError(f"constraint type must be one of {_CONSTRAINT_TYPES}, got {kind!r}")
        entry = {"type": kind}
        if kind == "equal":
            entry["a"] = _vector(_require(c, "a", "constraint"), 3, "equal point a")
            entry["b"] = _vector(_require(c, "b", "constraint"), 3, "equal point b")
            entry["component"] = str(c.get("component", "u"))
        else:
            entry["point"] = _vector(_require(c, "point", "constraint"), 3, "constraint point")
            entry["component"] = str(_require(c, "component", "constraint"))
            entry["target"] = eval_number(_require(c, "target", "constraint"))
        constraints.append(entry)

    atom_t = data.get("atom", {})
    species = str(atom_t.get("species", "rb87")).lower()
    if species not in an.ATOMS:
        raise ValidationError(f"unknown atom species {species!r} (known: {sorted(an.ATOMS)})")
    atom = an.ATOMS[species]
    over = {}
    for key, name in (("F", "F"), ("mF", "m_F"), ("gF", "g_F"), ("mass", "mass")):
        if key in atom_t:
            over[name] = eval_number(atom_t[key]) if name in ("g_F", "mass") else int(atom_t[key])
    if over:
        atom = replace(atom, **over)

    ana = data.get("analysis", {})
    ioffe = eval_number(ana["ioffe_gauss"]) if "ioffe_gauss" in ana else None
    return DesignSpec(geometry, params, sites, constraints, atom, ioffe, copy.deepcopy(data))


def load_spec(path) -> DesignSpec:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ValidationError(f"{path}: {exc}") from None
    return parse_spec(data)


def build_program(spec: DesignSpec) -> DesignProgram:
    prog = DesignProgram(spec.geometry)
    for site in spec.sites:
        add_gradient_constraints(prog, site)
    for c in spec.constraints:
        if c["type"] == "field":
            add_field_constraint(prog, c["point"], c["component"], c["target"])
        elif c["type"] == "gradient":
            comp = c["component"]
            if len(comp) != 2:
                raise ValidationError(f"gradient component needs two axes, got {comp!r}")
            row = basis_derivative_rows(spec.geometry, [c["point"]], [comp])[0]
            prog.add_row(row, c["target"], "gradient-component", f"v_{comp} at {c['point']}")
        elif c["type"] == "curvature":
            add_curvature_constraint(prog, c["point"], c["component"], c["target"])
        else:
            add_equality_constraints(prog, c["a"], c["b"], c["component"])
    return prog


# ---------------------------------------------------------------------------
# pipeline


@dataclass
class DesignResult:
    pattern: object
    C: float
    reports: list
    provenance: dict
    spec: DesignSpec | None = None
    solution: LpSolution | None = None

    @property
    def site_offsets(self) -> list:
        """Distance (units of d) from each re-found trap to its nominal site."""
        out = []
        for site, rep in zip(self.spec.sites, self.reports):
            out.append(float(np.linalg.norm(rep.position_reduced - np.asarray(site.position))))
        return out


def _stage(name, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except DesignError:
        raise
    except Exception as exc:
        raise DesignError(name, exc) from exc


def solve_program(spec: DesignSpec, both_signs: bool = True):
    """Relaxed LP optimum and its rounded binary pattern: (LpSolution, RoundingReport)."""
    prog = build_program(spec)
    A, b = prog.matrix()
    inst = build_instance(A, b)
    if both_signs:
        sol = solve(inst.Atilde, inst.m0, A=A)
    else:
        x, it, res = solve_orientation(inst.Atilde, inst.m0, +1, scale=np.linalg.norm(A, 2))
        C = float(x @ inst.m0 / (inst.m0 @ inst.m0))
        sol = LpSolution(x, C, "optimal", unrailed_indices(x), res, it, (C,), inst.rank)
    rounding = round_unrailed(sol, spec.geometry, A=A, b=b)
    return sol, rounding


def analyze_pattern(pattern, spec: DesignSpec, ioffe=None, ioffe_reduced=None) -> list:
    """Trap reports for every site of ``spec`` on ``pattern``.

    ``ioffe`` (gauss, scalar or per site) overrides the design spec; otherwise each
    site uses the design's ``ioffe_gauss`` or, if absent, the B_I that
    equalizes the a1 and a2 barriers.  ``ioffe_reduced`` (per site, reduced
    units) takes precedence over both and reproduces a stored analysis exactly.
    """
    params = spec.params
    zmin = 0.5 * min(s.position[2] for s in spec.sites)
    src = PeriodicField.from_pattern(pattern, zmin=zmin)
    dirs = an.lattice_directions(spec.geometry)
    gauss = GAUSS / params.field_unit
    if ioffe is None:
        ioffe = spec.ioffe_gauss
    n = len(spec.sites)
    if ioffe_reduced is not None:
        per_site = list(np.broadcast_to(np.asarray(ioffe_reduced, float), n))
    else:
        per_site = [v * gauss for v in np.broadcast_to(np.asarray(ioffe if ioffe is not None else np.nan, float), n)]
    reports = []
    for site, BI in zip(spec.sites, per_site):
        xy, h, axis = site.position[:2], site.position[2], site.ioffe_axis
        if np.isnan(BI):
            pair = {k: dirs[k] for k in ("a1", "a2")}
            BI = an.symmetric_ioffe_search(src, xy, h, axis, pair)
        rep = an.analyze_site(src, xy, h, BI, axis, spec.atom, params, dirs)
        reports.append(rep)
    return reports


def run_design(spec, both_signs: bool = True, ioffe=None) -> DesignResult:
    """Full pipeline on a spec (path or ``DesignSpec``); traps re-found on the rounded pattern."""
    if not isinstance(spec, DesignSpec):
        spec = _stage("parse", load_spec, spec)
    sol, rounding = _stage("lp", solve_program, spec, both_signs)
    logger.info("C = %.6f (both: %s), %d un-railed", sol.C, sol.C_both, len(sol.unrailed))
    reports = _stage("analysis", analyze_pattern, rounding.pattern, spec, ioffe)
    prov = {
        "tool": "maglattice",
        "version": __version__,
        "spec": _jsonable(spec.raw),
        "solver": {
            "C": sol.C,
            "C_both": list(sol.C_both),
            "iterations": sol.iterations,
            "kkt_residuals": dict(sol.kkt_residuals),
            "unrailed": [int(i) for i in sol.unrailed],
            "rank": sol.rank,
            "rounding_perturbation": rounding.perturbation,
            "rounding_relative_perturbation": rounding.relative_perturbation,
        },
        "ioffe_gauss": [float(r.bias_G[3]) for r in reports],
        "ioffe_reduced": [float(r.bias.B_I) for r in reports],
    }
    return DesignResult(rounding.pattern, sol.C, reports, prov, spec, sol)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


# ---------------------------------------------------------------------------
# nested barrier equalization


@dataclass
class EqualizationResult:
    target: float
    result: DesignResult
    objective: float
    scan: list
    evaluations: int


def _barrier_spread(result: DesignResult, names=("a1", "a2", "a2-a1")) -> float:
    bars = result.reports[0].barriers_G
    vals = [bars[n] for n in names]
    return (max(vals) - min(vals)) / np.mean(vals)


def equalize_triangular(spec, point=(0.5, 0.0, 0.5), component: str = "y", bracket=(-0.2, 0.0),
                        n_scan: int = 9, xtol: float = 1e-5) -> EqualizationResult:
    """Tune the field-constraint target at ``point`` until all three barriers agree.

    For each trial target the LP is solved, the pattern rounded, B_I set to
    equalize the a1 and a2 barriers, and the objective is the relative
    excess of the a2-a1 barrier over their mean.  The root is bracketed by
    a scan over ``bracket`` and refined with Brent's method.
    """
    if not isinstance(spec, DesignSpec):
        spec = load_spec(spec)
    if "a2-a1" not in an.lattice_directions(spec.geometry):
        raise ValidationError("barrier equalization needs a lattice with three nearest-neighbour directions")
    point = tuple(float(v) for v in point)
    cons = [c for c in spec.constraints
            if not (c["type"] == "field" and c["component"] == component and np.allclose(c["point"], point))]
    base = replace(spec, constraints=cons + [{"type": "field", "point": point, "component": component,
                                               "target": 0.0}])
    raw = copy.deepcopy(spec.raw)
    raw["constraint"] = [c for c in raw.get("constraint", [])
                         if not (c.get("type") == "field" and c.get("component") == component
                                 and np.allclose(_vector(c["point"], 3, "point"), point))]
    raw["constraint"].append({"type": "field", "point": list(point), "component": component, "target": 0.0})
    base.raw = raw
    idx = len(cons)
    cache = {}

    def evaluate(t):
        t = float(t)
        if t not in cache:
            res = run_design(base.with_constraint_target(idx, t), ioffe=None)
            bars = res.reports[0].barriers_G
            mean = 0.5 * (bars["a1"] + bars["a2"])
            cache[t] = ((bars["a2-a1"] - mean) / mean, res)
            logger.info("target %.6f -> barrier excess %.3e", t, cache[t][0])
        return cache[t]

    scan = []
    prev = None
    for t in np.linspace(bracket[0], bracket[1], n_scan):
        try:
            f = evaluate(t)[0]
        except DesignError as exc:
            logger.debug("target %g skipped: %s", t, exc)
            prev = None
            continue
        scan.append((float(t), float(f)))
        if prev is not None and np.sign(f) != np.sign(prev[1]):
            root = optimize.brentq(lambda x: evaluate(x)[0], prev[0], t, xtol=xtol)
            f_root, res = evaluate(root)
            res.provenance["equalization"] = {"target": root, "objective": f_root, "scan": scan}
            return EqualizationResult(float(root), res, float(f_root), scan, len(cache))
        prev = (float(t), float(f))
    raise an.ConvergenceError("barrier excess does not change sign over the scanned targets", {"scanned": scan})


# ---------------------------------------------------------------------------
# export


def report_rows(result: DesignResult):
    labels = [s.label for s in result.spec.sites] if result.spec else [f"site{i}" for i in range(len(result.reports))]
    for label, rep in zip(labels, result.reports):
        B0, BI = rep.bias_G[:3], rep.bias_G[3]
        bars = ";".join(f"{k}:{float(v)!r}" for k, v in rep.barriers_G.items())
        f = rep.frequencies_khz
        yield [label, *map(float, rep.position), *map(float, B0), float(BI), rep.depth_G, rep.depth_mK,
               bars, *map(float, f), *map(float, rep.lamb_dicke)]


def _fmt(x):
    return repr(float(x)) if isinstance(x, (float, np.floating, int)) and not isinstance(x, bool) else str(x)


def write_reports_csv(result: DesignResult, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(REPORT_COLUMNS)
        for row in report_rows(result):
            wr.writerow([_fmt(x) for x in row])


def read_reports_csv(path) -> list:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if rows and list(rows[0]) != REPORT_COLUMNS:
        raise ValidationError(f"{path}: unexpected columns {list(rows[0])}")
    return rows


def potential_map_rows(pattern, z: float, ngrid: int = 64):
    """Cell grid at height z (units of d): position, Psi and pattern field in reduced units."""
    g = pattern.geometry
    s = np.arange(ngrid) / ngrid
    S, T = np.meshgrid(s, s, indexing="ij")
    xy = g.to_cartesian(np.stack([S.ravel(), T.ravel()], axis=-1))
    pts = np.column_stack([xy, np.full(len(xy), float(z))])
    src = PeriodicField.from_pattern(pattern, zmin=min(0.25, z))
    psi, u, _, _ = src.expansion_arrays(pts, 1)
    return np.column_stack([pts, psi, -u])


def write_potential_map_csv(pattern, path, z: float, ngrid: int = 64) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(MAP_COLUMNS)
        for row in potential_map_rows(pattern, z, ngrid):
            wr.writerow([repr(float(x)) for x in row])


def _write_png(result: DesignResult, path, ngrid: int = 128) -> None:
    try:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError as exc:
        raise RuntimeError("png export needs matplotlib (pip install maglattice[plot])") from exc
    rep = result.reports[0]
    src = PeriodicField.from_pattern(result.pattern, zmin=0.25)
    z = rep.position_reduced[2]
    xy, B = an.plane_field(src, result.spec.geometry, z, ngrid)
    V = np.linalg.norm(B + rep.bias.B0, axis=-1) * result.spec.params.field_unit / GAUSS
    fig, axes = plt.subplots(1, 2, figsize=(9, 4))
    g = result.spec.geometry
    corners = g.to_cartesian(np.array([[0, 0], [1, 0], [1, 1], [0, 1], [0, 0]], float))
    axes[0].imshow(result.pattern.values, origin="lower", cmap="gray_r", interpolation="nearest")
    axes[0].set_title(f"pattern, C = {result.C:.4f}")
    pc = axes[1].tripcolor(xy[..., 0].ravel(), xy[..., 1].ravel(), V.ravel(), shading="gouraud")
    axes[1].plot(corners[:, 0], corners[:, 1], "w-", lw=0.8)
    axes[1].set_aspect("equal")
    axes[1].set_title(f"|B| [G] at z = {z:.3f} d")
    fig.colorbar(pc, ax=axes[1])
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def export(result: DesignResult, out_dir, formats=("csv",), map_ngrid: int = 64) -> list:
    """Write pattern, provenance and the requested formats into ``out_dir``; returns the paths."""
    formats = set(formats)
    unknown = formats - {"csv", "png"}
    if unknown:
        raise ValidationError(f"unknown export formats {sorted(unknown)}")
    os.makedirs(out_dir, exist_ok=True)
    paths = []

    def target(name):
        p = os.path.join(out_dir, name)
        paths.append(p)
        return p

    try:
        write_pattern(target("pattern.txt"), result.pattern, result.spec.params)
        with open(target("provenance.json"), "w") as fh:
            json.dump(_jsonable(result.provenance), fh, indent=2, sort_keys=True)
            fh.write("\n")
        if "csv" in formats:
            write_reports_csv(result, target("reports.csv"))
            z = result.spec.sites[0].position[2]
            write_potential_map_csv(result.pattern, target("potential_map.csv"), z, map_ngrid)
        if "png" in formats:
            _write_png(result, target("potential.png"))
    except OSError as exc:
        raise OSError(f"cannot write {exc.filename or out_dir}: {exc.strerror}") from exc
    return paths


def load_result(out_dir) -> DesignResult:
    """Rebuild a result from an exported directory by re-analysing the stored pattern."""
    pattern, params = read_pattern(os.path.join(out_dir, "pattern.txt"))
    with open(os.path.join(out_dir, "provenance.json")) as fh:
        prov = json.load(fh)
    spec = parse_spec(prov["spec"])
    if spec.geometry.n1 != pattern.geometry.n1 or spec.geometry.n2 != pattern.geometry.n2:
        spec = spec.with_grid(pattern.geometry.n1, pattern.geometry.n2)
    spec = replace(spec, params=params)
    reports = analyze_pattern(pattern, spec, prov.get("ioffe_gauss"), prov.get("ioffe_reduced"))
    C = prov.get("solver", {}).get("C", float("nan"))
    return DesignResult(pattern, C, reports, prov, spec)
