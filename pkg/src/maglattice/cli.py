"""Command line front end: optimize, analyze, trajectory, export.

Exit codes: 0 success, 2 infeasible, 3 numerical failure, 4 bad input.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from . import analysis as an
from . import designer, loading
from .constraints import ioffe_axis
from .fieldcore import GAUSS, DomainError, PeriodicField, PhysicalParams, ValidationError, read_pattern
from .lpsolve import InfeasibleError, SolverError

logger = logging.getLogger("maglattice")

EXIT_OK, EXIT_INFEASIBLE, EXIT_NUMERICAL, EXIT_INPUT = 0, 2, 3, 4


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, designer.DesignError):
        exc = exc.original
    if isinstance(exc, (InfeasibleError, loading.InfeasibleFloorError)):
        return EXIT_INFEASIBLE
    if isinstance(exc, (ValidationError, DomainError, FileNotFoundError, IsADirectoryError, KeyError)):
        return EXIT_INPUT
    if isinstance(exc, (SolverError, an.ConvergenceError, an.NotATrapError, an.SaddleError,
                        loading.WireSingularityError, ArithmeticError)):
        return EXIT_NUMERICAL
    return EXIT_NUMERICAL


def _floats(text: str, n: int | None = None):
    try:
        vals = [designer.eval_number(v) for v in text.split(",")]
    except ValidationError as exc:
        raise ValidationError(f"bad number list {text!r}: {exc}") from None
    if n is not None and len(vals) != n:
        raise ValidationError(f"expected {n} comma-separated values, got {text!r}")
    return vals


def _grid(text: str):
    try:
        n1, n2 = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise ValidationError(f"grid must look like 200x200, got {text!r}") from None
    return n1, n2


def _kv(text: str) -> dict:
    out = {}
    for item in filter(None, text.split(",")):
        if "=" not in item:
            raise ValidationError(f"expected key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = designer.eval_number(v)
    return out


def _print_report(label, rep: an.TrapReport):
    B0, BI = rep.bias_G[:3], rep.bias_G[3]
    print(f"[{label}] position (um): {np.round(rep.position * 1e6, 4).tolist()}")
    print(f"  B0 (G): {np.round(B0, 3).tolist()}  B_I (G): {BI:.3f}")
    print(f"  depth: {rep.depth_G:.3f} G = {rep.depth_mK:.3f} mK")
    if rep.barriers_G:
        print("  barriers (G): " + ", ".join(f"{k} {v:.3f}" for k, v in rep.barriers_G.items()))
    print("  f (kHz): " + ", ".join(f"{f:.2f}" for f in rep.frequencies_khz))
    print("  Lamb-Dicke: " + ", ".join(f"{e:.3f}" for e in rep.lamb_dicke))


def cmd_optimize(args) -> int:
    spec = designer.load_spec(args.spec)
    if args.grid:
        spec = spec.with_grid(*_grid(args.grid))
    if args.equalize:
        eq = designer.equalize_triangular(spec)
        result = eq.result
        print(f"tuned field-constraint target: {eq.target:.6f} (objective {eq.objective:.2e})")
    else:
        result = designer.run_design(spec, both_signs=args.both_signs)
    print(f"C = {result.C:.6f}  (both signs: {', '.join(f'{c:.6f}' for c in result.solution.C_both)})")
    for site, rep in zip(result.spec.sites, result.reports):
        _print_report(site.label, rep)
    paths = designer.export(result, args.out, formats=("csv",))
    print(f"wrote {len(paths)} files to {args.out}")
    return EXIT_OK


def _params_for(args, file_params: PhysicalParams) -> PhysicalParams:
    d = args.d if args.d is not None else file_params.d
    return PhysicalParams(Mz=file_params.Mz, delta=file_params.delta, d=d)


def cmd_analyze(args) -> int:
    pattern, fparams = read_pattern(args.pattern)
    params = _params_for(args, fparams)
    atom = an.ATOMS.get(args.atom.lower())
    if atom is None:
        raise ValidationError(f"unknown atom {args.atom!r}")
    xy = _floats(args.site, 2)
    h = args.height
    axis = ioffe_axis(np.pi / 2, designer.eval_number(args.psi))
    src = PeriodicField.from_pattern(pattern, zmin=0.5 * h)
    dirs = an.lattice_directions(pattern.geometry)
    gauss = GAUSS / params.field_unit
    if args.bias:
        B0 = np.array(_floats(args.bias, 3)) * gauss
        seed = np.array([xy[0], xy[1], h])
        pos = an.find_trap(src, an.BiasConfig(B0, 0.0, axis), seed)
        BI = float(an.field_magnitude(src, B0, pos)[0])
        rep = an.analyze_site(src, xy, h, BI, axis, atom, params, dirs, bias=an.BiasConfig(B0, BI, axis))
    else:
        if args.ioffe is None:
            BI = an.symmetric_ioffe_search(src, xy, h, axis, {k: dirs[k] for k in ("a1", "a2")})
        else:
            BI = args.ioffe * gauss
        rep = an.analyze_site(src, xy, h, BI, axis, atom, params, dirs)
    _print_report("site", rep)
    if args.out:
        res = designer.DesignResult(pattern, float("nan"), [rep], {})
        os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
        designer.write_reports_csv(res, args.out)
    return EXIT_OK


def cmd_trajectory(args) -> int:
    pattern, fparams = read_pattern(args.pattern)
    params = _params_for(args, fparams)
    xy = _floats(args.site, 2)
    axis = ioffe_axis(np.pi / 2, designer.eval_number(args.psi))
    src = PeriodicField.from_pattern(pattern, zmin=0.1)
    wire_kw = _kv(args.zwire)
    mapping = {"L": "central_length", "standoff": "standoff", "lead": "lead_length"}
    unknown = set(wire_kw) - set(mapping)
    if unknown:
        raise ValidationError(f"unknown Z-wire keys {sorted(unknown)} (known: {sorted(mapping)})")
    wire_kw = {mapping[k]: v for k, v in wire_kw.items()}
    h_end = args.h_end * 1e-6
    B_I_end = args.ioffe_end
    if args.final_floor:
        B_I_end = loading.final_ioffe_for_floor(src, params, xy, h_end, B_I_end, args.floor_gauss, axis)
    wire = loading.zwire_for_lattice(src, params, axis, xy, h_end, B_I_end, **wire_kw)
    traj = loading.plan_trajectory(src, wire, params, xy, args.h_start * 1e-6, h_end, args.floor_gauss,
                                   args.ioffe_start, B_I_end, axis, args.samples)
    os.makedirs(args.out, exist_ok=True)
    audit = None
    if args.audit:
        audit = loading.audit_trajectory(traj, src, params, pattern.geometry, axis,
                                         find_secondary=args.secondary)
    path = os.path.join(args.out, "trajectory.csv")
    loading.write_trajectory_csv(traj, path)
    print(f"wrote {path} ({len(traj.samples)} samples)")
    if audit is not None:
        for h, kind, val in audit.violations:
            print(f"  violation at h'={h * 1e6:.3f} um: {kind} ({val})")
        print("audit: " + ("passed" if audit.passed else f"{len(audit.violations)} violations"))
    return EXIT_OK


def cmd_export(args) -> int:
    result = designer.load_result(args.result)
    formats = [f.strip() for f in args.formats.split(",") if f.strip()]
    paths = designer.export(result, args.out or args.result, formats=formats)
    for p in paths:
        print(p)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="maglattice", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("optimize", help="solve the pattern program of a TOML spec")
    p.add_argument("spec")
    p.add_argument("--out", required=True)
    p.add_argument("--grid", help="override the pixel grid, e.g. 100x100")
    p.add_argument("--both-signs", action=argparse.BooleanOptionalAction, default=True,
                   help="solve both orientations of C (default on)")
    p.add_argument("--equalize", action="store_true",
                   help="tune the field constraint between neighbours until all three barriers agree")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("analyze", help="trap parameters of a pattern file")
    p.add_argument("pattern")
    p.add_argument("--atom", default="rb87")
    p.add_argument("--d", type=float, help="lattice constant [m] (default: from the pattern file)")
    p.add_argument("--site", default="0,0", help="site x,y in units of d")
    p.add_argument("--psi", default="0", help="in-plane Ioffe axis angle from y, e.g. 5*pi/12")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--bias", help="bias field Bx,By,Bz in gauss")
    g.add_argument("--solve-bias", action="store_true", help="solve the bias for an IP trap at --height")
    p.add_argument("--height", type=float, default=0.5, help="trap height in units of d")
    p.add_argument("--ioffe", type=float, help="Ioffe field in gauss (default: equalize a1 and a2 barriers)")
    p.add_argument("--out", help="write the report CSV here")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("trajectory", help="plan and audit the Z-wire loading trajectory")
    p.add_argument("pattern")
    p.add_argument("--zwire", default="L=1e-3,standoff=4e-4", help="L=..,standoff=..[,lead=..] in metres")
    p.add_argument("--floor-gauss", type=float, default=16.5)
    p.add_argument("--out", required=True)
    p.add_argument("--d", type=float)
    p.add_argument("--site", default="0,0")
    p.add_argument("--psi", default="5*pi/12")
    p.add_argument("--h-start", type=float, default=100.0, help="um")
    p.add_argument("--h-end", type=float, default=2.5, help="um")
    p.add_argument("--ioffe-start", type=float, default=2.0, help="G")
    p.add_argument("--ioffe-end", type=float, default=9.8, help="G")
    p.add_argument("--samples", type=int, default=60)
    p.add_argument("--final-floor", action="store_true",
                   help="lower the final Ioffe field if the lattice alone misses the depth floor")
    p.add_argument("--audit", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--secondary", action=argparse.BooleanOptionalAction, default=False,
                   help="also locate secondary wells during the audit")
    p.set_defaults(func=cmd_trajectory)

    p = sub.add_parser("export", help="re-analyse an optimize output directory and write formats")
    p.add_argument("result")
    p.add_argument("--formats", default="csv")
    p.add_argument("--out", help="output directory (default: the result directory)")
    p.set_defaults(func=cmd_export)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as exc:  # mapped to documented exit codes
        code = exit_code(exc)
        print(f"error: {exc}", file=sys.stderr)
        logger.debug("traceback", exc_info=True)
        return code


if __name__ == "__main__":
    sys.exit(main())
