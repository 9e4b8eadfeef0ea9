"""Triangular lattice: optimize, optionally tune the neighbour field constraint, report traps and truncation."""
import argparse
import os
import time

from maglattice import analysis as an
from maglattice import designer

HERE = os.path.dirname(os.path.abspath(__file__))


def show(res):
    rep = res.reports[0]
    B0, BI = rep.bias_G[:3], rep.bias_G[3]
    print(f"C = {res.C:.5f}")
    print(f"B0 = ({B0[0]:.2f}, {B0[1]:.2f}, {B0[2]:.2f}) G   B_I = {BI:.2f} G")
    print(f"depth = {rep.depth_G:.2f} G")
    print("barriers: " + ", ".join(f"{k} {v:.2f} G" for k, v in rep.barriers_G.items()))
    print("f = " + ", ".join(f"{f:.1f}" for f in rep.frequencies_khz) + " kHz")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--spec", default=os.path.join(HERE, "..", "configs", "triangular.toml"))
    ap.add_argument("--equalize", action="store_true", help="tune u_y until the three barriers agree")
    ap.add_argument("--cutoff", type=float, default=2.0, help="Fourier cutoff in units of 2 pi / d")
    ap.add_argument("--out", default=None)
    args = ap.parse_args()

    spec = designer.load_spec(args.spec)
    t0 = time.perf_counter()
    if args.equalize:
        eq = designer.equalize_triangular(spec)
        res = eq.result
        print(f"u_y target = {eq.target:.6f} after {len(eq.scan)} scan points")
    else:
        res = designer.run_design(spec)
    print(f"({time.perf_counter() - t0:.1f} s)")
    show(res)

    site = res.spec.sites[0]
    tr = an.fourier_truncation_report(res.pattern, args.cutoff, res.reports[0], site.position[:2],
                                      site.position[2], res.spec.atom, res.spec.params,
                                      an.lattice_directions(res.spec.geometry))
    print(f"truncation to {tr.n_modes} modes: potential {100 * tr.potential:.2f}%, depth {100 * tr.depth:+.2f}%")
    print("  barriers " + ", ".join(f"{k} {100 * v:+.3f}%" for k, v in tr.barriers.items()))
    print("  f " + ", ".join(f"{100 * v:+.2f}%" for v in tr.frequencies))
    if args.out:
        for p in designer.export(res, args.out):
            print("wrote", p)


if __name__ == "__main__":
    main()
