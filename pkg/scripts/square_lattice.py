"""Square lattice: optimize the pattern and print the trap figures at d = 5 um."""
import argparse
import os
import time

from maglattice import designer

HERE = os.path.dirname(os.path.abspath(__file__))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--spec", default=os.path.join(HERE, "..", "configs", "square.toml"))
    ap.add_argument("--grid", default=None, help="e.g. 100x100")
    ap.add_argument("--out", default=None, help="export directory (csv)")
    args = ap.parse_args()

    spec = designer.load_spec(args.spec)
    if args.grid:
        spec = spec.with_grid(*(int(v) for v in args.grid.lower().split("x")))
    t0 = time.perf_counter()
    res = designer.run_design(spec)
    print(f"C = {res.C:.5f}  ({time.perf_counter() - t0:.1f} s, {len(res.solution.unrailed)} un-railed pixels)")
    rep = res.reports[0]
    B0, BI = rep.bias_G[:3], rep.bias_G[3]
    print(f"B0 = ({B0[0]:.2f}, {B0[1]:.2f}, {B0[2]:.2f}) G   B_I = {BI:.2f} G")
    print(f"depth = {rep.depth_G:.2f} G ({rep.depth_mK:.3f} mK)")
    print("barriers: " + ", ".join(f"{k} {v:.2f} G" for k, v in rep.barriers_G.items()))
    print("f = " + ", ".join(f"{f:.1f}" for f in rep.frequencies_khz) + " kHz")
    if args.out:
        for p in designer.export(res, args.out):
            print("wrote", p)


if __name__ == "__main__":
    main()
