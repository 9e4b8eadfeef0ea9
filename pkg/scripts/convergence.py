"""C(N) on N x N grids for the square and triangular specs (diagnostic table)."""
import argparse
import os
import time

from maglattice import designer

HERE = os.path.dirname(os.path.abspath(__file__))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sizes", default="25,50,100,150,200,300")
    ap.add_argument("--specs", default="square,triangular")
    args = ap.parse_args()
    sizes = [int(n) for n in args.sizes.split(",")]
    names = args.specs.split(",")
    specs = {n: designer.load_spec(os.path.join(HERE, "..", "configs", f"{n}.toml")) for n in names}
    print(f"{'N':>5} " + " ".join(f"{n:>12} {'s':>6}" for n in names))
    for N in sizes:
        cells = []
        for n in names:
            t0 = time.perf_counter()
            sol, _ = designer.solve_program(specs[n].with_grid(N, N))
            cells.append(f"{sol.C:12.6f} {time.perf_counter() - t0:6.1f}")
        print(f"{N:5d} " + " ".join(cells))


if __name__ == "__main__":
    main()
