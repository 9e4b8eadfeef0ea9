"""Z-wire loading into the triangular lattice: plan, audit and write the trajectory CSV."""
import argparse
import os
import time

import numpy as np

from maglattice import designer, loading
from maglattice.fieldcore import PeriodicField

HERE = os.path.dirname(os.path.abspath(__file__))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--spec", default=os.path.join(HERE, "..", "configs", "triangular.toml"))
    ap.add_argument("--floor", type=float, default=16.5, help="depth floor [G]")
    ap.add_argument("--samples", type=int, default=60)
    ap.add_argument("--no-final-floor", dest="final_floor", action="store_false")
    ap.add_argument("--secondary", action="store_true", help="also locate secondary wells")
    ap.add_argument("--out", default="trajectory.csv")
    args = ap.parse_args()

    res = designer.run_design(designer.load_spec(args.spec))
    spec = res.spec
    axis = spec.sites[0].ioffe_axis
    lattice = PeriodicField.from_pattern(res.pattern, zmin=0.1)
    t0 = time.perf_counter()
    wire = loading.zwire_for_lattice(lattice, spec.params, axis)
    traj = loading.plan_trajectory(lattice, wire, spec.params, depth_floor=args.floor, axis=axis,
                                   n_samples=args.samples, final_floor=args.final_floor)
    print(f"planned {len(traj.samples)} samples in {time.perf_counter() - t0:.0f} s")
    audit = loading.audit_trajectory(traj, lattice, spec.params, spec.geometry, axis,
                                     find_secondary=args.secondary)
    print(f"{'h_um':>8} {'I_A':>8} {'B0x':>8} {'B0y':>8} {'B_I':>7} {'depth':>7} {'surf':>7} zeros")
    for s, z in zip(traj.samples, audit.zeros):
        print(f"{s.h * 1e6:8.2f} {s.current:8.3f} {s.B0_G[0]:8.2f} {s.B0_G[1]:8.2f} {s.B_I_G:7.3f} "
              f"{s.depth_G:7.2f} {s.surface_min_G:7.1f} {len(z)}")
        for pos, depth in s.secondary:
            print(f"{'':8} secondary well at z = {pos[2] * spec.params.d * 1e6:.2f} um, depth {depth:.2f} G")
    kinds = sorted({k for _, k, _ in audit.violations})
    print("audit: " + ("passed" if audit.passed else f"{len(audit.violations)} violations ({', '.join(kinds)})"))
    print(f"minimum surface field {np.min([s.surface_min_G for s in traj.samples]):.1f} G")
    loading.write_trajectory_csv(traj, args.out)
    print("wrote", args.out)


if __name__ == "__main__":
    main()
