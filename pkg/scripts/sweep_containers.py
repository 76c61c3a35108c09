"""MEC energy versus the container budget, plus the per-count energy curve.

    python scripts/sweep_containers.py --seeds 0
"""

import argparse

from _common import out_dir
from greenmesh.cli import write_columns
from greenmesh.compute import ContainerAllocation, mec_energy
from greenmesh.energy import EnergyCoeffs
from greenmesh.sim import SimConfig, sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0])
    ap.add_argument("--values", type=int, nargs="+", default=[1, 2, 5, 10, 15, 20])
    args = ap.parse_args()
    d = out_dir("sweep_containers")

    c = EnergyCoeffs()
    counts = list(range(21))
    write_columns(d / "mec_energy_vs_count.dat", ["containers", "full_load_J", "half_load_J"],
                  [counts, [mec_energy(ContainerAllocation((10.0,) * k), c) for k in counts],
                   [mec_energy(ContainerAllocation((5.0,) * k), c) for k in counts]])

    rows = sweep(SimConfig(), "containers", args.values, ("LLC", "OPEN"), args.seeds)
    for r in rows:
        print(f"D {r.value:3d}  theta_mec LLC {r.theta_mec['LLC']:.3f} J  OPEN {r.theta_mec['OPEN']:.3f} J  "
              f"savings LLC {r.savings['LLC']:.3f}%")
    write_columns(d / "sweep_containers.dat", ["containers", "theta_mec_LLC", "theta_mec_OPEN"],
                  [[r.value for r in rows], [r.theta_mec["LLC"] for r in rows], [r.theta_mec["OPEN"] for r in rows]])
    print(f"plot data in {d}")


if __name__ == "__main__":
    main()
