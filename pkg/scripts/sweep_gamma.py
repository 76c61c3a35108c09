"""Savings versus the QoS weight Gamma for LLC and OPEN (common random numbers).

    python scripts/sweep_gamma.py --seeds 0 1 2
"""

import argparse

from _common import out_dir
from greenmesh.cli import write_columns
from greenmesh.sim import SimConfig, sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--days", type=int, default=7)
    args = ap.parse_args()
    gammas = [round(0.1 * i, 1) for i in range(10)]
    rows = sweep(SimConfig(days=args.days), "gamma", gammas, ("LLC", "OPEN"), args.seeds)
    for r in rows:
        print(f"gamma {r.value:.1f}  LLC {r.savings['LLC']:.3f}%  OPEN {r.savings['OPEN']:.3f}%")
    d = out_dir("sweep_gamma")
    write_columns(d / "sweep_gamma.dat", ["gamma", "LLC", "OPEN"],
                  [gammas, [r.savings["LLC"] for r in rows], [r.savings["OPEN"] for r in rows]])
    print(f"plot data in {d}")


if __name__ == "__main__":
    main()
