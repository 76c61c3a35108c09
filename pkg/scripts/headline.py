"""LLC vs OPEN run-mean savings and hourly savings profile, seed-averaged.

    python scripts/headline.py --seeds 0 1 2 3 4
"""

import argparse
import time
from dataclasses import replace

import numpy as np

from _common import out_dir
from greenmesh.cli import write_columns
from greenmesh.sim import SimConfig, build_scenario, compute_savings, precompute_forecasts, run_sim, window_mean


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--days", type=int, default=7)
    ap.add_argument("--gamma", type=float, default=0.5)
    ap.add_argument("--forecaster", default="lstm", choices=["lstm", "persistence"])
    args = ap.parse_args()

    t0 = time.perf_counter()
    hourly = {"LLC": [], "OPEN": [], "NONE": []}
    means = {k: [] for k in hourly}
    for s in args.seeds:
        cfg = SimConfig(seed=s, days=args.days, gamma=args.gamma, forecaster=args.forecaster)
        sc = build_scenario(cfg)
        fcast = precompute_forecasts(cfg, sc)
        for ctl in hourly:
            log = run_sim(replace(cfg, controller=ctl), sc, fcast)
            st = compute_savings(log, log.baseline)
            hourly[ctl].append(st.hourly)
            means[ctl].append(st.run_mean)
            print(f"seed {s} {ctl:4s} savings {st.run_mean:7.3f}%  theta_mec {log.theta_mec.mean():7.3f} J")
    d = out_dir("headline")
    h = {k: np.mean(v, axis=0) for k, v in hourly.items()}
    write_columns(d / "hourly_savings.dat", ["hour", "LLC", "OPEN", "NONE"], [np.arange(24), h["LLC"], h["OPEN"], h["NONE"]])
    for ctl, v in means.items():
        print(f"{ctl:4s} mean savings {np.mean(v):.3f}%  (02-06h {window_mean(h[ctl], 2, 6):.2f}%, "
              f"09-17h {window_mean(h[ctl], 9, 17):.2f}%)")
    print(f"LLC - OPEN gap {np.mean(means['LLC']) - np.mean(means['OPEN']):+.3f} pp; "
          f"{time.perf_counter() - t0:.0f}s; plot data in {d}")


if __name__ == "__main__":
    main()
