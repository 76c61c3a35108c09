"""One-step and T-step RMSE of every cached forecaster against persistence.

    python scripts/forecast_rmse.py --horizon 3
"""

import argparse

import numpy as np

from _common import out_dir
from greenmesh import forecast as fc
from greenmesh.cli import write_columns
from greenmesh.sim import load_or_train, training_series

KINDS = ["traffic-0", "traffic-1", "traffic-2", "traffic-3", "solar", "wind"]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--horizon", type=int, default=3)
    args = ap.parse_args()
    cfg = fc.TrainConfig()
    d = out_dir("forecast")
    for kind in KINDS:
        w = load_or_train(kind, cfg)
        v = training_series(kind)
        split = int(round(cfg.train_fraction * v.size))
        steps = fc.horizon_rmse(w, v, args.horizon, cfg.window_len, split)
        pers = fc.persistence_rmse(v, cfg.window_len, split)
        print(f"{kind:10s} rmse by step {np.round(steps, 4).tolist()}  persistence {pers:.4f}")
        origins = np.arange(split, v.size)
        hist = np.lib.stride_tricks.sliding_window_view(v, cfg.window_len)[origins - cfg.window_len]
        one = fc.predict_batch(w, hist, 1, cfg.window_len)[:, 0]
        write_columns(d / f"{kind}_overlay.dat", ["slot", "real", "forecast"], [origins, v[origins], one])
    print(f"plot data in {d}")


if __name__ == "__main__":
    main()
