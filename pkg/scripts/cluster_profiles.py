"""X-means on daily traffic profiles drawn from the four synthetic archetypes.

    python scripts/cluster_profiles.py --sites 20 --days 7
"""

import argparse

import numpy as np

from greenmesh.traces import slice_days, synth_trace, xmeans_cluster


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sites", type=int, default=20)
    ap.add_argument("--days", type=int, default=7)
    ap.add_argument("--noise", type=float, default=0.05)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    profiles, truth = [], []
    for _ in range(args.sites):
        a = int(rng.integers(4))
        for p in slice_days(synth_trace("traffic", args.days, int(rng.integers(1 << 30)), args.noise, a), 48):
            profiles.append(p)
            truth.append(a)
    m = xmeans_cluster(profiles, 1, 8, args.seed)
    print(f"k = {m.k}; BIC path {[(k, round(b, 1)) for k, b in m.history]}")
    for j in range(m.k):
        members = np.array(truth)[m.assignments == j]
        print(f"cluster {j}: {members.size} profiles, generators {sorted(set(members.tolist()))}")


if __name__ == "__main__":
    main()
