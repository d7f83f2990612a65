#!/usr/bin/env python3
"""Topology comparison for a tree-reduction workload, 2 to 2048 ranks.

Runs the DNN-training-like skeleton (binary-tree weight reduction with codec
delays) on the default fat tree, 3-D torus, and dragonfly at one rank per
node, and writes scaling.csv. Beyond one switch the fat tree pulls ahead;
the torus/dragonfly crossover appears once traffic leaves a dragonfly group.

Usage:
    python scripts/topology_scaling.py --out results/
"""

import argparse
import csv
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from manynode.netmodel import NetworkConfig
from manynode.skeletons import run_skeleton, skeleton_tree_dnn
from manynode.timingmodel import EmpiricalCdf, PhasePattern, PhaseProfile, TimingCluster

MS = 1e6


def codec_profile():
    def phase(lo, hi):
        cdf = EmpiricalCdf((lo, hi), (1.0,))
        return PhaseProfile(
            clusters=(TimingCluster(0, cdf, 2, (lo + hi) / 2),),
            pattern=PhasePattern((0,), 1),
        )

    return {
        1: phase(45 * MS, 55 * MS),   # training step
        2: phase(0.08 * MS, 0.12 * MS),  # encode / decode
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="results_topology")
    ap.add_argument("--iterations", type=int, default=3)
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--max-ranks", type=int, default=2048)
    ap.add_argument("--weight-mb", type=float, default=4.0)
    args = ap.parse_args()

    os.makedirs(args.out, exist_ok=True)
    profile = codec_profile()
    bindings = {"train": 1, "encode": 2, "decode": 2}
    rows = []
    for topo in ("fat_tree", "torus3d", "dragonfly"):
        cfg = NetworkConfig(topology=topo, bandwidth_gbps=100.0, latency_ns=90.0)
        for exp in range(1, 12):
            n = 2 ** exp
            if n > args.max_ranks:
                break
            totals = []
            for seed in range(args.seeds):
                prog = skeleton_tree_dnn(n, iterations=args.iterations,
                                         weight_bytes=int(args.weight_mb * 2**20))
                rep = run_skeleton(prog, profile, cfg, mode="variable", seed=seed,
                                   bindings=bindings)
                totals.append(rep.total_ns)
            mean = sum(totals) / len(totals)
            rows.append((topo, n, mean))
            print(f"{topo:9s} {n:5d} ranks: {mean / MS:10.2f} ms")
    path = os.path.join(args.out, "scaling.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["topology", "ranks", "mean_total_ns"])
        for row in rows:
            w.writerow(row)
    print(f"wrote {path}")


if __name__ == "__main__":
    main()
