#!/usr/bin/env python3
"""Bandwidth/latency sensitivity study on 64 ranks.

Replays a skeleton over the default axis of link bandwidths (20, 50, 100,
200, 500, 1000 Gb/s) and latencies (40, 90, 140, 200, 500, 1000 ns), in both
timing modes, and writes one sweep.csv per skeleton. No new profiles are
needed across points; one synthetic profile is reused everywhere.

Usage:
    python scripts/bandwidth_sweep.py --out results/ [--skeleton transpose]
"""

import argparse
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from manynode.dse import emit_reports, parse_config_text, run_sweep, sweep_spec_from_config
from manynode.timingmodel import (
    PhasePattern,
    SynthPhase,
    SynthSpec,
    build_profile,
    extract_intervals,
    save_profile,
    synth_marker_log,
)

SKELETON_KEYS = {
    "halo3d": "skeleton.halo3d.halo_bytes = 65536\nbind.halo = 1\n",
    "transpose": "skeleton.transpose.elems_per_rank = 524288\nbind.fft_rows = 1\nbind.fft_cols = 1\n",
    "tree_dnn": "skeleton.tree_dnn.weight_bytes = 4194304\nbind.train = 1\n",
    "sweep": "skeleton.sweep.chunk_bytes = 65536\nbind.sweep = 1\n",
}

CONFIG = """
network.topology = fat_tree
skeleton.name = {name}
skeleton.ranks = {ranks}
skeleton.iterations = {iterations}
skeleton.ranks_per_node = 2
{skeleton_keys}
profile.path = {profile}
profile.default_compute_ns = 1000000
sim.seed = 1
sweep.bandwidths_gbps = 20,50,100,200,500,1000
sweep.latencies_ns = {latencies}
sweep.modes = constant,variable
sweep.seeds_per_point = {seeds}
"""


def make_profile(path, seed=1):
    """Synthetic phase-2 stand-in: one compute phase, mildly multimodal."""
    spec = SynthSpec(
        phases={
            1: SynthPhase(
                pattern=PhasePattern((0, 1, 1, 1), 200),
                clusters={0: ("normal", 2.0e6, 1.5e5), 1: ("normal", 0.8e6, 0.6e5)},
            )
        }
    )
    log = synth_marker_log(spec, seed=seed)
    profile = build_profile(extract_intervals(log)[0])
    save_profile(profile, path)
    return path


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="results_bandwidth")
    ap.add_argument("--skeleton", choices=sorted(SKELETON_KEYS), default="transpose")
    ap.add_argument("--ranks", type=int, default=64)
    ap.add_argument("--iterations", type=int, default=10)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--latencies", default="40,90,140,200,500,1000")
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()

    os.makedirs(args.out, exist_ok=True)
    profile_path = make_profile(os.path.join(args.out, "profile.txt"))
    cfg = parse_config_text(
        CONFIG.format(name=args.skeleton, skeleton_keys=SKELETON_KEYS[args.skeleton],
                      profile=profile_path, ranks=args.ranks, iterations=args.iterations,
                      seeds=args.seeds, latencies=args.latencies)
    )
    spec = sweep_spec_from_config(cfg)
    n_points = 6 * len(args.latencies.split(",")) * 2
    print(f"{args.skeleton}: {n_points} sweep points ...")
    result = run_sweep(spec, workers=args.workers)
    written = emit_reports(result, args.out)
    print(f"wrote {written[0]}")
    by_bw = {}
    for row in result.rows:
        if row.latency_ns == 90.0 and row.mode == "variable":
            by_bw[row.bandwidth_gbps] = row.mean_total_ns
    base = by_bw.get(1000.0)
    if base:
        print("variable mode, 90 ns latency, normalized to 1000 Gb/s:")
        for bw in sorted(by_bw):
            print(f"  {bw:6.0f} Gb/s: {by_bw[bw] / base:6.3f}x")


if __name__ == "__main__":
    main()
