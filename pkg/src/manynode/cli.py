"""Command-line entry points.

Subcommands: cluster-ranks, synth-log, build-profile, simulate, sweep.
Exit code 0 on success, 2 on a diagnosed toolkit error.
"""

import argparse
import dataclasses
import os
import sys

from . import PROFILE_FORMAT, __version__
from .dse import (
    bindings_from_config,
    netcfg_from_config,
    parse_config,
    profile_from_config,
    run_sweep,
    skeleton_from_config,
    sweep_spec_from_config,
    synth_spec_from_config,
    write_simulation_outputs,
    emit_reports,
    _get,
)
from .errors import ManynodeError
from .rankprofile import (
    cluster_ranks,
    load_counters,
    load_node_map,
    select_representatives,
    write_clustering_csv,
    write_selection,
)
from .skeletons import run_skeleton
from .timingmodel import (
    build_profile,
    extract_intervals,
    load_marker_log,
    save_marker_log,
    save_profile,
    synth_marker_log,
)


def _add_common(p):
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--seed", type=int, default=None, help="override sim.seed")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--trace", action="store_true", help="keep per-event trace outputs")


def _build_parser():
    ap = argparse.ArgumentParser(prog="manynode", description=__doc__)
    ap.add_argument("--version", action="version",
                    version=f"manynode {__version__} (profile-format {PROFILE_FORMAT})")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("cluster-ranks", help="phase 1: cluster ranks and pick representative nodes")
    _add_common(p)
    p.add_argument("--counters", required=True, help="counter CSV (rank,node,instructions,ipc,branches,loads)")
    p.add_argument("--k-max", type=int, default=8)
    p.add_argument("--ranks-per-node", type=int, default=1)
    p.add_argument("--node-map", help="optional rank,node CSV overriding block placement")

    p = sub.add_parser("synth-log", help="generate a synthetic marker log from synth.* config keys")
    _add_common(p)

    p = sub.add_parser("build-profile", help="phase 2: marker log -> timing profile")
    _add_common(p)
    p.add_argument("--log", required=True, help="marker log CSV")
    p.add_argument("--rank", type=int, default=0, help="rank whose intervals are profiled")
    p.add_argument("--rel-gap", type=float, default=0.3)
    p.add_argument("--max-bins", type=int, default=100)

    p = sub.add_parser("simulate", help="phase 3: run one skeleton simulation")
    _add_common(p)

    p = sub.add_parser("sweep", help="run the configured design-space sweep")
    _add_common(p)
    p.add_argument("--workers", type=int, default=1)
    return ap


def _load_config(args):
    return parse_config(args.config) if args.config else {}


def _seed(args, cfg):
    if args.seed is not None:
        return args.seed
    return _get(cfg, "sim.seed", 0, int)


def _cmd_cluster_ranks(args):
    cfg = _load_config(args)
    table = load_counters(args.counters)
    clustering = cluster_ranks(table, k_max=args.k_max, seed=_seed(args, cfg))
    node_map = load_node_map(args.node_map) if args.node_map else None
    selection = select_representatives(clustering, ranks_per_node=args.ranks_per_node,
                                       node_map=node_map)
    os.makedirs(args.out, exist_ok=True)
    write_clustering_csv(table, clustering, os.path.join(args.out, "clusters.csv"))
    write_selection(selection, os.path.join(args.out, "selection.txt"))
    print(f"k={clustering.k} clusters; selected nodes: {' '.join(map(str, selection.nodes))}")
    return 0


def _cmd_synth_log(args):
    cfg = _load_config(args)
    spec = synth_spec_from_config(cfg)
    log = synth_marker_log(spec, seed=_seed(args, cfg))
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "marker_log.csv")
    save_marker_log(log, path)
    print(f"wrote {path} ({len(log)} records)")
    return 0


def _cmd_build_profile(args):
    log = load_marker_log(args.log)
    per_rank = extract_intervals(log)
    if args.rank not in per_rank:
        raise ManynodeError(f"rank {args.rank} not present in {args.log}")
    profile = build_profile(per_rank[args.rank], rel_gap=args.rel_gap, max_bins=args.max_bins)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "profile.txt")
    save_profile(profile, path)
    print(f"wrote {path} ({len(profile)} phases)")
    return 0


def _cmd_simulate(args):
    cfg = _load_config(args)
    program = skeleton_from_config(cfg)
    netcfg = netcfg_from_config(cfg)
    profile = profile_from_config(cfg)
    report = run_skeleton(
        program, profile, netcfg,
        mode=_get(cfg, "sim.mode", "constant"),
        seed=_seed(args, cfg),
        ranks_per_node=_get(cfg, "skeleton.ranks_per_node", 1, int),
        bindings=bindings_from_config(cfg),
        default_compute_ns=_get(cfg, "profile.default_compute_ns", 1_000_000.0, float),
        trace=args.trace,
    )
    written = write_simulation_outputs(report, args.out, traced=args.trace)
    print(f"total {report.total_ns} ns; wrote {', '.join(written)}")
    return 0


def _cmd_sweep(args):
    cfg = _load_config(args)
    spec = sweep_spec_from_config(cfg)
    if args.seed is not None:
        spec = dataclasses.replace(spec, base_seed=args.seed)
    result = run_sweep(spec, workers=args.workers, keep_breakdown=args.trace)
    written = emit_reports(result, args.out)
    print(f"{len(result.rows)} points; wrote {written[0]}")
    return 0


_COMMANDS = {
    "cluster-ranks": _cmd_cluster_ranks,
    "synth-log": _cmd_synth_log,
    "build-profile": _cmd_build_profile,
    "simulate": _cmd_simulate,
    "sweep": _cmd_sweep,
}


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ManynodeError as e:
        print(f"manynode: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
