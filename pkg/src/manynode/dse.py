"""Design-space exploration: config files, sweeps, and report emission.

Config files are line-oriented `key = value` with dotted sections (diff
friendly, so a sweep's provenance is one readable file). A sweep is the
cartesian product of bandwidth, latency, topology, node-count, and timing
mode axes; variable-mode points run seeds_per_point seeds, constant-mode
points run once. Timing profiles are produced once in phase 2 and reused
across every point.
"""

import csv
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ManynodeError, UsageError
from .netmodel import NetworkConfig
from .skeletons import (
    balanced_grid2,
    balanced_grid3,
    run_skeleton,
    skeleton_halo3d,
    skeleton_nn4d,
    skeleton_sweep,
    skeleton_transpose,
    skeleton_tree_dnn,
)
from .timingmodel import PhasePattern, SynthPhase, SynthSpec, load_profile

SKELETON_NAMES = ("halo3d", "sweep", "transpose", "tree_dnn", "nn4d")


# ---------------------------------------------------------------------------
# config file


def parse_config_text(text, origin="<config>"):
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}: line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{origin}: line {lineno}: empty key")
        if key in out:
            raise ConfigError(f"{origin}: line {lineno}: duplicate key {key}")
        out[key] = value
    return out


def parse_config(path):
    with open(path) as fh:
        return parse_config_text(fh.read(), origin=str(path))


def _get(cfg, key, default=None, cast=str):
    raw = cfg.get(key)
    if raw is None or raw == "":
        return default
    try:
        return cast(raw)
    except ValueError as e:
        raise ConfigError(f"{key}: {e}") from None


def _get_list(cfg, key, default, cast):
    raw = cfg.get(key)
    if raw is None or raw == "":
        return default
    try:
        return tuple(cast(part.strip()) for part in raw.split(",") if part.strip())
    except ValueError as e:
        raise ConfigError(f"{key}: {e}") from None


def netcfg_from_config(cfg, **overrides):
    dims_raw = _get(cfg, "network.torus.dims", "5x5x4")
    try:
        dims = tuple(int(d) for d in dims_raw.lower().split("x"))
    except ValueError:
        raise ConfigError(f"network.torus.dims: bad value {dims_raw!r}") from None
    kw = dict(
        topology=_get(cfg, "network.topology", "fat_tree"),
        bandwidth_gbps=_get(cfg, "network.bandwidth_gbps", 100.0, float),
        latency_ns=_get(cfg, "network.latency_ns", 90.0, float),
        nodes_per_switch=_get(cfg, "network.nodes_per_switch", 24, int),
        mtu_bytes=_get(cfg, "network.mtu_bytes", 4096, int),
        radix=_get(cfg, "network.fat_tree.radix", 48, int),
        pods=_get(cfg, "network.fat_tree.pods", None, int),
        torus_dims=dims,
        links_per_direction=_get(cfg, "network.torus.links_per_direction", 4, int),
        groups=_get(cfg, "network.dragonfly.groups", 5, int),
        switches_per_group=_get(cfg, "network.dragonfly.switches_per_group", 18, int),
        intra_links=_get(cfg, "network.dragonfly.intra_links", 17, int),
        inter_links=_get(cfg, "network.dragonfly.inter_links", 7, int),
        intra_node_bandwidth_gbps=_get(cfg, "network.intra_node.bandwidth_gbps", None, float),
        intra_node_latency_ns=_get(cfg, "network.intra_node.latency_ns", 0.0, float),
    )
    kw.update(overrides)
    return NetworkConfig(**kw)


def skeleton_from_config(cfg, ranks=None):
    name = _get(cfg, "skeleton.name", "halo3d")
    if name not in SKELETON_NAMES:
        raise ConfigError(f"skeleton.name must be one of {SKELETON_NAMES}, got {name!r}")
    if ranks is None:
        ranks = _get(cfg, "skeleton.ranks", 64, int)
    iterations = _get(cfg, "skeleton.iterations", 10, int)
    if name == "halo3d":
        px = _get(cfg, "skeleton.halo3d.px", None, int)
        py = _get(cfg, "skeleton.halo3d.py", None, int)
        pz = _get(cfg, "skeleton.halo3d.pz", None, int)
        if px is None or py is None or pz is None:
            px, py, pz = balanced_grid3(ranks)
        if px * py * pz != ranks:
            raise ConfigError(f"halo3d grid {px}x{py}x{pz} != {ranks} ranks")
        return skeleton_halo3d(
            px, py, pz, iterations,
            halo_bytes=_get(cfg, "skeleton.halo3d.halo_bytes", 65536, int),
            allreduce_every=_get(cfg, "skeleton.halo3d.allreduce_every", 1, int),
            allreduce_bytes=_get(cfg, "skeleton.halo3d.allreduce_bytes", 8, int),
        )
    if name == "sweep":
        px = _get(cfg, "skeleton.sweep.px", None, int)
        py = _get(cfg, "skeleton.sweep.py", None, int)
        if px is None or py is None:
            px, py = balanced_grid2(ranks)
        if px * py != ranks:
            raise ConfigError(f"sweep grid {px}x{py} != {ranks} ranks")
        return skeleton_sweep(
            px, py, iterations,
            angles=_get(cfg, "skeleton.sweep.angles", 4, int),
            chunk_bytes=_get(cfg, "skeleton.sweep.chunk_bytes", 16384, int),
        )
    if name == "transpose":
        return skeleton_transpose(
            ranks, iterations,
            elems_per_rank=_get(cfg, "skeleton.transpose.elems_per_rank", 131072, int),
            element_bytes=_get(cfg, "skeleton.transpose.element_bytes", 8, int),
            window=_get(cfg, "skeleton.transpose.window", 64, int),
        )
    if name == "tree_dnn":
        return skeleton_tree_dnn(
            ranks, iterations,
            weight_bytes=_get(cfg, "skeleton.tree_dnn.weight_bytes", 4194304, int),
            fanout=_get(cfg, "skeleton.tree_dnn.fanout", 2, int),
        )
    p = round(ranks ** 0.25)
    if p ** 4 != ranks:
        raise ConfigError(f"nn4d needs a 4th-power rank count, got {ranks}")
    return skeleton_nn4d(p, iterations, msg_bytes=_get(cfg, "skeleton.nn4d.msg_bytes", 1048576, int))


def bindings_from_config(cfg):
    out = {}
    for key, value in cfg.items():
        if key.startswith("bind."):
            out[key[5:]] = int(value)
    return out


def profile_from_config(cfg):
    path = _get(cfg, "profile.path", None)
    return load_profile(path) if path else None


def synth_spec_from_config(cfg):
    phase_ids = _get_list(cfg, "synth.phases", (1,), int)
    phases = {}
    for pid in phase_ids:
        base = f"synth.phase.{pid}"
        unit = _get_list(cfg, f"{base}.pattern", None, int)
        if unit is None:
            raise ConfigError(f"{base}.pattern is required")
        reps = _get(cfg, f"{base}.repetitions", 1, int)
        tail = _get_list(cfg, f"{base}.tail", (), int)
        clusters = {}
        for key, value in cfg.items():
            prefix = f"{base}.cluster."
            if key.startswith(prefix):
                label = int(key[len(prefix):])
                parts = value.split(":")
                kind = parts[0]
                args = tuple(float(x) for x in parts[1:])
                clusters[label] = (kind,) + args
        phases[pid] = SynthPhase(pattern=PhasePattern(tuple(unit), reps, tuple(tail)), clusters=clusters)
    return SynthSpec(
        phases=phases,
        ranks=_get(cfg, "synth.ranks", 1, int),
        comm_ns=_get(cfg, "synth.comm_ns", 0, int),
    )


# ---------------------------------------------------------------------------
# sweeps


@dataclass(frozen=True)
class SweepSpec:
    config: dict
    bandwidths_gbps: tuple
    latencies_ns: tuple
    topologies: tuple
    node_counts: tuple
    modes: tuple
    seeds_per_point: int
    base_seed: int

    def points(self):
        for topo in self.topologies:
            for bw in self.bandwidths_gbps:
                for lat in self.latencies_ns:
                    for nodes in self.node_counts:
                        for mode in self.modes:
                            yield (topo, bw, lat, nodes, mode)


def sweep_spec_from_config(cfg):
    base_nodes = _get(cfg, "skeleton.ranks", 64, int) // max(1, _get(cfg, "skeleton.ranks_per_node", 1, int))
    spec = SweepSpec(
        config=dict(cfg),
        bandwidths_gbps=_get_list(cfg, "sweep.bandwidths_gbps",
                                  (_get(cfg, "network.bandwidth_gbps", 100.0, float),), float),
        latencies_ns=_get_list(cfg, "sweep.latencies_ns",
                               (_get(cfg, "network.latency_ns", 90.0, float),), float),
        topologies=_get_list(cfg, "sweep.topologies",
                             (_get(cfg, "network.topology", "fat_tree"),), str),
        node_counts=_get_list(cfg, "sweep.node_counts", (max(1, base_nodes),), int),
        modes=_get_list(cfg, "sweep.modes", (_get(cfg, "sim.mode", "constant"),), str),
        seeds_per_point=_get(cfg, "sweep.seeds_per_point", 5, int),
        base_seed=_get(cfg, "sim.seed", 0, int),
    )
    if spec.seeds_per_point < 1:
        raise ConfigError("sweep.seeds_per_point must be >= 1")
    return spec


@dataclass(frozen=True)
class SweepRow:
    topology: str
    bandwidth_gbps: float
    latency_ns: float
    nodes: int
    ranks: int
    mode: str
    seeds: tuple
    totals_ns: tuple
    mean_total_ns: float
    std_total_ns: float
    mean_compute_ns: float
    mean_comm_ns: float
    rank_breakdown: tuple = ()  # (compute, comm, idle, finish) per rank, first seed


@dataclass(frozen=True)
class SweepResult:
    rows: tuple


def _run_point(payload):
    cfg, profile, point, seeds, keep_breakdown = payload
    topo, bw, lat, nodes, mode = point
    try:
        rpn = _get(cfg, "skeleton.ranks_per_node", 1, int)
        program = skeleton_from_config(cfg, ranks=nodes * rpn)
        netcfg = netcfg_from_config(cfg, topology=topo, bandwidth_gbps=bw, latency_ns=lat)
        bindings = bindings_from_config(cfg)
        default_ns = _get(cfg, "profile.default_compute_ns", 1_000_000.0, float)
        use_seeds = seeds if mode == "variable" else seeds[:1]
        reports = [
            run_skeleton(program, profile, netcfg, mode=mode, seed=s, ranks_per_node=rpn,
                         bindings=bindings, default_compute_ns=default_ns)
            for s in use_seeds
        ]
    except ManynodeError as e:
        raise type(e)(f"sweep point (topology={topo}, bandwidth={bw}, latency={lat}, "
                      f"nodes={nodes}, mode={mode}): {e}") from e
    totals = tuple(r.total_ns for r in reports)
    breakdown_rows = ()
    if keep_breakdown:
        first = reports[0]
        breakdown_rows = tuple(
            (first.rank_compute_ns[i], first.rank_comm_ns[i],
             first.total_ns - first.rank_compute_ns[i] - first.rank_comm_ns[i],
             first.rank_finish_ns[i])
            for i in range(first.ranks)
        )
    return SweepRow(
        topology=topo,
        bandwidth_gbps=bw,
        latency_ns=lat,
        nodes=nodes,
        ranks=reports[0].ranks,
        mode=mode,
        seeds=tuple(use_seeds),
        totals_ns=totals,
        mean_total_ns=float(np.mean(totals)),
        std_total_ns=float(np.std(totals, ddof=1)) if len(totals) > 1 else 0.0,
        mean_compute_ns=float(np.mean([r.mean_compute_ns for r in reports])),
        mean_comm_ns=float(np.mean([r.mean_comm_ns for r in reports])),
        rank_breakdown=breakdown_rows,
    )


def run_sweep(spec: SweepSpec, profile=None, workers=1, keep_breakdown=False) -> SweepResult:
    """Simulate every axis point; rows come back sorted by point coordinates."""
    if profile is None:
        profile = profile_from_config(spec.config)
    seeds = tuple(spec.base_seed + i for i in range(spec.seeds_per_point))
    points = sorted(spec.points())
    payloads = [(spec.config, profile, p, seeds, keep_breakdown) for p in points]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_point, payloads))
    else:
        rows = [_run_point(p) for p in payloads]
    return SweepResult(rows=tuple(rows))


# ---------------------------------------------------------------------------
# breakdowns and report files


def breakdown(report):
    """Per-rank compute/communication/idle recomputed from the event trace.

    The trace is the probe route; it must agree with the driver's own
    accounting (tested), and total = compute + communication + idle per rank.
    """
    if report.trace is None:
        raise UsageError("breakdown requires a report produced with trace=True")
    compute = [0.0] * report.ranks
    comm = [0.0] * report.ranks
    for rank, kind, t0, t1, _ in report.trace:
        if kind == "compute":
            compute[rank] += t1 - t0
        else:
            comm[rank] += t1 - t0
    return [
        {
            "compute": compute[i],
            "communication": comm[i],
            "idle": report.total_ns - compute[i] - comm[i],
        }
        for i in range(report.ranks)
    ]


def _fmt(x):
    return repr(float(x)) if isinstance(x, float) else str(x)


def _ensure_dir(path):
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as e:
        raise ManynodeError(f"cannot create output directory {path}: {e}") from None


def _write_csv(path, header, rows):
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row in rows:
                w.writerow([_fmt(v) for v in row])
    except OSError as e:
        raise ManynodeError(f"cannot write {path}: {e}") from None


SWEEP_COLUMNS = ("topology", "bandwidth_gbps", "latency_ns", "nodes", "ranks", "mode",
                 "seeds", "mean_total_ns", "std_total_ns", "mean_compute_ns", "mean_comm_ns")


def emit_reports(result: SweepResult, out_dir):
    """Write sweep.csv (one row per point) and, when breakdowns were kept,
    breakdown_<i>.csv per point. Byte-stable for identical inputs."""
    _ensure_dir(out_dir)
    rows = [
        (r.topology, r.bandwidth_gbps, r.latency_ns, r.nodes, r.ranks, r.mode,
         len(r.seeds), r.mean_total_ns, r.std_total_ns, r.mean_compute_ns, r.mean_comm_ns)
        for r in result.rows
    ]
    sweep_path = os.path.join(out_dir, "sweep.csv")
    _write_csv(sweep_path, SWEEP_COLUMNS, rows)
    written = [sweep_path]
    for i, r in enumerate(result.rows):
        if not r.rank_breakdown:
            continue
        path = os.path.join(out_dir, f"breakdown_{i:03d}.csv")
        _write_csv(
            path,
            ("rank", "compute_ns", "communication_ns", "idle_ns", "finish_ns"),
            [(j,) + row for j, row in enumerate(r.rank_breakdown)],
        )
        written.append(path)
    return written


def write_simulation_outputs(report, out_dir, traced=False):
    _ensure_dir(out_dir)
    written = []
    report_path = os.path.join(out_dir, "report.csv")
    _write_csv(
        report_path,
        ("name", "mode", "seed", "ranks", "nodes", "total_ns", "mean_compute_ns",
         "mean_comm_ns", "messages", "p2p_sent", "p2p_matched", "packets_injected",
         "packets_delivered", "collectives", "max_link_wait_ns", "events"),
        [(report.name, report.mode, report.seed, report.ranks, report.nodes,
          report.total_ns, report.mean_compute_ns, report.mean_comm_ns, report.messages,
          report.p2p_sent, report.p2p_matched, report.packets_injected,
          report.packets_delivered, report.collectives, report.max_link_wait_ns,
          report.events)],
    )
    written.append(report_path)
    ranks_path = os.path.join(out_dir, "ranks.csv")
    _write_csv(
        ranks_path,
        ("rank", "compute_ns", "comm_ns", "idle_ns", "finish_ns"),
        [(i, report.rank_compute_ns[i], report.rank_comm_ns[i],
          report.total_ns - report.rank_compute_ns[i] - report.rank_comm_ns[i],
          report.rank_finish_ns[i])
         for i in range(report.ranks)],
    )
    written.append(ranks_path)
    if traced:
        bd = breakdown(report)
        bd_path = os.path.join(out_dir, "breakdown.csv")
        _write_csv(
            bd_path,
            ("rank", "compute_ns", "communication_ns", "idle_ns"),
            [(i, d["compute"], d["communication"], d["idle"]) for i, d in enumerate(bd)],
        )
        written.append(bd_path)
        links_path = os.path.join(out_dir, "links.csv")
        _write_csv(
            links_path,
            ("link", "bytes", "max_wait_ns"),
            [(i, report.link_bytes[i], report.link_max_wait_ns[i])
             for i in range(len(report.link_bytes))],
        )
        written.append(links_path)
    return written
