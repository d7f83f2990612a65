"""Parameterized communication skeletons and the replay driver.

A skeleton is a per-rank generator of compute and communication ops that
reproduces an application's communication pattern at any rank count. Compute
ops name abstract slots; a binding table maps slots to timing-profile phases,
and each rank replays its phase pattern either as cluster means (constant
mode) or as Monte-Carlo draws from the cluster CDFs (variable mode).

Archetypes: 3-D halo exchange with periodic allreduce (HPCG-like), 2-D
wavefront sweep (SNAP-like), transpose with alltoall (FFT-like), binary-tree
weight reduction with codec delays (DNN-training-like), and 4-D periodic
nearest neighbor (lattice-QCD-like).
"""

import gc
from dataclasses import dataclass, field
from math import ceil

import numpy as np

from .engine import DEFAULT_EVENT_CAP, Simulator
from .errors import ConfigError, ProfileError
from .mpimodel import (
    Allreduce,
    Alltoall,
    BcastTree,
    Compute,
    Irecv,
    Isend,
    MpiRuntime,
    Recv,
    ReduceTree,
    Send,
    WaitAll,
)
from .netmodel import L_BYTES, L_MAX_WAIT, Network, build_topology
from .timingmodel import sample

MODES = ("constant", "variable")


class ComputeReplayer:
    """Per-rank replay state: one pattern cursor per profile phase."""

    def __init__(self, profile, bindings, mode, default_ns):
        if mode not in MODES:
            raise ConfigError(f"timing mode must be one of {MODES}, got {mode!r}")
        self.profile = profile or {}
        self.bindings = bindings or {}
        self.mode = mode
        self.default_ns = float(default_ns)
        self._cursors = {}

    def next_for_phase(self, phase_id, rng, mode=None):
        pp = self.profile.get(phase_id)
        if pp is None:
            raise ProfileError(f"phase {phase_id} not in profile")
        k = self._cursors.get(phase_id, 0)
        self._cursors[phase_id] = k + 1
        cluster = pp.clusters[pp.pattern.label_at(k)]
        if (mode or self.mode) == "constant":
            return cluster.mean
        return sample(cluster.cdf, rng)

    def next_for_slot(self, slot, rng):
        phase = self.bindings.get(slot)
        if phase is None:
            return self.default_ns
        return self.next_for_phase(phase, rng)


def next_compute_time(replayer: ComputeReplayer, phase_id, rng, mode=None):
    """Advance the phase's pattern cursor and return its next duration (ns)."""
    return replayer.next_for_phase(phase_id, rng, mode=mode)


@dataclass(frozen=True)
class SkeletonProgram:
    name: str
    ranks: int
    make_ops: object  # callable(rank) -> iterator of ops
    slots: tuple = ()
    meta: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# archetype generators


def skeleton_halo3d(px, py, pz, iterations, halo_bytes, allreduce_every=1, allreduce_bytes=8,
                    stencil=6):
    """Non-periodic 3-D halo exchange (6-face default, 26 with corners and
    edges) plus periodic dot-product allreduces; compute slot 'halo'."""
    if px < 1 or py < 1 or pz < 1 or iterations < 1:
        raise ConfigError("halo3d needs positive grid dims and iterations")
    if stencil not in (6, 26):
        raise ConfigError("halo3d stencil must be 6 or 26")
    ranks = px * py * pz
    if stencil == 6:
        dirs = ((-1, 0, 0), (1, 0, 0), (0, -1, 0), (0, 1, 0), (0, 0, -1), (0, 0, 1))
    else:
        dirs = tuple(
            (dx, dy, dz)
            for dx in (-1, 0, 1) for dy in (-1, 0, 1) for dz in (-1, 0, 1)
            if (dx, dy, dz) != (0, 0, 0)
        )
    opposite = {i: dirs.index((-d[0], -d[1], -d[2])) for i, d in enumerate(dirs)}

    def neighbors(rank):
        x = rank % px
        y = (rank // px) % py
        z = rank // (px * py)
        out = []
        for i, (dx, dy, dz) in enumerate(dirs):
            nx, ny, nz = x + dx, y + dy, z + dz
            if 0 <= nx < px and 0 <= ny < py and 0 <= nz < pz:
                out.append((i, nx + px * (ny + py * nz)))
        return out

    def ops(rank):
        nbrs = neighbors(rank)
        for it in range(iterations):
            yield Compute("halo")
            handles = []
            for i, nb in nbrs:
                h = ("r", it, i)
                yield Irecv(h, nb, (it, opposite[i]))
                handles.append(h)
            for i, nb in nbrs:
                h = ("s", it, i)
                yield Isend(h, nb, (it, i), halo_bytes)
                handles.append(h)
            if handles:
                yield WaitAll(handles)
            if allreduce_every and (it + 1) % allreduce_every == 0:
                yield Allreduce(allreduce_bytes)

    return SkeletonProgram(
        name="halo3d", ranks=ranks, make_ops=ops, slots=("halo",),
        meta=dict(px=px, py=py, pz=pz, iterations=iterations, halo_bytes=halo_bytes,
                  allreduce_every=allreduce_every, allreduce_bytes=allreduce_bytes,
                  stencil=stencil),
    )


def skeleton_sweep(px, py, iterations, angles, chunk_bytes):
    """Diagonal wavefront over a 2-D grid, one sweep per corner per angle;
    compute slot 'sweep'."""
    if px < 1 or py < 1 or iterations < 1 or angles < 1:
        raise ConfigError("sweep needs positive grid dims, iterations and angles")
    ranks = px * py
    corner_dirs = ((1, 1), (-1, 1), (1, -1), (-1, -1))

    def ops(rank):
        i, j = rank % px, rank // px
        for it in range(iterations):
            for a in range(angles):
                dx, dy = corner_dirs[a % 4]
                ui = i - dx
                if 0 <= ui < px:
                    yield Recv(ui + px * j, (it, a, 0))
                uj = j - dy
                if 0 <= uj < py:
                    yield Recv(i + px * uj, (it, a, 1))
                yield Compute("sweep")
                di = i + dx
                if 0 <= di < px:
                    yield Send(di + px * j, (it, a, 0), chunk_bytes)
                dj = j + dy
                if 0 <= dj < py:
                    yield Send(i + px * dj, (it, a, 1), chunk_bytes)

    return SkeletonProgram(
        name="sweep", ranks=ranks, make_ops=ops, slots=("sweep",),
        meta=dict(px=px, py=py, iterations=iterations, angles=angles, chunk_bytes=chunk_bytes),
    )


def skeleton_transpose(ranks, iterations, elems_per_rank, element_bytes=8, window=64):
    """Compute / alltoall / compute / alltoall per iteration (row and column
    transform phases); slots 'fft_rows' and 'fft_cols'.

    window bounds each rank's undelivered alltoall sends (inert below
    window+2 ranks)."""
    if ranks < 1 or iterations < 1 or elems_per_rank < 1:
        raise ConfigError("transpose needs positive ranks, iterations, elems_per_rank")
    per_pair = max(1, elems_per_rank * element_bytes // ranks) if ranks > 1 else 0

    def ops(rank):
        for _ in range(iterations):
            yield Compute("fft_rows")
            yield Alltoall(per_pair, window=window)
            yield Compute("fft_cols")
            yield Alltoall(per_pair, window=window)

    return SkeletonProgram(
        name="transpose", ranks=ranks, make_ops=ops, slots=("fft_rows", "fft_cols"),
        meta=dict(iterations=iterations, elems_per_rank=elems_per_rank,
                  element_bytes=element_bytes, per_pair_size=per_pair, window=window),
    )


def skeleton_tree_dnn(ranks, iterations, weight_bytes, fanout=2,
                      encode_slot="encode", decode_slot="decode"):
    """Weight reduction to rank 0 through a fanout-ary tree with per-hop
    encode/decode delays, then broadcast back; compute slot 'train'."""
    if ranks < 1 or iterations < 1 or weight_bytes < 0:
        raise ConfigError("tree_dnn needs positive ranks and iterations")

    def ops(rank):
        for _ in range(iterations):
            yield Compute("train")
            yield ReduceTree(weight_bytes, root=0, fanout=fanout,
                             encode_slot=encode_slot, decode_slot=decode_slot)
            yield BcastTree(weight_bytes, root=0, fanout=fanout,
                            encode_slot=encode_slot, decode_slot=decode_slot)

    return SkeletonProgram(
        name="tree_dnn", ranks=ranks, make_ops=ops,
        slots=("train", encode_slot, decode_slot),
        meta=dict(iterations=iterations, weight_bytes=weight_bytes, fanout=fanout),
    )


def skeleton_nn4d(p, iterations, msg_bytes):
    """Periodic 4-D nearest-neighbor exchange (p^4 ranks, 8 partners each)
    via non-blocking pairs; compute slot 'lattice'."""
    if p < 1 or iterations < 1:
        raise ConfigError("nn4d needs p >= 1 and iterations >= 1")
    ranks = p ** 4

    def coord(rank):
        return (rank % p, (rank // p) % p, (rank // p**2) % p, rank // p**3)

    def rank_of(c):
        return c[0] + p * (c[1] + p * (c[2] + p * c[3]))

    def ops(rank):
        c = coord(rank)
        nbrs = []
        for dim in range(4):
            for s, step in enumerate((1, -1)):
                nc = list(c)
                nc[dim] = (nc[dim] + step) % p
                nb = rank_of(nc)
                if nb != rank:
                    nbrs.append((dim, s, nb))
        for it in range(iterations):
            yield Compute("lattice")
            handles = []
            for dim, s, nb in nbrs:
                h = ("r", it, dim, s)
                yield Irecv(h, nb, (it, dim, 1 - s))
                handles.append(h)
            for dim, s, nb in nbrs:
                h = ("s", it, dim, s)
                yield Isend(h, nb, (it, dim, s), msg_bytes)
                handles.append(h)
            if handles:
                yield WaitAll(handles)

    return SkeletonProgram(
        name="nn4d", ranks=ranks, make_ops=ops, slots=("lattice",),
        meta=dict(p=p, iterations=iterations, msg_bytes=msg_bytes),
    )


# ---------------------------------------------------------------------------
# driver


@dataclass(frozen=True)
class SimReport:
    name: str
    mode: str
    seed: int
    ranks: int
    nodes: int
    total_ns: float
    rank_compute_ns: tuple
    rank_comm_ns: tuple
    rank_finish_ns: tuple
    messages: int
    p2p_sent: int
    p2p_matched: int
    packets_injected: int
    packets_delivered: int
    collectives: int
    sync_violation_ns: float
    link_max_wait_ns: tuple
    link_bytes: tuple
    events: int
    trace: tuple = None

    @property
    def max_link_wait_ns(self):
        return max(self.link_max_wait_ns) if self.link_max_wait_ns else 0.0

    @property
    def mean_compute_ns(self):
        return sum(self.rank_compute_ns) / self.ranks

    @property
    def mean_comm_ns(self):
        return sum(self.rank_comm_ns) / self.ranks


def run_skeleton(program: SkeletonProgram, profile, netcfg, mode="constant", seed=0,
                 ranks_per_node=1, bindings=None, default_compute_ns=1_000_000.0,
                 rank_profiles=None, trace=False, max_events=DEFAULT_EVENT_CAP) -> SimReport:
    """Execute every rank's op stream to completion; deterministic per
    (program, profile, netcfg, mode, seed).

    rank_profiles optionally maps a rank to its own profile (the profile of
    its cluster's representative); unmapped ranks use `profile`.
    """
    if ranks_per_node < 1:
        raise ConfigError("ranks_per_node must be >= 1")
    nodes = ceil(program.ranks / ranks_per_node)
    topo = build_topology(netcfg, nodes)
    sim = Simulator(max_events=max_events)
    net = Network(topo, sim)
    rng = np.random.default_rng(seed)
    rank_profiles = rank_profiles or {}
    replayers = [
        ComputeReplayer(rank_profiles.get(r, profile), bindings, mode, default_compute_ns)
        for r in range(program.ranks)
    ]

    def compute_fn(rank, slot):
        return replayers[rank].next_for_slot(slot, rng)

    tr = [] if trace else None
    rt = MpiRuntime(sim, net, program.ranks, ranks_per_node, compute_fn, tr)
    rt.start(program.make_ops)
    # the event loop allocates heavily but acyclically; at large scale the
    # cyclic collector rescanning millions of live messages dominates runtime
    gc_was_on = gc.isenabled()
    if gc_was_on:
        gc.disable()
    try:
        total = sim.run_until_idle()
    finally:
        if gc_was_on:
            gc.enable()
    rt.finalize()
    return SimReport(
        name=program.name,
        mode=mode,
        seed=seed,
        ranks=program.ranks,
        nodes=nodes,
        total_ns=total,
        rank_compute_ns=tuple(r.compute_ns for r in rt.ranks),
        rank_comm_ns=tuple(r.comm_ns for r in rt.ranks),
        rank_finish_ns=tuple(r.finish for r in rt.ranks),
        messages=net.messages,
        p2p_sent=rt.p2p_sent,
        p2p_matched=rt.p2p_matched,
        packets_injected=net.packets_injected,
        packets_delivered=net.packets_delivered,
        collectives=rt.collectives,
        sync_violation_ns=rt.sync_violation_ns,
        link_max_wait_ns=tuple(l[L_MAX_WAIT] for l in net.links),
        link_bytes=tuple(l[L_BYTES] for l in net.links),
        events=sim.dispatched,
        trace=tuple(tr) if tr is not None else None,
    )


# -- grid helpers for rank-count sweeps


def balanced_grid3(n):
    """Near-cubic (px, py, pz) with px*py*pz == n, px >= py >= pz."""
    best = None
    for pz in range(1, int(round(n ** (1 / 3))) + 2):
        if n % pz:
            continue
        m = n // pz
        for py in range(pz, int(m ** 0.5) + 1):
            if m % py:
                continue
            px = m // py
            if px < py:
                continue
            cand = (px, py, pz)
            if best is None or (px - pz) < (best[0] - best[2]):
                best = cand
    if best is None:
        best = (n, 1, 1)
    return best


def balanced_grid2(n):
    """Near-square (px, py) with px*py == n, px >= py."""
    for py in range(int(n ** 0.5), 0, -1):
        if n % py == 0:
            return (n // py, py)
    return (n, 1)
