"""Acceptance suite: one test per criterion, each printing a PASS line with
its measured figure and asserting the stated tolerance and runtime cap."""

import math
import time

import numpy as np
import pytest

from manynode import cli
from manynode.dse import parse_config_text, run_sweep, sweep_spec_from_config
from manynode.mpimodel import Allreduce, Compute
from manynode.netmodel import NetworkConfig
from manynode.skeletons import (
    SkeletonProgram,
    run_skeleton,
    skeleton_halo3d,
    skeleton_nn4d,
    skeleton_sweep,
    skeleton_transpose,
    skeleton_tree_dnn,
)
from manynode.timingmodel import (
    EmpiricalCdf,
    PhasePattern,
    PhaseProfile,
    SynthPhase,
    SynthSpec,
    TimingCluster,
    build_cdf,
    cluster_intervals,
    detect_pattern,
    extract_intervals,
    sample,
    synth_marker_log,
)

MS = 1_000_000.0
US = 1000.0


def uniform_profile(lo_ns, hi_ns, phase=1):
    cdf = EmpiricalCdf((float(lo_ns), float(hi_ns)), (1.0,))
    cl = TimingCluster(label=0, cdf=cdf, count=2, mean=(lo_ns + hi_ns) / 2.0)
    return {phase: PhaseProfile(clusters=(cl,), pattern=PhasePattern((0,), 1))}


def constant_profile(value_ns, phase=1):
    cl = TimingCluster(label=0, cdf=build_cdf([value_ns]), count=1, mean=float(value_ns))
    return {phase: PhaseProfile(clusters=(cl,), pattern=PhasePattern((0,), 1))}


def _report(n, name, detail):
    print(f"ACCEPTANCE {n} {name}: PASS ({detail})")


def test_criterion_01_order_statistics_synchronization():
    t0 = time.time()
    iters = 1000
    nranks = 64

    def ops(rank):
        for _ in range(iters):
            yield Compute("work")
            yield Allreduce(8)

    prog = SkeletonProgram(name="sync", ranks=nranks, make_ops=ops, slots=("work",))
    prof = uniform_profile(0.9 * MS, 1.1 * MS)
    cfg = NetworkConfig(topology="fat_tree", nodes_per_switch=24, radix=48)

    rep_var = run_skeleton(prog, prof, cfg, mode="variable", seed=7,
                           ranks_per_node=nranks, bindings={"work": 1})
    mean_iter = rep_var.total_ns / iters
    closed_form = 0.9 * MS + 0.2 * MS * (nranks / (nranks + 1))
    assert abs(mean_iter - closed_form) <= 0.01 * closed_form

    rep_const = run_skeleton(prog, prof, cfg, mode="constant", seed=7,
                             ranks_per_node=nranks, bindings={"work": 1})
    assert rep_const.total_ns == iters * 1.0 * MS  # exactly 1 ms per iteration

    elapsed = time.time() - t0
    assert elapsed < 30
    _report(1, "order-statistics synchronization",
            f"mean iter {mean_iter / MS:.6f} ms vs {closed_form / MS:.6f} ms closed form, "
            f"constant exactly 1 ms, {elapsed:.1f}s")


def test_criterion_02_pattern_recovery():
    t0 = time.time()
    unit = (0, 1, 2, 2, 2, 1, 0)
    spec = SynthSpec(
        phases={
            1: SynthPhase(
                pattern=PhasePattern(unit, 50),
                clusters={
                    0: ("normal", 8 * MS, 8 * MS * 0.005),
                    1: ("normal", 4 * MS, 4 * MS * 0.005),
                    2: ("normal", 2 * MS, 2 * MS * 0.005),
                },
            )
        }
    )
    log = synth_marker_log(spec, seed=5)
    durs = extract_intervals(log)[0][1]
    clusters, labels = cluster_intervals(durs, rel_gap=0.3)
    assert len(clusters) == 3
    pat = detect_pattern(labels)
    assert pat.unit == unit
    assert pat.repetitions == 50
    assert pat.tail == ()
    elapsed = time.time() - t0
    assert elapsed < 5
    _report(2, "pattern recovery", f"3 clusters, unit {pat.unit} x {pat.repetitions}, {elapsed:.2f}s")


def test_criterion_03_cdf_fidelity():
    t0 = time.time()
    rng = np.random.default_rng(17)
    lo, hi = 0.5 * MS, 2.5 * MS
    samples = rng.uniform(lo, hi, size=100_000)
    cdf = build_cdf(samples, max_bins=100)
    assert cdf.n_bins <= 100

    draw_rng = np.random.default_rng(18)
    draws = np.sort([sample(cdf, draw_rng) for _ in range(100_000)])
    n = len(draws)
    theo = np.clip((draws - lo) / (hi - lo), 0.0, 1.0)
    ks = max(np.max(np.arange(1, n + 1) / n - theo), np.max(theo - np.arange(0, n) / n))
    assert ks < 0.02
    mu = float(np.mean(samples))
    assert abs(float(np.mean(draws)) - mu) <= 0.01 * mu
    elapsed = time.time() - t0
    assert elapsed < 10
    _report(3, "cdf fidelity", f"KS {ks:.4f}, mean err {abs(float(np.mean(draws)) - mu) / mu:.2e}, {elapsed:.1f}s")


def test_criterion_04_topology_equivalence_small_scale():
    t0 = time.time()
    totals = {}
    for topo in ("fat_tree", "torus3d", "dragonfly"):
        cfg = NetworkConfig(topology=topo, bandwidth_gbps=100.0, latency_ns=90.0,
                            nodes_per_switch=24)
        prog = skeleton_halo3d(4, 3, 2, iterations=10, halo_bytes=65536)
        rep = run_skeleton(prog, constant_profile(1.0 * MS), cfg, mode="constant",
                           bindings={"halo": 1})
        totals[topo] = rep.total_ns
    ref = totals["fat_tree"]
    for topo, total in totals.items():
        assert abs(total - ref) <= 0.001 * ref, f"{topo} deviates: {total} vs {ref}"
    elapsed = time.time() - t0
    assert elapsed < 60
    _report(4, "topology equivalence at 24 ranks",
            f"totals {sorted(set(totals.values()))} ns, {elapsed:.1f}s")


def test_criterion_05_tree_reduction_scaling():
    t0 = time.time()
    enc = dec = 100 * US
    weight = 1024
    iters = 2
    train = 5 * MS
    cfg = NetworkConfig(topology="fat_tree", bandwidth_gbps=100.0, latency_ns=90.0)
    prof = {1: constant_profile(train, 1)[1], 2: constant_profile(enc, 2)[2]}
    depths = []
    comms = []
    for exp in range(1, 12):  # 2 .. 2048 ranks
        n = 2 ** exp
        prog = skeleton_tree_dnn(n, iterations=iters, weight_bytes=weight)
        rep = run_skeleton(prog, prof, cfg, mode="constant",
                           bindings={"train": 1, "encode": 2, "decode": 2})
        comms.append((rep.total_ns - iters * train) / iters)
        depths.append(math.ceil(math.log2(n)))
    slope, intercept = np.polyfit(depths, comms, 1)
    # per-hop analytic cost: reduce hop + bcast hop, codec plus an uncontended
    # same-leaf store-and-forward transfer each way
    ser = weight * 8 / 100.0
    per_hop = 2 * (enc + dec + 2 * (ser + 90.0))
    assert abs(slope - per_hop) <= 0.05 * per_hop
    elapsed = time.time() - t0
    assert elapsed < 300
    _report(5, "tree-reduction scaling",
            f"slope {slope / US:.2f} us/depth vs analytic {per_hop / US:.2f} us, {elapsed:.1f}s")


def test_criterion_06_bandwidth_monotonicity_and_saturation():
    t0 = time.time()
    comms = {}
    totals = []
    for gbps in (20.0, 50.0, 100.0, 200.0, 500.0, 1000.0):
        cfg = NetworkConfig(topology="fat_tree", bandwidth_gbps=gbps, latency_ns=90.0)
        prog = skeleton_transpose(64, iterations=3, elems_per_rank=2**19, element_bytes=8)
        rep = run_skeleton(prog, None, cfg, mode="constant", default_compute_ns=10 * US)
        totals.append(rep.total_ns)
        comms[gbps] = rep.mean_comm_ns
    assert all(b <= a + 1e-9 for a, b in zip(totals, totals[1:]))
    ratio = comms[20.0] / comms[100.0]
    assert abs(ratio - 5.0) <= 0.10 * 5.0
    elapsed = time.time() - t0
    assert elapsed < 300
    _report(6, "bandwidth monotonicity and saturation",
            f"totals non-increasing, comm ratio 20v100 = {ratio:.3f}, {elapsed:.1f}s")


def test_criterion_07_constant_vs_variable_both_ways():
    t0 = time.time()
    # (a) collective-synchronized: variable mean exceeds constant at 95% conf
    prof_a = uniform_profile(0.9 * MS, 1.1 * MS)
    cfg_a = NetworkConfig(topology="fat_tree", bandwidth_gbps=100.0, latency_ns=90.0)
    prog_a = skeleton_halo3d(4, 4, 4, iterations=15, halo_bytes=65536, allreduce_every=1)
    const_a = run_skeleton(prog_a, prof_a, cfg_a, mode="constant", ranks_per_node=2,
                           bindings={"halo": 1}).total_ns
    var_a = np.array([
        run_skeleton(prog_a, prof_a, cfg_a, mode="variable", seed=s, ranks_per_node=2,
                     bindings={"halo": 1}).total_ns
        for s in range(30)
    ])
    t_stat_a = (var_a.mean() - const_a) / (var_a.std(ddof=1) / math.sqrt(len(var_a)))
    assert t_stat_a > 1.699  # one-sided t(29) at 95%
    assert var_a.mean() > const_a

    # (b) bandwidth-saturated point-to-point: constant >= variable mean
    # (deep NIC saturation, 8 ranks/node; see notes on regime sensitivity)
    prof_b = uniform_profile(8 * MS, 12 * MS)
    cfg_b = NetworkConfig(topology="fat_tree", bandwidth_gbps=20.0, latency_ns=90.0)
    prog_b = skeleton_nn4d(2, iterations=12, msg_bytes=8 * 2**20)
    const_b = run_skeleton(prog_b, prof_b, cfg_b, mode="constant", ranks_per_node=8,
                           bindings={"lattice": 1}).total_ns
    var_b = np.array([
        run_skeleton(prog_b, prof_b, cfg_b, mode="variable", seed=s, ranks_per_node=8,
                     bindings={"lattice": 1}).total_ns
        for s in range(30)
    ])
    assert const_b >= var_b.mean()

    elapsed = time.time() - t0
    assert elapsed < 600
    _report(7, "constant-vs-variable ordering both ways",
            f"(a) var-const = +{(var_a.mean() - const_a) / MS:.2f} ms (t={t_stat_a:.1f}); "
            f"(b) const-var = +{(const_b - var_b.mean()) / MS:.2f} ms; {elapsed:.0f}s")


BASE_CFG = """
network.topology = fat_tree
network.bandwidth_gbps = 100
network.latency_ns = 90
skeleton.name = halo3d
skeleton.ranks = 64
skeleton.iterations = 5
skeleton.halo3d.halo_bytes = 65536
profile.default_compute_ns = 1000000
sim.mode = variable
sim.seed = 9
sweep.bandwidths_gbps = 50,100
sweep.seeds_per_point = 3
"""


def test_criterion_08_determinism_byte_identical(tmp_path):
    t0 = time.time()
    cfgfile = tmp_path / "cfg.txt"
    cfgfile.write_text(BASE_CFG)
    for sub in ("s1", "s2"):
        assert cli.main(["simulate", "--config", str(cfgfile), "--out", str(tmp_path / sub)]) == 0
    for name in ("report.csv", "ranks.csv"):
        assert (tmp_path / "s1" / name).read_bytes() == (tmp_path / "s2" / name).read_bytes()
    for sub in ("w1", "w2"):
        assert cli.main(["sweep", "--config", str(cfgfile), "--out", str(tmp_path / sub)]) == 0
    assert (tmp_path / "w1" / "sweep.csv").read_bytes() == (tmp_path / "w2" / "sweep.csv").read_bytes()
    elapsed = time.time() - t0
    assert elapsed < 60
    _report(8, "determinism", f"simulate and sweep outputs byte-identical, {elapsed:.1f}s")


def test_criterion_09_conservation_suite():
    t0 = time.time()
    cfg = NetworkConfig(topology="fat_tree", bandwidth_gbps=100.0, latency_ns=90.0)
    prof = uniform_profile(0.9 * MS, 1.1 * MS)
    programs = [
        (skeleton_halo3d(4, 4, 4, iterations=4, halo_bytes=65536), "halo"),
        (skeleton_sweep(8, 8, iterations=2, angles=4, chunk_bytes=16384), "sweep"),
        (skeleton_transpose(64, iterations=2, elems_per_rank=2**17), "fft_rows"),
        (skeleton_tree_dnn(64, iterations=3, weight_bytes=2**20), "train"),
        (skeleton_nn4d(3, iterations=2, msg_bytes=2**18), "lattice"),  # 81 ranks
    ]
    checked = []
    for prog, slot in programs:
        rep = run_skeleton(prog, prof, cfg, mode="variable", seed=3, ranks_per_node=2,
                           bindings={slot: 1}, trace=True)
        assert rep.packets_injected == rep.packets_delivered, prog.name
        assert rep.p2p_sent == rep.p2p_matched, prog.name
        assert rep.sync_violation_ns <= 1e-9, prog.name
        for i in range(rep.ranks):
            idle = rep.total_ns - rep.rank_compute_ns[i] - rep.rank_comm_ns[i]
            assert idle >= -1e-6, (prog.name, i)
            assert rep.rank_compute_ns[i] + rep.rank_comm_ns[i] + idle == pytest.approx(rep.total_ns)
        ends = max(t1 for (_, _, _, t1, _) in rep.trace)
        assert ends == pytest.approx(rep.total_ns)
        checked.append(prog.name)
    elapsed = time.time() - t0
    assert elapsed < 120
    _report(9, "conservation suite", f"skeletons {checked}, {elapsed:.0f}s")


def test_criterion_10_scale_smoke_4096_ranks():
    t0 = time.time()
    cfg = NetworkConfig(topology="fat_tree", bandwidth_gbps=100.0, latency_ns=90.0,
                        nodes_per_switch=24, radix=48)
    prog = skeleton_transpose(4096, iterations=1, elems_per_rank=2**21, element_bytes=8)
    rep = run_skeleton(prog, None, cfg, mode="constant", ranks_per_node=2,
                       default_compute_ns=1.0 * MS)
    elapsed = time.time() - t0
    assert elapsed < 1800
    assert rep.nodes == 2048
    assert rep.packets_injected == rep.packets_delivered
    assert rep.messages == 2 * 4096 * 4095
    _report(10, "scale smoke at 4096 ranks",
            f"{rep.messages} messages, {rep.events} events, sim total {rep.total_ns / MS:.1f} ms, "
            f"wall {elapsed:.0f}s")
