"""Compute-phase timing profiles extracted from marker logs.

A marker log records a pre and a post timestamp around every communication
call of every rank. The interval between one call's post marker and the next
call's pre marker is a compute phase occurrence; the communication window
itself (pre to post of the same call) is excluded, since the network model
replays it. Per phase we cluster multimodal durations, detect the repeating
cluster-label pattern, and compress each cluster into a bounded-bin
cumulative distribution for Monte-Carlo replay.
"""

import csv
import math
from bisect import bisect_left
from dataclasses import dataclass
from typing import Iterable, NamedTuple

import numpy as np

from .errors import ParseError, ValidationError

DEFAULT_REL_GAP = 0.3
DEFAULT_MAX_BINS = 100

# Bins narrower than this (ns) encode an exact repeated observation; sampling
# returns the left edge instead of interpolating.
POINT_BIN_MAX_WIDTH = 1e-3


class MarkerRecord(NamedTuple):
    rank: int
    marker: int
    side: str  # "pre" | "post"
    timestamp_ns: int


@dataclass(frozen=True)
class EmpiricalCdf:
    """Piecewise-linear CDF over strictly ascending bin edges.

    cum[j] is P(X <= edges[j+1]); bins with equal consecutive cum values carry
    zero mass (gaps between exact observations) and are never sampled.
    """

    edges: tuple
    cum: tuple

    def __post_init__(self):
        if len(self.edges) < 2:
            raise ValidationError("cdf needs at least two edges")
        if len(self.cum) != len(self.edges) - 1:
            raise ValidationError("cum length must be edge count - 1")
        if any(b <= a for a, b in zip(self.edges, self.edges[1:])):
            raise ValidationError("edges must be strictly ascending")
        if any(b < a for a, b in zip(self.cum, self.cum[1:])):
            raise ValidationError("cum must be nondecreasing")
        if not (0.0 < self.cum[0] <= 1.0) or self.cum[-1] != 1.0:
            raise ValidationError("cum must lie in (0, 1] and end at exactly 1")

    @property
    def n_bins(self):
        return len(self.edges) - 1

    def mean(self) -> float:
        """Implied mean: point bins at their left edge, wide bins at midpoint."""
        total = 0.0
        prev = 0.0
        for j, c in enumerate(self.cum):
            mass = c - prev
            prev = c
            if mass <= 0.0:
                continue
            lo, hi = self.edges[j], self.edges[j + 1]
            total += mass * (lo if hi - lo <= POINT_BIN_MAX_WIDTH else 0.5 * (lo + hi))
        return total


@dataclass(frozen=True)
class TimingCluster:
    label: int
    cdf: EmpiricalCdf
    count: int
    mean: float

    def __post_init__(self):
        if self.count < 1:
            raise ValidationError("cluster count must be >= 1")
        if not (self.cdf.edges[0] <= self.mean <= self.cdf.edges[-1]):
            raise ValidationError("cluster mean outside its cdf support")


@dataclass(frozen=True)
class PhasePattern:
    """Smallest repeating unit of a cluster-label sequence plus residual tail."""

    unit: tuple
    repetitions: int
    tail: tuple = ()

    def __post_init__(self):
        if not self.unit or self.repetitions < 1:
            raise ValidationError("pattern needs a nonempty unit and repetitions >= 1")

    def expand(self) -> tuple:
        return self.unit * self.repetitions + self.tail

    @property
    def length(self):
        return len(self.unit) * self.repetitions + len(self.tail)

    def label_at(self, k: int) -> int:
        """Label of the k-th occurrence; wraps modulo the full expansion."""
        k %= self.length
        body = len(self.unit) * self.repetitions
        if k < body:
            return self.unit[k % len(self.unit)]
        return self.tail[k - body]


@dataclass(frozen=True)
class PhaseProfile:
    clusters: tuple  # TimingCluster, indexed by label
    pattern: PhasePattern

    def __post_init__(self):
        labels = {c.label for c in self.clusters}
        used = set(self.pattern.expand())
        if not used <= labels:
            raise ValidationError(f"pattern references unknown labels {sorted(used - labels)}")


# A timing profile maps phase_id -> PhaseProfile.
TimingProfile = dict


# ---------------------------------------------------------------------------
# Marker-log ingestion


def extract_intervals(records: Iterable[MarkerRecord]) -> dict:
    """Per rank, per phase, the compute durations in execution order.

    The duration is pre(call n+1) - post(call n); the phase id is the marker
    of the following call. Returns {rank: {phase_id: [ns, ...]}}.
    """
    per_rank = {}
    for rec in records:
        per_rank.setdefault(rec.rank, []).append(rec)
    out = {}
    for rank, recs in per_rank.items():
        expect_pre = True
        last_ts = None
        last_post = None
        phases = {}
        for i, rec in enumerate(recs):
            if last_ts is not None and rec.timestamp_ns < last_ts:
                raise ValidationError(
                    f"rank {rank} record {i}: timestamps decrease ({rec.timestamp_ns} < {last_ts})"
                )
            last_ts = rec.timestamp_ns
            if rec.side == "pre":
                if not expect_pre:
                    raise ValidationError(f"rank {rank} record {i}: pre marker while a call is open")
                if last_post is not None:
                    phases.setdefault(rec.marker, []).append(rec.timestamp_ns - last_post.timestamp_ns)
                expect_pre = False
                open_marker = rec.marker
            elif rec.side == "post":
                if expect_pre:
                    raise ValidationError(f"rank {rank} record {i}: post marker without matching pre")
                if rec.marker != open_marker:
                    raise ValidationError(
                        f"rank {rank} record {i}: post marker {rec.marker} does not match pre {open_marker}"
                    )
                last_post = rec
                expect_pre = True
            else:
                raise ValidationError(f"rank {rank} record {i}: bad side {rec.side!r}")
        if not expect_pre:
            raise ValidationError(f"rank {rank}: log ends with an unmatched pre marker")
        out[rank] = phases
    return out


def load_marker_log(path) -> list:
    expected = ["rank", "marker", "side", "timestamp_ns"]
    records = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != expected:
            raise ParseError(f"{path}: expected header {','.join(expected)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise ParseError(f"{path}: line {lineno}: expected 4 fields, got {len(row)}")
            try:
                rec = MarkerRecord(int(row[0]), int(row[1]), row[2].strip(), int(row[3]))
            except ValueError as e:
                raise ParseError(f"{path}: line {lineno}: {e}") from None
            if rec.side not in ("pre", "post"):
                raise ParseError(f"{path}: line {lineno}: side must be pre or post")
            records.append(rec)
    return records


def save_marker_log(records, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rank", "marker", "side", "timestamp_ns"])
        for rec in records:
            w.writerow([rec.rank, rec.marker, rec.side, rec.timestamp_ns])


# ---------------------------------------------------------------------------
# 1-D multimodal clustering and pattern detection


def cluster_intervals(durations, rel_gap: float = DEFAULT_REL_GAP, max_bins: int = DEFAULT_MAX_BINS):
    """Split sorted durations at relative gaps > rel_gap into clusters.

    Labels are assigned by descending cluster mean (label 0 = slowest mode).
    Returns (clusters, labels-in-execution-order).
    """
    durations = list(durations)
    if not durations:
        raise ValidationError("cannot cluster an empty interval series")
    if rel_gap <= 0:
        raise ValidationError("rel_gap must be positive")
    vals = sorted(durations)
    groups = [[vals[0]]]
    for a, b in zip(vals, vals[1:]):
        if b - a > rel_gap * a:
            groups.append([b])
        else:
            groups[-1].append(b)
    # value-ascending groups -> labels by mean descending
    order = sorted(range(len(groups)), key=lambda g: -float(np.mean(groups[g])))
    label_of_group = {g: lbl for lbl, g in enumerate(order)}
    value_label = {}
    clusters = [None] * len(groups)
    for g, members in enumerate(groups):
        lbl = label_of_group[g]
        clusters[lbl] = TimingCluster(
            label=lbl,
            cdf=build_cdf(members, max_bins=max_bins),
            count=len(members),
            mean=float(np.mean(members)),
        )
        for v in members:
            value_label[v] = lbl
    labels = [value_label[v] for v in durations]
    return clusters, labels


def detect_pattern(labels) -> PhasePattern:
    """Smallest period p with labels[i] == labels[i mod p]; tail is the partial last unit."""
    seq = tuple(labels)
    n = len(seq)
    if n == 0:
        raise ValidationError("cannot detect a pattern in an empty sequence")
    for p in range(1, n):
        if all(seq[i] == seq[i % p] for i in range(p, n)):
            reps = n // p
            return PhasePattern(unit=seq[:p], repetitions=reps, tail=seq[reps * p:])
    return PhasePattern(unit=seq, repetitions=1, tail=())


# ---------------------------------------------------------------------------
# CDF compression and sampling


def _point_eps(v: float, next_lo=None) -> float:
    eps = max(1e-6, 4.0 * float(np.spacing(abs(v) + 1.0)))
    if next_lo is not None and next_lo > v:
        eps = min(eps, (next_lo - v) / 4.0)
    return eps


def _assemble(segments, n: int) -> EmpiricalCdf:
    """segments: ascending ('point', v, count) | ('span', lo, hi, count)."""
    edges = []
    cum = []
    acc = 0
    for idx, seg in enumerate(segments):
        if seg[0] == "point":
            lo = seg[1]
            next_lo = segments[idx + 1][1] if idx + 1 < len(segments) else None
            hi = lo + _point_eps(lo, next_lo)
            cnt = seg[2]
        else:
            _, lo, hi, cnt = seg
        if not edges:
            edges.append(lo)
        elif lo > edges[-1]:
            edges.append(lo)  # zero-mass gap bin between exact observations
            cum.append(acc / n)
        acc += cnt
        edges.append(hi)
        cum.append(acc / n)
    cum[-1] = 1.0
    return EmpiricalCdf(tuple(float(e) for e in edges), tuple(cum))


def _quantile_spans(vals, cnts, bins):
    """Equal-probability spans over one run of distinct values; edges sit on
    empirical quantiles (smallest value whose cumulative count crosses j/bins)."""
    total = sum(cnts)
    segs = []
    lo = vals[0]
    acc = 0
    flushed = 0
    closed = 0
    for v, c in zip(vals, cnts):
        acc += c
        if v > lo and acc * bins >= (closed + 1) * total:
            segs.append(("span", lo, v, acc - flushed))
            flushed = acc
            lo = v
            closed += 1
    if flushed < total:
        if vals[-1] > lo:
            segs.append(("span", lo, vals[-1], total - flushed))
        else:
            segs.append(("point", lo, total - flushed))
    return segs


def _segments(values, counts, n, max_bins, run_budget, with_atoms):
    segs = []
    run_v = []
    run_c = []
    atom_count = 2.0 * n / max_bins if with_atoms else math.inf
    atom_idx = [i for i in range(len(values)) if counts[i] >= atom_count]
    atom_set = set(atom_idx)
    non_atom_total = n - sum(counts[i] for i in atom_idx)

    def flush():
        if not run_v:
            return
        frac = sum(run_c) / non_atom_total if non_atom_total else 0.0
        segs.extend(_quantile_spans(run_v, run_c, max(1, round(frac * run_budget))))
        run_v.clear()
        run_c.clear()

    for i in range(len(values)):
        if i in atom_set:
            flush()
            segs.append(("point", float(values[i]), int(counts[i])))
        else:
            run_v.append(float(values[i]))
            run_c.append(int(counts[i]))
    flush()
    return segs


def build_cdf(durations, max_bins: int = DEFAULT_MAX_BINS) -> EmpiricalCdf:
    """Compress samples into at most max_bins probability bins.

    Few distinct values are stored exactly as point bins; otherwise
    equal-probability (quantile) binning is used, with values that hold at
    least 2/max_bins of the mass still pinned as exact points.
    """
    durations = list(durations)
    if not durations:
        raise ValidationError("cannot build a cdf from no samples")
    if max_bins < 1:
        raise ValidationError("max_bins must be >= 1")
    xs = np.sort(np.asarray(durations, dtype=float))
    n = len(xs)
    values, counts = np.unique(xs, return_counts=True)
    counts = [int(c) for c in counts]
    k = len(values)

    if 2 * k <= max_bins + 1:
        return _assemble([("point", float(values[i]), counts[i]) for i in range(k)], n)

    budget = max(1, max_bins - 2 * sum(1 for c in counts if c >= 2.0 * n / max_bins))
    for _ in range(4):
        cdf = _assemble(_segments(values, counts, n, max_bins, budget, True), n)
        if cdf.n_bins <= max_bins:
            return cdf
        budget = max(1, budget - (cdf.n_bins - max_bins))
    # pathological atom layout: fall back to plain quantile binning
    return _assemble(_quantile_spans([float(v) for v in values], counts, max_bins - 1), n)


def sample(cdf: EmpiricalCdf, rng) -> float:
    """Inverse-transform draw with linear interpolation inside wide bins."""
    u = 1.0 - rng.random()  # (0, 1]
    j = bisect_left(cdf.cum, u)
    e0 = cdf.edges[j]
    e1 = cdf.edges[j + 1]
    if e1 - e0 <= POINT_BIN_MAX_WIDTH:
        return e0
    c0 = cdf.cum[j - 1] if j else 0.0
    return e0 + (u - c0) / (cdf.cum[j] - c0) * (e1 - e0)


def constant_value(cluster: TimingCluster) -> float:
    """Constant-timing baseline: the cluster mean, replayed every occurrence."""
    return cluster.mean


# ---------------------------------------------------------------------------
# Profile assembly and serialization


def build_phase_profile(durations, rel_gap=DEFAULT_REL_GAP, max_bins=DEFAULT_MAX_BINS) -> PhaseProfile:
    clusters, labels = cluster_intervals(durations, rel_gap=rel_gap, max_bins=max_bins)
    return PhaseProfile(clusters=tuple(clusters), pattern=detect_pattern(labels))


def build_profile(intervals_by_phase: dict, rel_gap=DEFAULT_REL_GAP, max_bins=DEFAULT_MAX_BINS) -> TimingProfile:
    if not intervals_by_phase:
        raise ValidationError("no phases to profile")
    return {
        phase: build_phase_profile(durs, rel_gap=rel_gap, max_bins=max_bins)
        for phase, durs in sorted(intervals_by_phase.items())
    }


def serialize_profile(profile: TimingProfile) -> str:
    lines = ["manynode-profile v1"]
    for phase in sorted(profile):
        pp = profile[phase]
        lines.append(f"phase {phase}")
        pat = pp.pattern
        lines.append(
            "pattern unit=%s reps=%d tail=%s"
            % (",".join(map(str, pat.unit)), pat.repetitions, ",".join(map(str, pat.tail)))
        )
        for c in pp.clusters:
            lines.append(f"cluster label={c.label} count={c.count} mean={c.mean!r}")
            lines.append("edges " + " ".join(repr(e) for e in c.cdf.edges))
            lines.append("cum " + " ".join(repr(p) for p in c.cdf.cum))
    return "\n".join(lines) + "\n"


def parse_profile(text: str) -> TimingProfile:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != "manynode-profile v1":
        raise ParseError("not a manynode-profile v1 file")
    profile = {}
    phase = None
    clusters = None
    pattern = None
    i = 1

    def close_phase():
        if phase is not None:
            if pattern is None or not clusters:
                raise ParseError(f"phase {phase}: missing pattern or clusters")
            profile[phase] = PhaseProfile(clusters=tuple(clusters), pattern=pattern)

    while i < len(lines):
        ln = lines[i]
        if ln.startswith("phase "):
            close_phase()
            phase = int(ln.split()[1])
            clusters = []
            pattern = None
            i += 1
        elif ln.startswith("pattern "):
            fields = dict(part.split("=", 1) for part in ln.split()[1:])
            unit = tuple(int(x) for x in fields["unit"].split(",") if x)
            tail = tuple(int(x) for x in fields["tail"].split(",") if x)
            pattern = PhasePattern(unit=unit, repetitions=int(fields["reps"]), tail=tail)
            i += 1
        elif ln.startswith("cluster "):
            fields = dict(part.split("=", 1) for part in ln.split()[1:])
            if i + 2 >= len(lines) or not lines[i + 1].startswith("edges ") or not lines[i + 2].startswith("cum "):
                raise ParseError(f"cluster at line {i}: expected edges and cum lines")
            edges = tuple(float(x) for x in lines[i + 1].split()[1:])
            cum = tuple(float(x) for x in lines[i + 2].split()[1:])
            clusters.append(
                TimingCluster(
                    label=int(fields["label"]),
                    cdf=EmpiricalCdf(edges, cum),
                    count=int(fields["count"]),
                    mean=float(fields["mean"]),
                )
            )
            i += 3
        else:
            raise ParseError(f"unexpected profile line: {ln!r}")
    close_phase()
    if not profile:
        raise ParseError("profile contains no phases")
    return profile


def save_profile(profile: TimingProfile, path):
    with open(path, "w") as fh:
        fh.write(serialize_profile(profile))


def load_profile(path) -> TimingProfile:
    with open(path) as fh:
        return parse_profile(fh.read())


# ---------------------------------------------------------------------------
# Synthetic marker logs (stand-in for the detailed node simulator)

_DISTS = {"constant": 1, "uniform": 2, "normal": 2}


@dataclass(frozen=True)
class SynthPhase:
    pattern: PhasePattern
    clusters: dict  # label -> ("constant", v) | ("uniform", lo, hi) | ("normal", mu, sigma)


@dataclass(frozen=True)
class SynthSpec:
    phases: dict  # phase_id -> SynthPhase, in call order
    ranks: int = 1
    comm_ns: int = 0


def _validate_synth(spec: SynthSpec):
    if not spec.phases:
        raise ValidationError("synth spec needs at least one phase")
    if spec.ranks < 1 or spec.comm_ns < 0:
        raise ValidationError("synth spec: ranks >= 1 and comm_ns >= 0 required")
    lengths = set()
    for phase, ps in spec.phases.items():
        if not isinstance(phase, int) or phase < 0:
            raise ValidationError(f"synth phase ids must be nonnegative ints, got {phase!r}")
        lengths.add(ps.pattern.length)
        for lbl in set(ps.pattern.expand()):
            dist = ps.clusters.get(lbl)
            if dist is None:
                raise ValidationError(f"phase {phase}: pattern label {lbl} has no distribution")
            if not dist or dist[0] not in _DISTS or len(dist) != _DISTS[dist[0]] + 1:
                raise ValidationError(f"phase {phase}: bad distribution {dist!r}")
    if len(lengths) != 1:
        raise ValidationError("all phases must have the same occurrence count")
    return lengths.pop()


def _draw_ns(dist, rng) -> int:
    kind = dist[0]
    if kind == "constant":
        v = dist[1]
    elif kind == "uniform":
        v = rng.uniform(dist[1], dist[2])
    else:
        v = rng.normal(dist[1], dist[2])
    return max(0, int(round(v)))


def synth_marker_log(spec: SynthSpec, seed: int) -> list:
    """Generate a marker log whose extracted profile matches the spec.

    Integer-ns timestamps, so extract_intervals recovers the drawn durations
    exactly. Deterministic per seed.
    """
    n_occ = _validate_synth(spec)
    rng = np.random.default_rng(seed)
    phase_ids = list(spec.phases)
    records = []
    for rank in range(spec.ranks):
        t = 0
        # leading call so the first occurrence of the first phase is preceded by a post
        records.append(MarkerRecord(rank, phase_ids[0], "pre", t))
        t += spec.comm_ns
        records.append(MarkerRecord(rank, phase_ids[0], "post", t))
        for k in range(n_occ):
            for phase in phase_ids:
                ps = spec.phases[phase]
                d = _draw_ns(ps.clusters[ps.pattern.label_at(k)], rng)
                t += d
                records.append(MarkerRecord(rank, phase, "pre", t))
                t += spec.comm_ns
                records.append(MarkerRecord(rank, phase, "post", t))
    return records
