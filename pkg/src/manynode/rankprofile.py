"""Cluster application ranks by hardware-counter behavior and pick
representative nodes for detailed timing capture.

Ranks of regular distributed applications mostly run the same code; the few
that diverge (I/O ranks, reduction roots) show up in counter space. Features
are z-normalized per dimension, clustered with seeded k-means, and k is
chosen by silhouette score. A greedy cover then selects the smallest node set
whose ranks touch every cluster.
"""

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ParseError, ValidationError

COUNTER_FIELDS = ("rank", "node", "instructions", "ipc", "branches", "loads")
IDENTICAL_TOL = 1e-9


@dataclass(frozen=True)
class RankCounterVector:
    rank_id: int
    node_id: int
    instructions: float
    ipc: float
    branches: float
    loads: float

    def __post_init__(self):
        for name in ("instructions", "branches", "loads"):
            if getattr(self, name) < 0:
                raise ValidationError(f"rank {self.rank_id}: {name} must be >= 0")
        if self.ipc <= 0:
            raise ValidationError(f"rank {self.rank_id}: ipc must be > 0")


@dataclass(frozen=True)
class RankClustering:
    k: int
    assignment: dict  # rank_id -> label in [0, k)
    centroids: tuple  # k tuples in normalized feature space

    def __post_init__(self):
        labels = set(self.assignment.values())
        if labels != set(range(self.k)):
            raise ValidationError(f"labels {sorted(labels)} do not cover [0, {self.k})")


@dataclass(frozen=True)
class NodeSelection:
    nodes: tuple  # selected node ids, in selection order
    covered: tuple  # cluster labels covered, ascending


def load_counters(path) -> list:
    """Parse the counter CSV; extra columns are ignored with a warning."""
    rows = []
    seen = set()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError(f"{path}: empty file, expected header {','.join(COUNTER_FIELDS)}")
        header = [h.strip() for h in header]
        try:
            idx = {name: header.index(name) for name in COUNTER_FIELDS}
        except ValueError as e:
            raise ParseError(f"{path}: missing required column: {e}") from None
        extra = [h for h in header if h not in COUNTER_FIELDS]
        if extra:
            warnings.warn(f"{path}: ignoring extra counter columns {extra}", stacklevel=2)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) < len(header):
                raise ParseError(f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                rec = RankCounterVector(
                    rank_id=int(row[idx["rank"]]),
                    node_id=int(row[idx["node"]]),
                    instructions=float(row[idx["instructions"]]),
                    ipc=float(row[idx["ipc"]]),
                    branches=float(row[idx["branches"]]),
                    loads=float(row[idx["loads"]]),
                )
            except ValueError as e:
                raise ParseError(f"{path}: line {lineno}: {e}") from None
            if rec.rank_id in seen:
                raise ValidationError(f"{path}: line {lineno}: duplicate rank_id {rec.rank_id}")
            seen.add(rec.rank_id)
            rows.append(rec)
    return rows


def _features(table) -> np.ndarray:
    return np.array(
        [[r.instructions, r.ipc, r.branches, r.loads] for r in table], dtype=float
    )


def _normalize(feats: np.ndarray) -> np.ndarray:
    mu = feats.mean(axis=0)
    sd = feats.std(axis=0)
    sd[sd == 0.0] = 1.0
    return (feats - mu) / sd


def _kmeans(z: np.ndarray, k: int, rng) -> np.ndarray:
    """Seeded k-means++ followed by Lloyd iterations; returns labels."""
    n = len(z)
    centers = np.empty((k, z.shape[1]))
    centers[0] = z[int(rng.integers(n))]
    d2 = np.sum((z - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers[j] = z[int(rng.integers(n))]
        else:
            centers[j] = z[int(rng.choice(n, p=d2 / total))]
        d2 = np.minimum(d2, np.sum((z - centers[j]) ** 2, axis=1))
    labels = np.zeros(n, dtype=int)
    for _ in range(100):
        dists = np.sum((z[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        new_labels = np.argmin(dists, axis=1)
        for j in range(k):
            members = new_labels == j
            if members.any():
                centers[j] = z[members].mean(axis=0)
            else:
                # reseed an empty cluster on the farthest point
                far = int(np.argmax(np.min(dists, axis=1)))
                centers[j] = z[far]
                new_labels[far] = j
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return labels


def _silhouette(z: np.ndarray, labels: np.ndarray) -> float:
    """Mean silhouette; singleton clusters contribute 0."""
    n = len(z)
    dists = np.sqrt(np.sum((z[:, None, :] - z[None, :, :]) ** 2, axis=2))
    uniq = np.unique(labels)
    scores = np.zeros(n)
    for i in range(n):
        own = labels == labels[i]
        if own.sum() <= 1:
            continue
        a = dists[i][own].sum() / (own.sum() - 1)
        b = min(dists[i][labels == lbl].mean() for lbl in uniq if lbl != labels[i])
        scores[i] = (b - a) / max(a, b) if max(a, b) > 0 else 0.0
    return float(scores.mean())


def cluster_ranks(table, k_max: int, seed: int = 0) -> RankClustering:
    """Cluster ranks on normalized counters; k picked by silhouette in [1, k_max]."""
    if not table:
        raise ValidationError("counter table is empty")
    if k_max < 1:
        raise ValidationError("k_max must be >= 1")
    z = _normalize(_features(table))
    n = len(z)
    spread = np.max(np.abs(z - z[0])) if n > 1 else 0.0
    if k_max == 1 or n == 1 or spread <= IDENTICAL_TOL:
        labels = np.zeros(n, dtype=int)
        k = 1
    else:
        best = None
        for k_try in range(2, min(k_max, n) + 1):
            cand = _kmeans(z, k_try, np.random.default_rng(seed))
            score = _silhouette(z, cand)
            if best is None or score > best[0] + 1e-12:
                best = (score, k_try, cand)
        _, k, labels = best
    # canonical labels: order clusters by their smallest member rank
    firsts = {}
    for i, lbl in enumerate(labels):
        firsts.setdefault(int(lbl), i)
    remap = {old: new for new, old in enumerate(sorted(firsts, key=firsts.get))}
    labels = [remap[int(l)] for l in labels]
    centroids = []
    arr = np.array(labels)
    for j in range(k):
        centroids.append(tuple(float(v) for v in z[arr == j].mean(axis=0)))
    assignment = {t.rank_id: lbl for t, lbl in zip(table, labels)}
    return RankClustering(k=k, assignment=assignment, centroids=tuple(centroids))


def select_representatives(clustering: RankClustering, ranks_per_node: int = 1, node_map=None) -> NodeSelection:
    """Greedy minimum node set covering every cluster label.

    Nodes follow block placement (rank r on node r // ranks_per_node) unless
    an explicit rank -> node map is given; ties break toward the lowest node id.
    """
    if ranks_per_node < 1:
        raise ValidationError("ranks_per_node must be >= 1")
    node_labels = {}
    for rank, lbl in clustering.assignment.items():
        node = node_map[rank] if node_map is not None else rank // ranks_per_node
        node_labels.setdefault(node, set()).add(lbl)
    uncovered = set(clustering.assignment.values())
    chosen = []
    while uncovered:
        node = max(
            sorted(node_labels),
            key=lambda nd: (len(node_labels[nd] & uncovered), -nd),
        )
        gain = node_labels[node] & uncovered
        if not gain:
            break  # nothing else coverable (cannot happen with consistent input)
        chosen.append(node)
        uncovered -= gain
    covered = set(clustering.assignment.values()) - uncovered
    # drop picks made redundant by later ones so the set is irredundant
    for node in sorted(chosen, reverse=True):
        rest = set().union(*(node_labels[nd] for nd in chosen if nd != node)) if len(chosen) > 1 else set()
        if covered <= rest:
            chosen.remove(node)
    return NodeSelection(nodes=tuple(chosen), covered=tuple(sorted(covered)))


def load_node_map(path) -> dict:
    """Optional explicit rank -> node mapping: CSV with header rank,node."""
    out = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["rank", "node"]:
            raise ParseError(f"{path}: expected header rank,node")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                out[int(row[0])] = int(row[1])
            except (ValueError, IndexError) as e:
                raise ParseError(f"{path}: line {lineno}: {e}") from None
    return out


def write_clustering_csv(table, clustering: RankClustering, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rank", "node", "cluster"])
        for rec in table:
            w.writerow([rec.rank_id, rec.node_id, clustering.assignment[rec.rank_id]])


def write_selection(selection: NodeSelection, path):
    with open(path, "w") as fh:
        for node in selection.nodes:
            fh.write(f"{node}\n")
