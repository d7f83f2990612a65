"""Interconnect fabric: topology construction, deterministic routing, and
store-and-forward link transfer.

Links are directed FIFO servers: a packet occupies a link for
size*8/bandwidth ns, waits behind earlier arrivals, and incurs the link's
propagation latency after serialization. Messages are split into mtu-sized
packets, so multi-hop transfers pipeline. This is the simplest model that
exhibits the congestion phenomena the projection relies on (incast
serialization, bandwidth saturation, traffic spikes); there is no flit-level
flow control and no finite buffering.
"""

from collections import deque
from dataclasses import dataclass
from heapq import heappush
from math import ceil

from .engine import Simulator
from .errors import CapacityError, ConfigError, RouteError

TOPOLOGY_KINDS = ("fat_tree", "torus3d", "dragonfly")


@dataclass(frozen=True)
class NetworkConfig:
    topology: str = "fat_tree"
    bandwidth_gbps: float = 100.0
    latency_ns: float = 90.0
    nodes_per_switch: int = 24
    mtu_bytes: int = 4096
    # fat tree
    radix: int = 48
    pods: int | None = None  # derived from node count when None
    # 3-D torus
    torus_dims: tuple = (5, 5, 4)
    links_per_direction: int = 4
    # dragonfly
    groups: int = 5
    switches_per_group: int = 18
    intra_links: int = 17
    inter_links: int = 7
    # intra-node message cost; None bandwidth = zero-cost
    intra_node_bandwidth_gbps: float | None = None
    intra_node_latency_ns: float = 0.0

    def __post_init__(self):
        if self.topology not in TOPOLOGY_KINDS:
            raise ConfigError(f"unknown topology {self.topology!r}")
        if self.bandwidth_gbps <= 0 or self.latency_ns < 0:
            raise ConfigError("bandwidth must be > 0 and latency >= 0")
        if self.nodes_per_switch < 1 or self.mtu_bytes < 1:
            raise ConfigError("nodes_per_switch and mtu_bytes must be >= 1")
        if self.topology == "fat_tree" and self.radix <= self.nodes_per_switch:
            raise ConfigError("fat tree radix must exceed nodes_per_switch")
        if self.topology == "torus3d":
            if len(self.torus_dims) != 3 or any(d < 1 for d in self.torus_dims):
                raise ConfigError(f"bad torus dims {self.torus_dims}")
            if self.links_per_direction < 1:
                raise ConfigError("links_per_direction must be >= 1")
        if self.topology == "dragonfly":
            if self.groups < 1 or self.switches_per_group < 1 or self.inter_links < 1:
                raise ConfigError("bad dragonfly parameters")
            if self.intra_links != self.switches_per_group - 1:
                raise ConfigError(
                    "dragonfly groups are a full mesh: intra_links must equal switches_per_group - 1"
                )


class Topology:
    """Immutable switch/link structure with deterministic routing tables.

    Link ids index per-simulation state arrays; endpoints are ('n', node) or
    ('s', switch) tags used for validity checks and link naming.
    """

    def __init__(self, cfg: NetworkConfig, node_count: int):
        self.cfg = cfg
        self.kind = cfg.topology
        self.node_count = node_count
        self.link_ends = []  # link id -> (endpoint, endpoint)
        self._sw_links = {}  # (sw_a, sw_b) -> tuple of link ids (parallel links)
        self.node_up = []
        self.node_down = []
        self._route_cache = {}
        builder = {"fat_tree": self._build_fat_tree,
                   "torus3d": self._build_torus,
                   "dragonfly": self._build_dragonfly}[self.kind]
        builder(cfg, node_count)
        nps = cfg.nodes_per_switch
        if node_count > self.capacity:
            raise CapacityError(
                f"{self.kind}: {node_count} nodes exceed capacity {self.capacity}"
            )
        self.node_switch = [n // nps for n in range(node_count)]
        for n in range(node_count):
            sw = self.node_switch[n]
            self.node_up.append(self._add_link(("n", n), ("s", sw)))
            self.node_down.append(self._add_link(("s", sw), ("n", n)))

    # -- construction helpers

    def _add_link(self, a, b):
        self.link_ends.append((a, b))
        return len(self.link_ends) - 1

    def _add_sw_link(self, a, b):
        lid = self._add_link(("s", a), ("s", b))
        key = (a, b)
        self._sw_links[key] = self._sw_links.get(key, ()) + (lid,)
        return lid

    @property
    def n_links(self):
        return len(self.link_ends)

    def link_name(self, lid):
        (ka, ia), (kb, ib) = self.link_ends[lid]
        fmt = {"n": "node", "s": "sw"}
        return f"{fmt[ka]}{ia}->{fmt[kb]}{ib}"

    # -- fat tree: 3 levels, pods of `up` leaves x `up` aggs, modulo root wiring

    def _build_fat_tree(self, cfg, node_count):
        up = cfg.radix - cfg.nodes_per_switch
        pod_cap = up * cfg.nodes_per_switch
        pods = cfg.pods if cfg.pods is not None else max(1, ceil(node_count / pod_cap))
        n_leaf = pods * up
        n_agg = pods * up
        n_root = max(1, ceil(pods * up * up / cfg.radix))
        if n_root > up * up:
            raise ConfigError("fat tree too large for the modulo root wiring")
        self.capacity = n_leaf * cfg.nodes_per_switch
        self.n_switches = n_leaf + n_agg + n_root
        self._ft = dict(up=up, pods=pods, n_leaf=n_leaf, n_agg=n_agg, n_root=n_root)
        agg0 = n_leaf
        root0 = n_leaf + n_agg
        root_pod_aggs = {}
        for p in range(pods):
            leaves = [p * up + i for i in range(up)]
            aggs = [agg0 + p * up + i for i in range(up)]
            for leaf in leaves:
                for agg in aggs:
                    self._add_sw_link(leaf, agg)
                    self._add_sw_link(agg, leaf)
            for a_idx, agg in enumerate(aggs):
                for u in range(up):
                    root = root0 + (a_idx * up + u) % n_root
                    self._add_sw_link(agg, root)
                    self._add_sw_link(root, agg)
                    key = (root, p)
                    lst = root_pod_aggs.setdefault(key, [])
                    if agg not in lst:
                        lst.append(agg)
        self._ft["root_pod_aggs"] = root_pod_aggs
        self._ft["agg0"] = agg0
        self._ft["root0"] = root0

    def _route_fat_tree(self, src_sw, dst):
        ft = self._ft
        up = ft["up"]
        dst_sw = dst // self.cfg.nodes_per_switch
        if src_sw == dst_sw:
            return ()
        pod_s, pod_d = src_sw // up, dst_sw // up
        agg0 = ft["agg0"]
        if pod_s == pod_d:
            agg = agg0 + pod_s * up + dst % up
            return (self._pick(src_sw, agg, dst), self._pick(agg, dst_sw, dst))
        agg_s = agg0 + pod_s * up + dst % up
        # root choice: u-th uplink of agg_s; mixing in the destination switch
        # index spreads a leaf's inbound traffic across its reachable roots
        a_idx = dst % up
        u = (dst + dst // self.cfg.nodes_per_switch) % up
        root = ft["root0"] + (a_idx * up + u) % ft["n_root"]
        aggs_d = ft["root_pod_aggs"][(root, pod_d)]
        agg_d = aggs_d[dst % len(aggs_d)]
        return (
            self._pick(src_sw, agg_s, dst),
            self._pick(agg_s, root, dst),
            self._pick(root, agg_d, dst),
            self._pick(agg_d, dst_sw, dst),
        )

    # -- 3-D torus: dimension order, shorter wrap, ties positive

    def _build_torus(self, cfg, node_count):
        dims = tuple(cfg.torus_dims)
        n_sw = dims[0] * dims[1] * dims[2]
        self.capacity = n_sw * cfg.nodes_per_switch
        self.n_switches = n_sw
        self._dims = dims
        for x in range(dims[0]):
            for y in range(dims[1]):
                for z in range(dims[2]):
                    a = self._sw_of(x, y, z)
                    for axis, size in enumerate(dims):
                        if size == 1:
                            continue
                        for step in (1, -1):
                            c = [x, y, z]
                            c[axis] = (c[axis] + step) % size
                            b = self._sw_of(*c)
                            for _ in range(cfg.links_per_direction):
                                self._add_sw_link(a, b)

    def _sw_of(self, x, y, z):
        dims = self._dims
        return x + dims[0] * (y + dims[1] * z)

    def _route_torus(self, src_sw, dst):
        dims = self._dims
        dst_sw = dst // self.cfg.nodes_per_switch
        cur = [src_sw % dims[0], (src_sw // dims[0]) % dims[1], src_sw // (dims[0] * dims[1])]
        tgt = [dst_sw % dims[0], (dst_sw // dims[0]) % dims[1], dst_sw // (dims[0] * dims[1])]
        hops = []
        for axis in range(3):
            size = dims[axis]
            while cur[axis] != tgt[axis]:
                fwd = (tgt[axis] - cur[axis]) % size
                back = (cur[axis] - tgt[axis]) % size
                step = 1 if fwd <= back else -1  # tie toward positive
                a = self._sw_of(*cur)
                cur[axis] = (cur[axis] + step) % size
                hops.append(self._pick(a, self._sw_of(*cur), dst))
        return tuple(hops)

    # -- dragonfly: full-mesh groups, round-robin global channels, minimal routing

    def _build_dragonfly(self, cfg, node_count):
        g, spg = cfg.groups, cfg.switches_per_group
        n_sw = g * spg
        self.capacity = n_sw * cfg.nodes_per_switch
        self.n_switches = n_sw
        for grp in range(g):
            base = grp * spg
            for i in range(spg):
                for j in range(spg):
                    if i != j:
                        self._add_sw_link(base + i, base + j)
        # global channels: round-robin over group pairs, switch-major port order
        slots = {grp: deque((grp * spg + s) for s in range(spg) for _ in range(cfg.inter_links)) for grp in range(g)}
        channels = {}
        pairs = [(a, b) for a in range(g) for b in range(a + 1, g)]
        progress = True
        while progress:
            progress = False
            for a, b in pairs:
                if slots[a] and slots[b]:
                    sa, sb = slots[a].popleft(), slots[b].popleft()
                    self._add_sw_link(sa, sb)
                    self._add_sw_link(sb, sa)
                    channels.setdefault((a, b), []).append((sa, sb))
                    channels.setdefault((b, a), []).append((sb, sa))
                    progress = True
        self._df = dict(spg=spg, channels=channels)

    def _route_dragonfly(self, src_sw, dst):
        spg = self._df["spg"]
        dst_sw = dst // self.cfg.nodes_per_switch
        if src_sw == dst_sw:
            return ()
        g_s, g_d = src_sw // spg, dst_sw // spg
        if g_s == g_d:
            return (self._pick(src_sw, dst_sw, dst),)
        chans = self._df["channels"].get((g_s, g_d))
        if not chans:
            raise RouteError(f"no global channel between groups {g_s} and {g_d}")
        sa, sb = chans[dst % len(chans)]
        hops = []
        if src_sw != sa:
            hops.append(self._pick(src_sw, sa, dst))
        hops.append(self._pick(sa, sb, dst))
        if sb != dst_sw:
            hops.append(self._pick(sb, dst_sw, dst))
        return tuple(hops)

    # -- shared routing surface

    def _pick(self, a, b, dst):
        links = self._sw_links[(a, b)]
        return links[dst % len(links)] if len(links) > 1 else links[0]

    def route(self, src_node, dst_node):
        """Directed link path src -> dst; deterministic, loop-free."""
        if not (0 <= src_node < self.node_count) or not (0 <= dst_node < self.node_count):
            raise RouteError(f"unknown node in pair ({src_node}, {dst_node})")
        if src_node == dst_node:
            raise RouteError("src == dst is an intra-node transfer, not a route")
        src_sw = self.node_switch[src_node]
        key = (src_sw, dst_node)
        mid = self._route_cache.get(key)
        if mid is None:
            if self.kind == "fat_tree":
                mid = self._route_fat_tree(src_sw, dst_node)
            elif self.kind == "torus3d":
                mid = self._route_torus(src_sw, dst_node)
            else:
                mid = self._route_dragonfly(src_sw, dst_node)
            mid = mid + (self.node_down[dst_node],)
            self._route_cache[key] = mid
        return (self.node_up[src_node],) + mid


def build_topology(cfg: NetworkConfig, node_count: int) -> Topology:
    if node_count < 1:
        raise ConfigError("node_count must be >= 1")
    return Topology(cfg, node_count)


def route(topology: Topology, src_node: int, dst_node: int):
    return topology.route(src_node, dst_node)


# Per-link runtime state lives in a plain list: the service loop is the
# simulation's hottest path and index access beats attribute access.
L_QUEUE = 0
L_BUSY = 1
L_CUR = 2
L_MAX_WAIT = 3
L_BYTES = 4
L_PACKETS = 5
L_BUSY_NS = 6
L_FIRST_START = 7
L_LAST_DONE = 8


def _new_link():
    return [deque(), False, None, 0.0, 0, 0, 0.0, None, 0.0]


class _Msg:
    __slots__ = ("src", "dst", "size", "route", "remaining", "to_inject",
                 "payload", "on_delivered", "on_injected")

    def __init__(self, src, dst, size, route, payload, on_delivered, on_injected):
        self.src = src
        self.dst = dst
        self.size = size
        self.route = route
        self.payload = payload
        self.on_delivered = on_delivered
        self.on_injected = on_injected


class Network:
    """Per-simulation link state over an immutable topology."""

    def __init__(self, topology: Topology, sim: Simulator):
        self.topo = topology
        self.sim = sim
        cfg = topology.cfg
        self.mtu = cfg.mtu_bytes
        self.ns_per_byte = 8.0 / cfg.bandwidth_gbps
        self.latency = cfg.latency_ns
        if cfg.intra_node_bandwidth_gbps is None:
            self.intra_nspb = None
            self.intra_lat = 0.0
        else:
            self.intra_nspb = 8.0 / cfg.intra_node_bandwidth_gbps
            self.intra_lat = cfg.intra_node_latency_ns
        self.links = [_new_link() for _ in range(topology.n_links)]
        self.messages = 0
        self.packets_injected = 0
        self.packets_delivered = 0
        # direct heap access for the service loop; ordering semantics are the
        # engine's (time, insertion sequence)
        self._heap = sim._heap
        self._seq = sim._seq

    def intra_delay(self, size: int) -> float:
        if self.intra_nspb is None:
            return 0.0
        return size * self.intra_nspb + self.intra_lat

    def send(self, src_node, dst_node, size, payload=None, on_delivered=None, on_injected=None):
        """Inject a message; callbacks fire at injection completion (first link
        drained of this message) and at delivery of the last packet."""
        sim = self.sim
        self.messages += 1
        if src_node == dst_node:
            msg = _Msg(src_node, dst_node, size, (), payload, on_delivered, on_injected)
            if on_injected is not None:
                sim.schedule(sim.now, on_injected, msg)
            if on_delivered is not None:
                sim.schedule(sim.now + self.intra_delay(size), on_delivered, msg)
            return msg
        route = self.topo.route(src_node, dst_node)
        msg = _Msg(src_node, dst_node, size, route, payload, on_delivered, on_injected)
        mtu = self.mtu
        full, rem = divmod(size, mtu)
        npk = full + (1 if rem or size == 0 else 0)
        msg.remaining = npk
        msg.to_inject = npk
        self.packets_injected += npk
        first = self.links[route[0]]
        t = sim.now
        for _ in range(full):
            self._push(first, msg, mtu, 0, t)
        if rem or size == 0:
            self._push(first, msg, rem, 0, t)
        return msg

    def _push(self, link, msg, size, hop, ready):
        if link[L_BUSY]:
            link[L_QUEUE].append((ready, msg, size, hop))
        else:
            link[L_BUSY] = True
            link[L_CUR] = (msg, size, hop)
            ser = size * self.ns_per_byte
            link[L_BYTES] += size
            link[L_PACKETS] += 1
            link[L_BUSY_NS] += ser
            if link[L_FIRST_START] is None:
                link[L_FIRST_START] = ready
            link[L_LAST_DONE] = ready + ser
            heappush(self._heap, (ready + ser, next(self._seq), self._serve_done, link))

    def _serve_done(self, link):
        sim = self.sim
        heap = self._heap
        seq = self._seq
        serve = self._serve_done
        t = sim.now
        msg, size, hop = link[L_CUR]
        route = msg.route
        nxt = hop + 1
        # forward (or deliver) before freeing the link: deterministic either way,
        # and the forwarded packet keeps its arrival-order FIFO slot downstream
        if nxt == len(route):
            self.packets_delivered += 1
            msg.remaining -= 1
            if msg.remaining == 0 and msg.on_delivered is not None:
                heappush(heap, (t + self.latency, next(seq), msg.on_delivered, msg))
        else:
            nlink = self.links[route[nxt]]
            ready = t + self.latency
            if nlink[L_BUSY]:
                nlink[L_QUEUE].append((ready, msg, size, nxt))
            else:
                nlink[L_BUSY] = True
                nlink[L_CUR] = (msg, size, nxt)
                ser = size * self.ns_per_byte
                nlink[L_BYTES] += size
                nlink[L_PACKETS] += 1
                nlink[L_BUSY_NS] += ser
                if nlink[L_FIRST_START] is None:
                    nlink[L_FIRST_START] = ready
                nlink[L_LAST_DONE] = ready + ser
                heappush(heap, (ready + ser, next(seq), serve, nlink))
        q = link[L_QUEUE]
        if q:
            ready, nmsg, nsize, nhop = q.popleft()
            if ready > t:
                start = ready
            else:
                start = t
                wait = t - ready
                if wait > link[L_MAX_WAIT]:
                    link[L_MAX_WAIT] = wait
            link[L_CUR] = (nmsg, nsize, nhop)
            ser = nsize * self.ns_per_byte
            link[L_BYTES] += nsize
            link[L_PACKETS] += 1
            link[L_BUSY_NS] += ser
            if link[L_FIRST_START] is None:
                link[L_FIRST_START] = start
            link[L_LAST_DONE] = start + ser
            heappush(heap, (start + ser, next(seq), serve, link))
        else:
            link[L_BUSY] = False
            link[L_CUR] = None
        if hop == 0:
            msg.to_inject -= 1
            if msg.to_inject == 0 and msg.on_injected is not None:
                msg.on_injected(msg)


def transfer(topology: Topology, msg, start: float) -> float:
    """One-shot uncontended transfer; msg is (src, dst, size) or a dict.

    Runs a private engine to idle and returns the delivery time. For
    contended scenarios drive a shared Network instance instead.
    """
    if isinstance(msg, dict):
        src, dst, size = msg["src"], msg["dst"], msg["size"]
    else:
        src, dst, size = msg
    sim = Simulator()
    net = Network(topology, sim)
    done = {}

    def record(m):
        done["t"] = sim.now

    def kick(_):
        if src == dst:
            done["t"] = start + net.intra_delay(size)
        else:
            net.send(src, dst, size, on_delivered=record)

    sim.schedule(start, kick)
    sim.run_until_idle()
    return done["t"]


def intra_node_transfer(size: int, start: float, cfg: NetworkConfig) -> float:
    """Delivery time of a same-node message: start, plus the configured
    (bandwidth, latency) cost when intra-node cost is enabled."""
    if cfg.intra_node_bandwidth_gbps is None:
        return start
    return start + size * 8.0 / cfg.intra_node_bandwidth_gbps + cfg.intra_node_latency_ns
