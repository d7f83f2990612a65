"""MPI semantics over the network model.

Each rank interprets a lazy operation stream on a shared single-threaded
engine. Sends are eager: the message enters the source NIC queue at call
time, and a blocking send completes when its last packet leaves the first
link. Point-to-point matching is FIFO per (source, tag). Collectives expand
into explicit message rounds:

  allreduce  - recursive doubling (extra ranks fold onto the power-of-two core)
  barrier    - dissemination, ceil(log2 N) zero-payload rounds
  reduce     - base-fanout binomial tree toward the root, with optional
               per-hop encode/decode compute delays
  bcast      - mirror of the reduce tree
  alltoall   - rank-offset order (rank r sends first to r+1), completing when
               all own sends are delivered and all expected messages arrived

Time a rank spends blocked in any of these is accounted as communication;
replayed compute (including codec delays) is accounted as compute.
"""

from collections import deque

from .errors import DeadlockError, ProtocolError, UsageError

__all__ = [
    "Compute", "Send", "Isend", "Recv", "Irecv", "Wait", "WaitAll",
    "Allreduce", "Barrier", "ReduceTree", "BcastTree", "Alltoall",
    "MpiRuntime",
]


class Compute:
    __slots__ = ("slot",)

    def __init__(self, slot):
        self.slot = slot


class Send:
    __slots__ = ("dst", "tag", "size")

    def __init__(self, dst, tag, size):
        self.dst = dst
        self.tag = tag
        self.size = size


class Isend:
    __slots__ = ("handle", "dst", "tag", "size")

    def __init__(self, handle, dst, tag, size):
        self.handle = handle
        self.dst = dst
        self.tag = tag
        self.size = size


class Recv:
    __slots__ = ("src", "tag")

    def __init__(self, src, tag):
        self.src = src
        self.tag = tag


class Irecv:
    __slots__ = ("handle", "src", "tag")

    def __init__(self, handle, src, tag):
        self.handle = handle
        self.src = src
        self.tag = tag


class Wait:
    __slots__ = ("handle",)

    def __init__(self, handle):
        self.handle = handle


class WaitAll:
    __slots__ = ("handles",)

    def __init__(self, handles):
        self.handles = tuple(handles)


class Allreduce:
    __slots__ = ("size", "comm")

    def __init__(self, size, comm=None):
        self.size = size
        self.comm = comm


class Barrier:
    __slots__ = ("comm",)

    def __init__(self, comm=None):
        self.comm = comm


class ReduceTree:
    __slots__ = ("size", "root", "fanout", "encode_slot", "decode_slot", "comm")

    def __init__(self, size, root=0, fanout=2, encode_slot=None, decode_slot=None, comm=None):
        self.size = size
        self.root = root
        self.fanout = fanout
        self.encode_slot = encode_slot
        self.decode_slot = decode_slot
        self.comm = comm


class BcastTree:
    __slots__ = ("size", "root", "fanout", "encode_slot", "decode_slot", "comm")

    def __init__(self, size, root=0, fanout=2, encode_slot=None, decode_slot=None, comm=None):
        self.size = size
        self.root = root
        self.fanout = fanout
        self.encode_slot = encode_slot
        self.decode_slot = decode_slot
        self.comm = comm


class Alltoall:
    """window > 0 bounds a rank's undelivered sends (realistic NIC/driver
    pacing and bounded simulator state); 0 means fire-and-forget injection."""
    __slots__ = ("per_pair_size", "comm", "window")

    def __init__(self, per_pair_size, comm=None, window=0):
        self.per_pair_size = per_pair_size
        self.comm = comm
        self.window = window


class _CSend:
    """Collective-internal send with counter-crediting delivery."""
    __slots__ = ("dst", "size", "ckey", "skey")

    def __init__(self, dst, size, ckey, skey=None):
        self.dst = dst
        self.size = size
        self.ckey = ckey
        self.skey = skey


class _CWait:
    __slots__ = ("reqs", "consume")  # reqs: tuple of (counter key, needed count)

    def __init__(self, reqs, consume=True):
        self.reqs = reqs
        self.consume = consume


class _CDone:
    __slots__ = ("key", "sync")

    def __init__(self, key, sync):
        self.key = key
        self.sync = sync


class _Handle:
    __slots__ = ("done", "consumed", "waiting")

    def __init__(self):
        self.done = None
        self.consumed = False
        self.waiting = False


class _Rank:
    __slots__ = ("idx", "node", "stack", "handles", "arrived", "posted", "counters",
                 "block", "block_t0", "block_name", "comm_ns", "compute_ns",
                 "finish", "done", "coll_seq")

    def __init__(self, idx, node):
        self.idx = idx
        self.node = node
        self.stack = []
        self.handles = {}
        self.arrived = {}
        self.posted = {}
        self.counters = {}
        self.block = None
        self.block_t0 = 0.0
        self.block_name = ""
        self.comm_ns = 0.0
        self.compute_ns = 0.0
        self.finish = 0.0
        self.done = False
        self.coll_seq = {}


def _largest_pow2(n):
    return 1 << (n.bit_length() - 1)


class MpiRuntime:
    """Interprets per-rank op streams against a Network on one Simulator."""

    def __init__(self, sim, network, nranks, ranks_per_node=1, compute_fn=None, trace=None):
        self.sim = sim
        self.net = network
        self.nranks = nranks
        self.ranks_per_node = ranks_per_node
        self.compute_fn = compute_fn or (lambda rank, slot: 0.0)
        self.trace = trace  # list to append (rank, kind, t0, t1, label) or None
        self.ranks = [_Rank(i, i // ranks_per_node) for i in range(nranks)]
        self.finished = 0
        self.p2p_sent = 0
        self.p2p_matched = 0
        self._comms = {}
        self._world_cid = 0
        self._next_cid = 1
        self._coll_reg = {}
        self._coll_state = {}  # (cid, seq) -> [max_entry, comm_size, n_done, sync, max_done]
        self.sync_violation_ns = 0.0
        self.collectives = 0

    # -- program setup

    def start(self, programs):
        """programs: callable(rank) -> iterator of ops. Schedules all ranks at t=0."""
        for rank in self.ranks:
            rank.stack.append(iter(programs(rank.idx)))
        for rank in self.ranks:
            self.sim.schedule(0.0, self._advance, rank)

    def finalize(self):
        if self.finished != self.nranks:
            stuck = [
                f"rank {r.idx} ({r.block_name or 'ready'})"
                for r in self.ranks
                if not r.done
            ]
            raise DeadlockError(f"deadlock: unfinished ranks: {', '.join(stuck)}")
        for key, st in self._coll_state.items():
            # unfinished tree collectives would have tripped the deadlock check
            viol = st[0] - st[4]
            if viol > self.sync_violation_ns:
                self.sync_violation_ns = viol
        self._coll_state.clear()

    # -- communicator bookkeeping

    def _comm_info(self, comm):
        if comm is None:
            return self._world_cid, self.nranks, None
        key = tuple(comm)
        info = self._comms.get(key)
        if info is None:
            info = (self._next_cid, len(key), {r: i for i, r in enumerate(key)})
            self._next_cid += 1
            self._comms[key] = info
        return info

    # -- main dispatcher

    def _advance(self, rank):
        sim = self.sim
        net = self.net
        stack = rank.stack
        trace = self.trace
        while True:
            if not stack:
                rank.done = True
                rank.finish = sim.now
                self.finished += 1
                return
            try:
                op = next(stack[-1])
            except StopIteration:
                stack.pop()
                continue
            T = op.__class__
            if T is _CSend:
                payload = (
                    ("c", op.dst, rank.idx, op.ckey)
                    if op.skey is None
                    else ("a", op.dst, rank.idx, op.ckey, op.skey)
                )
                dst_node = op.dst // self.ranks_per_node
                if dst_node == rank.node:
                    net.send(rank.node, dst_node, op.size, payload, self._on_deliver)
                    continue
                net.send(rank.node, dst_node, op.size, payload, self._on_deliver, self._on_injected)
                rank.block = ("inj",)
                rank.block_t0 = sim.now
                rank.block_name = "collective"
                return
            if T is _CWait:
                c = rank.counters
                if all(c.get(k, 0) >= need for k, need in op.reqs):
                    if op.consume:
                        for k, _ in op.reqs:
                            del c[k]
                    continue
                rank.block = ("cnt", op.reqs, op.consume)
                rank.block_t0 = sim.now
                rank.block_name = "collective"
                return
            if T is Compute:
                dt = self.compute_fn(rank.idx, op.slot)
                rank.compute_ns += dt
                if trace is not None and dt > 0:
                    trace.append((rank.idx, "compute", sim.now, sim.now + dt, op.slot))
                if dt > 0:
                    sim.schedule(sim.now + dt, self._advance, rank)
                    return
                continue
            if T is _CDone:
                st = self._coll_state[op.key]
                st[2] += 1
                if op.sync and sim.now < st[0] - 1e-9 and st[0] - sim.now > self.sync_violation_ns:
                    self.sync_violation_ns = st[0] - sim.now
                if sim.now > st[4]:
                    st[4] = sim.now
                if st[2] == st[1]:
                    viol = st[0] - st[4]
                    if viol > self.sync_violation_ns:
                        self.sync_violation_ns = viol
                    del self._coll_state[op.key]
                    self._coll_reg.pop(op.key, None)
                continue
            if T is Irecv:
                h = self._new_handle(rank, op.handle)
                key = (op.src, op.tag)
                arr = rank.arrived.get(key)
                if arr:
                    arr.popleft()
                    if not arr:
                        del rank.arrived[key]
                    self.p2p_matched += 1
                    h.done = sim.now
                else:
                    rank.posted.setdefault(key, deque()).append(h)
                continue
            if T is Isend:
                h = self._new_handle(rank, op.handle)
                self._p2p_send(rank, op.dst, op.tag, op.size, h)
                continue
            if T is Wait:
                h = rank.handles.get(op.handle)
                if h is None:
                    raise UsageError(f"rank {rank.idx}: wait on unknown handle {op.handle!r}")
                if h.consumed:
                    raise UsageError(f"rank {rank.idx}: handle {op.handle!r} waited twice")
                h.consumed = True
                if h.done is not None:
                    continue
                h.waiting = True
                rank.block = ("wait",)
                rank.block_t0 = sim.now
                rank.block_name = "wait"
                return
            if T is WaitAll:
                stack.append(iter([Wait(hid) for hid in op.handles]))
                continue
            if T is Send:
                h = _Handle()
                done_now = self._p2p_send(rank, op.dst, op.tag, op.size, h)
                if done_now:
                    continue
                h.waiting = True
                rank.block = ("wait",)
                rank.block_t0 = sim.now
                rank.block_name = "send"
                return
            if T is Recv:
                key = (op.src, op.tag)
                arr = rank.arrived.get(key)
                if arr:
                    arr.popleft()
                    if not arr:
                        del rank.arrived[key]
                    self.p2p_matched += 1
                    continue
                rank.posted.setdefault(key, deque()).append(None)
                rank.block = ("recv",)
                rank.block_t0 = sim.now
                rank.block_name = "recv"
                return
            gen = self._expand_collective(rank, op, T)
            stack.append(gen)
            continue

    # -- point-to-point plumbing

    def _new_handle(self, rank, hid):
        old = rank.handles.get(hid)
        if old is not None and not old.consumed:
            raise UsageError(f"rank {rank.idx}: handle {hid!r} reused before wait")
        h = _Handle()
        rank.handles[hid] = h
        return h

    def _p2p_send(self, rank, dst, tag, size, handle):
        """Returns True if injection completed synchronously (same node)."""
        self.p2p_sent += 1
        payload = ("p", dst, rank.idx, tag)
        dst_node = dst // self.ranks_per_node
        if dst_node == rank.node:
            self.net.send(rank.node, dst_node, size, payload, self._on_deliver)
            handle.done = self.sim.now
            return True
        msg = self.net.send(rank.node, dst_node, size, payload, self._on_deliver, self._on_injected_handle)
        msg.payload = payload + (handle,)
        return False

    # -- delivery and injection callbacks

    def _on_deliver(self, msg):
        p = msg.payload
        kind = p[0]
        if kind == "c":
            self._credit(p[1], p[3], 1)
        elif kind == "a":
            self._credit(p[1], p[3], 1)
            self._credit(p[2], p[4], 1)
        else:
            self._deliver_p2p(p[1], p[2], p[3])

    def _deliver_p2p(self, dst, src, tag):
        rank = self.ranks[dst]
        key = (src, tag)
        posted = rank.posted.get(key)
        if posted:
            tok = posted.popleft()
            if not posted:
                del rank.posted[key]
            self.p2p_matched += 1
            if tok is None:
                self._resume(rank)
            else:
                tok.done = self.sim.now
                if tok.waiting:
                    self._resume(rank)
        else:
            rank.arrived.setdefault(key, deque()).append(self.sim.now)

    def _credit(self, rank_idx, key, n):
        rank = self.ranks[rank_idx]
        c = rank.counters
        c[key] = c.get(key, 0) + n
        blk = rank.block
        if blk is not None and blk[0] == "cnt":
            if all(c.get(k, 0) >= need for k, need in blk[1]):
                if blk[2]:
                    for k, _ in blk[1]:
                        del c[k]
                self._resume(rank)

    def _on_injected(self, msg):
        # collective blocking-inject send: payload carries the source rank
        self._resume(self.ranks[msg.payload[2]])

    def _on_injected_handle(self, msg):
        p = msg.payload
        handle = p[4]
        handle.done = self.sim.now
        if handle.waiting:
            self._resume(self.ranks[p[2]])

    def _resume(self, rank):
        now = self.sim.now
        t0 = rank.block_t0
        rank.comm_ns += now - t0
        if self.trace is not None and now > t0:
            self.trace.append((rank.idx, "comm", t0, now, rank.block_name))
        rank.block = None
        self._advance(rank)

    # -- collectives

    def _expand_collective(self, rank, op, T):
        comm = op.comm
        cid, n, index_map = self._comm_info(comm)
        if index_map is None:
            cidx = rank.idx
            if not (0 <= cidx < n):
                raise ProtocolError(f"rank {rank.idx} outside world communicator")
        else:
            if rank.idx not in index_map:
                raise ProtocolError(f"rank {rank.idx} not in communicator {comm}")
            cidx = index_map[rank.idx]
        seq = rank.coll_seq.get(cid, 0)
        rank.coll_seq[cid] = seq + 1
        key = (cid, seq)
        if T is Allreduce:
            sig = ("allreduce", op.size)
            sync = True
            gen = self._gen_allreduce(rank, comm, cidx, n, key, op.size)
        elif T is Barrier:
            sig = ("barrier",)
            sync = True
            gen = self._gen_barrier(rank, comm, cidx, n, key)
        elif T is ReduceTree:
            sig = ("reduce_tree", op.size, op.root, op.fanout, op.encode_slot, op.decode_slot)
            sync = False
            gen = self._gen_tree(rank, comm, cidx, n, key, op, up=True)
        elif T is BcastTree:
            sig = ("bcast_tree", op.size, op.root, op.fanout, op.encode_slot, op.decode_slot)
            sync = False
            gen = self._gen_tree(rank, comm, cidx, n, key, op, up=False)
        elif T is Alltoall:
            sig = ("alltoall", op.per_pair_size, op.window)
            sync = True
            gen = self._gen_alltoall(rank, comm, cidx, n, key, op.per_pair_size, op.window)
        else:
            raise UsageError(f"rank {rank.idx}: unknown op {op!r}")
        now = self.sim.now
        prev = self._coll_reg.get(key)
        if prev is None:
            self._coll_reg[key] = sig
            self._coll_state[key] = [now, n, 0, sync, 0.0]
            self.collectives += 1
        else:
            if prev != sig:
                raise ProtocolError(
                    f"collective mismatch at (comm {cid}, seq {seq}): "
                    f"rank {rank.idx} called {sig}, others {prev}"
                )
            st = self._coll_state[key]
            if now > st[0]:
                st[0] = now
        return gen

    @staticmethod
    def _member(comm, i):
        return i if comm is None else comm[i]

    def _gen_allreduce(self, rank, comm, cidx, n, key, size):
        if n > 1:
            p2 = _largest_pow2(n)
            extras = n - p2
            if cidx >= p2:
                partner = cidx - p2
                yield _CSend(self._member(comm, partner), size, (key, "fold"))
                yield _CWait((((key, "post"), 1),))
            else:
                if cidx < extras:
                    yield _CWait((((key, "fold"), 1),))
                d = 1
                rnd = 0
                while d < p2:
                    partner = cidx ^ d
                    yield _CSend(self._member(comm, partner), size, (key, rnd))
                    yield _CWait((((key, rnd), 1),))
                    d <<= 1
                    rnd += 1
                if cidx < extras:
                    yield _CSend(self._member(comm, cidx + p2), size, (key, "post"))
        yield _CDone(key, True)

    def _gen_barrier(self, rank, comm, cidx, n, key):
        d = 1
        rnd = 0
        while d < n:
            yield _CSend(self._member(comm, (cidx + d) % n), 0, (key, rnd))
            yield _CWait((((key, rnd), 1),))
            d <<= 1
            rnd += 1
        yield _CDone(key, True)

    def _gen_tree(self, rank, comm, cidx, n, key, op, up):
        f = op.fanout
        if f < 2:
            raise UsageError("tree fanout must be >= 2")
        if op.comm is None:
            root_idx = op.root
        else:
            if op.root not in comm:
                raise ProtocolError(f"root {op.root} not in communicator")
            root_idx = list(comm).index(op.root)
        v = (cidx - root_idx) % n
        levels = 0
        span = 1
        while span < n:
            span *= f
            levels += 1
        if up:
            span = 1
            for k in range(levels):
                if v % span == 0:
                    digit = (v // span) % f
                    if digit != 0:
                        if op.encode_slot is not None:
                            yield Compute(op.encode_slot)
                        parent = self._member(comm, (v - digit * span + root_idx) % n)
                        yield _CSend(parent, op.size, (key, k))
                        break
                    nchild = sum(1 for j in range(1, f) if v + j * span < n)
                    if nchild:
                        yield _CWait((((key, k), nchild),))
                        if op.decode_slot is not None:
                            for _ in range(nchild):
                                yield Compute(op.decode_slot)
                span *= f
        else:
            for k in range(levels - 1, -1, -1):
                span = f ** k
                if v % span != 0:
                    continue
                digit = (v // span) % f
                if digit != 0:
                    yield _CWait((((key, k), 1),))
                    if op.decode_slot is not None:
                        yield Compute(op.decode_slot)
                else:
                    for j in range(1, f):
                        c = v + j * span
                        if c < n:
                            if op.encode_slot is not None:
                                yield Compute(op.encode_slot)
                            yield _CSend(self._member(comm, (c + root_idx) % n), op.size, (key, k))
        yield _CDone(key, False)

    def _gen_alltoall(self, rank, comm, cidx, n, key, per_pair, window=0):
        if n > 1:
            rkey = (key, "r")
            skey = (key, "s")
            for j in range(1, n):
                dst = self._member(comm, (cidx + j) % n)
                yield _CSend(dst, per_pair, rkey, skey)
                if window and j > window:
                    yield _CWait(((skey, j - window),), consume=False)
            yield _CWait(((rkey, n - 1), (skey, n - 1)))
        yield _CDone(key, True)
