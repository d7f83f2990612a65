"""Deterministic single-threaded discrete-event core.

Events dispatch in (time, insertion sequence) order, so simultaneous events
run in the order they were scheduled and a fixed setup always produces the
same trace. One Simulator instance is strictly single-threaded; parallelism
only exists across independent instances.
"""

import heapq
from itertools import count

from .errors import CausalityError, RunawayError

DEFAULT_EVENT_CAP = 1_000_000_000


class Simulator:
    __slots__ = ("now", "dispatched", "max_events", "_heap", "_seq")

    def __init__(self, max_events: int = DEFAULT_EVENT_CAP):
        self.now = 0.0
        self.dispatched = 0
        self.max_events = max_events
        self._heap = []
        # shared with trusted hot paths (netmodel) that push events directly
        self._seq = count()

    def __len__(self):
        return len(self._heap)

    def schedule(self, at: float, fn, arg=None):
        """Enqueue fn(arg) at simulated time `at` (ns). Returns the event handle."""
        if at < self.now:
            raise CausalityError(
                f"schedule at t={at} before current time t={self.now}"
            )
        seq = next(self._seq)
        heapq.heappush(self._heap, (at, seq, fn, arg))
        return (at, seq)

    def run_until_idle(self) -> float:
        """Dispatch everything; returns the time of the last event (0.0 if none)."""
        heap = self._heap
        pop = heapq.heappop
        cap = self.max_events
        last = 0.0
        n = self.dispatched
        while heap:
            if n >= cap:
                self.dispatched = n
                raise RunawayError(
                    f"dispatched {n} events without draining the queue (cap={cap})"
                )
            t, _, fn, arg = pop(heap)
            if t < self.now:
                self.dispatched = n
                raise CausalityError(f"clock would move backwards: {t} < {self.now}")
            self.now = t
            last = t
            n += 1
            fn(arg)
        self.dispatched = n
        return last
