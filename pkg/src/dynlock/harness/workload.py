"""Lock/Unlock call generation."""

from __future__ import annotations

import math
import random

from ..core import State


class GeometricWorkload:
    """Each idle node calls Lock after a geometric gap and Unlock ``hold``
    stages after it is first seen locked.

    A gap is drawn whenever a node becomes idle without a pending call,
    so the per-stage call probability is ``rate``. No Lock is called at or
    after ``cutoff``, which lets outstanding requests drain before the
    run ends.
    """

    def __init__(self, n: int, rate: float, hold: int, rng: random.Random,
                 max_requests: int | None = None, cutoff: int | None = None):
        self.n = n
        self.rate = rate
        self.hold = hold
        self.rng = rng
        self.max_requests = max_requests
        self.cutoff = cutoff
        self.next_call: list[int | None] = [None] * n
        self.locked_at: list[int | None] = [None] * n
        self.issued = [0] * n
        self.call_stage: dict[int, int] = {}
        self.lock_calls = 0
        self.unlock_calls = 0

    def _gap(self) -> int:
        if self.rate >= 1.0:
            return 0
        return int(math.log(1.0 - self.rng.random()) / math.log1p(-self.rate))

    def boundary(self, sim, stage: int) -> list[tuple[int, str]]:
        calls = []
        cutoff = self.cutoff
        for u in range(self.n):
            v = sim.vars[u]
            state = v.state
            if state is State.IDLE:
                self.locked_at[u] = None
                if sim.pending_lock[u] or (cutoff is not None and stage >= cutoff):
                    continue
                if self.max_requests is not None and self.issued[u] >= self.max_requests:
                    continue
                due = self.next_call[u]
                if due is None:
                    due = self.next_call[u] = stage + self._gap()
                if stage >= due:
                    sim.pending_lock[u] = True
                    self.next_call[u] = None
                    self.issued[u] += 1
                    self.call_stage[u] = stage
                    self.lock_calls += 1
                    calls.append((u, "lock"))
            elif state is State.LOCKED:
                if sim.pending_unlock[u]:
                    continue
                seen = self.locked_at[u]
                if seen is None:
                    seen = self.locked_at[u] = stage
                if stage >= seen + self.hold:
                    sim.pending_unlock[u] = True
                    self.unlock_calls += 1
                    calls.append((u, "unlock"))
        return calls
