"""Discrete-event core.

A single EventQueue drives the whole model: hardware completions, broker
callbacks, and scheduler wakeups are all closures scheduled at a virtual
timestamp. Events at equal timestamps run in insertion order, which is what
makes a run reproducible.
"""

from __future__ import annotations

import heapq
import itertools
from typing import Any, Callable


class EventQueue:
    def __init__(self):
        self._heap: list = []
        self._seq = itertools.count()
        self._now = 0.0

    @property
    def now(self) -> float:
        return self._now

    def schedule(self, at: float, fn: Callable, *args: Any) -> None:
        """Schedule fn(*args) at absolute time `at`.

        `at` must not be in the past; scheduling at the current time is
        allowed and runs after already-queued events for that time.
        """
        if at < self._now:
            raise ValueError(f"cannot schedule at {at} before now {self._now}")
        heapq.heappush(self._heap, (at, next(self._seq), fn, args))

    def schedule_after(self, delay: float, fn: Callable, *args: Any) -> None:
        self.schedule(self._now + delay, fn, *args)

    def __bool__(self) -> bool:
        return bool(self._heap)

    def __len__(self) -> int:
        return len(self._heap)

    def next_time(self) -> float | None:
        return self._heap[0][0] if self._heap else None

    def step(self) -> bool:
        """Run the earliest event. Returns False if the queue is empty."""
        if not self._heap:
            return False
        at, _, fn, args = heapq.heappop(self._heap)
        self._now = at
        fn(*args)
        return True

    def run_until_idle(self) -> None:
        while self.step():
            pass

    def run_until(self, deadline: float) -> None:
        """Run events with timestamp <= deadline, then set now = deadline."""
        while self._heap and self._heap[0][0] <= deadline:
            self.step()
        if deadline > self._now:
            self._now = deadline
