"""Injectable clocks that double as single-threaded event loops.

The coordinator, the collector and the simulated connector all schedule work
on the same clock. :class:`SimClock` jumps straight to the next event, so a
twenty-minute experiment runs in milliseconds; :class:`RealClock` sleeps.
Events due at the same instant run in (priority, insertion) order.
"""

from __future__ import annotations

import heapq
import itertools
import time
from dataclasses import dataclass, field
from typing import Callable


@dataclass(order=True)
class Timer:
    when: float
    priority: int
    seq: int
    callback: Callable[[], None] = field(compare=False)
    cancelled: bool = field(default=False, compare=False)

    def cancel(self) -> None:
        self.cancelled = True


class Clock:
    live = False

    def __init__(self):
        self._queue: list[Timer] = []
        self._seq = itertools.count()

    def now(self) -> float:
        raise NotImplementedError

    def _wait_until(self, when: float) -> None:
        raise NotImplementedError

    def call_at(self, when: float, callback: Callable[[], None], priority: int = 0) -> Timer:
        timer = Timer(when, priority, next(self._seq), callback)
        heapq.heappush(self._queue, timer)
        return timer

    def call_later(self, delay: float, callback: Callable[[], None], priority: int = 0) -> Timer:
        return self.call_at(self.now() + delay, callback, priority)

    def call_every(
        self, interval: float, callback: Callable[[], None], start: float | None = None, priority: int = 0
    ) -> "Repeating":
        if interval <= 0:
            raise ValueError("interval must be positive")
        return Repeating(self, interval, callback, self.now() if start is None else start, priority)

    def pending(self) -> int:
        return sum(1 for t in self._queue if not t.cancelled)

    def run_until(self, when: float) -> None:
        """Run every event due at or before ``when``, then leave the clock at ``when``."""
        while self._queue and self._queue[0].when <= when:
            timer = heapq.heappop(self._queue)
            if timer.cancelled:
                continue
            self._wait_until(timer.when)
            timer.callback()
        self._wait_until(when)

    def sleep(self, seconds: float) -> None:
        self.run_until(self.now() + seconds)


class Repeating:
    """Periodic callback at ``start + k * interval`` (no drift accumulation)."""

    def __init__(self, clock: Clock, interval: float, callback: Callable[[], None], start: float, priority: int):
        self.clock = clock
        self.interval = interval
        self.callback = callback
        self.priority = priority
        self._start = start
        self._k = 0
        self._timer: Timer | None = None
        self._schedule()

    def _schedule(self) -> None:
        self._timer = self.clock.call_at(self._start + self._k * self.interval, self._fire, self.priority)

    def _fire(self) -> None:
        self._k += 1
        self._schedule()
        self.callback()

    def cancel(self) -> None:
        if self._timer is not None:
            self._timer.cancel()
            self._timer = None


class SimClock(Clock):
    """Simulated time in seconds, starting at ``start``."""

    def __init__(self, start: float = 0.0):
        super().__init__()
        self._now = float(start)

    def now(self) -> float:
        return self._now

    def _wait_until(self, when: float) -> None:
        if when > self._now:
            self._now = float(when)


class RealClock(Clock):
    """Wall-clock time (seconds since the epoch)."""

    live = True

    def __init__(self, sleep: Callable[[float], None] = time.sleep, timer: Callable[[], float] = time.time):
        super().__init__()
        self._sleep = sleep
        self._timer = timer

    def now(self) -> float:
        return self._timer()

    def _wait_until(self, when: float) -> None:
        remaining = when - self._timer()
        if remaining > 0:
            self._sleep(remaining)
