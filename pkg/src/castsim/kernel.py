"""Deterministic discrete-event kernel.

Time is an integer tick count; one tick is one 1 ms TTI. Events with the same
``fire_at`` are dispatched in insertion order, so ``(fire_at, seq)`` is a strict
total order and two runs with the same inputs dispatch identically.
"""
from __future__ import annotations

import enum
import heapq
import itertools
import zlib
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

import numpy as np

TTI_MS = 1
TICKS_PER_SECOND = 1000


def seconds(s: float) -> int:
    """Convert seconds to ticks (rounded to the nearest TTI)."""
    return int(round(s * TICKS_PER_SECOND))


def to_seconds(ticks: int) -> float:
    return ticks / TICKS_PER_SECOND


class EventKind(enum.Enum):
    SEGMENT_ENQUEUE = "segment-enqueue"
    PACKET_ARRIVAL = "packet-arrival"
    MOOD_EVALUATE = "mood-evaluate"
    MOBILITY_STEP = "mobility-step"
    CLIENT_TICK = "client-tick"
    ALERT_TRIGGER = "alert-trigger"
    SCHEDULER_TTI = "scheduler-tti"


class SchedulingError(RuntimeError):
    """Raised when an event is scheduled before the current time."""


@dataclass(order=False)
class Event:
    fire_at: int
    seq: int
    kind: EventKind
    handler: Callable[["Event"], Any] = field(repr=False)
    payload: Any = None
    cancelled: bool = False

    def cancel(self) -> None:
        self.cancelled = True


class Simulator:
    """Single-threaded event loop with a binary heap keyed by (fire_at, seq)."""

    def __init__(self, seed: int = 0, trace: bool = False):
        self.seed = int(seed)
        self._now = 0
        self._queue: list[tuple[int, int, Event]] = []
        self._seq = itertools.count()
        self._rngs: dict[str, np.random.Generator] = {}
        self.trace = trace
        self.event_log: list[tuple[int, int, str]] = []
        self.dispatched = 0

    def now(self) -> int:
        return self._now

    def schedule(self, fire_at: int, kind: EventKind, handler: Callable[[Event], Any],
                 payload: Any = None) -> Event:
        fire_at = int(fire_at)
        if fire_at < self._now:
            raise SchedulingError(
                f"cannot schedule {kind.value} at t={fire_at} < now={self._now}")
        ev = Event(fire_at, next(self._seq), kind, handler, payload)
        heapq.heappush(self._queue, (fire_at, ev.seq, ev))
        return ev

    def schedule_in(self, delay: int, kind: EventKind, handler, payload=None) -> Event:
        return self.schedule(self._now + int(delay), kind, handler, payload)

    def peek_time(self) -> Optional[int]:
        while self._queue and self._queue[0][2].cancelled:
            heapq.heappop(self._queue)
        return self._queue[0][0] if self._queue else None

    def run_until(self, t_end: int) -> int:
        """Dispatch every event with ``fire_at <= t_end`` and leave ``now() == t_end``."""
        t_end = int(t_end)
        if t_end < self._now:
            raise SchedulingError(f"run_until({t_end}) is in the past (now={self._now})")
        count = 0
        queue = self._queue
        while queue and queue[0][0] <= t_end:
            fire_at, seq, ev = heapq.heappop(queue)
            if ev.cancelled:
                continue
            self._now = fire_at
            if self.trace:
                self.event_log.append((fire_at, seq, ev.kind.value))
            ev.handler(ev)
            count += 1
        self._now = t_end
        self.dispatched += count
        return count

    def rng(self, stream_id: str) -> np.random.Generator:
        """Named random stream; identical (seed, stream_id) gives identical draws."""
        gen = self._rngs.get(stream_id)
        if gen is None:
            gen = make_rng(self.seed, stream_id)
            self._rngs[stream_id] = gen
        return gen


def make_rng(seed: int, stream_id: str) -> np.random.Generator:
    # crc32 is stable across platforms and interpreter runs, unlike hash()
    key = zlib.crc32(stream_id.encode("utf-8"))
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=(key,))
    return np.random.Generator(np.random.PCG64(ss))
