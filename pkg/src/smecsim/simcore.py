"""Deterministic discrete-event engine: integer-microsecond clock, event queue, seeded streams."""
from __future__ import annotations

import hashlib
import heapq
import random
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

US_PER_MS = 1_000
US_PER_S = 1_000_000

# signed 64-bit ceiling; anything beyond is treated as overflow
MAX_TIME = 2**63 - 1


class ContractViolation(RuntimeError):
    """Raised when a caller breaks an operation's precondition (fatal inside a run)."""


def ms(value: float) -> int:
    return int(round(value * US_PER_MS))


def seconds(value: float) -> int:
    return int(round(value * US_PER_S))


def check_time(value: int) -> int:
    if not isinstance(value, int):
        raise TypeError(f"simulated time must be an int of microseconds, got {type(value).__name__}")
    if value < 0 or value > MAX_TIME:
        raise OverflowError(f"simulated time {value} outside [0, {MAX_TIME}]")
    return value


@dataclass(order=True)
class SimEvent:
    time: int
    seq: int
    kind: str = field(compare=False)
    action: Optional[Callable[..., Any]] = field(compare=False, default=None, repr=False)
    args: tuple = field(compare=False, default=(), repr=False)
    tag: Any = field(compare=False, default=None)


def stream_seed(seed: int, label: str) -> int:
    """Derive a 64-bit sub-seed from the master seed and a consumer label."""
    digest = hashlib.sha256(f"{int(seed) & 0xFFFFFFFFFFFFFFFF}:{label}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def rng_stream(seed: int, label: str) -> random.Random:
    """Independent ``random.Random`` per consumer; adding a label never shifts another's draws."""
    return random.Random(stream_seed(seed, label))


class Simulator:
    """Single-threaded event loop ordered by ``(time, seq)``.

    Every processed event is folded into a running SHA-256 over
    ``time, seq, kind, tag`` so two runs can be compared by ``trace_digest()``.
    Set ``keep_trace`` to also retain the tuples in memory.
    """

    def __init__(self, seed: int = 0, keep_trace: bool = False):
        self.seed = seed
        self.now = 0
        self._queue: list[SimEvent] = []
        self._seq = 0
        self._hash = hashlib.sha256()
        self.keep_trace = keep_trace
        self.trace: list[tuple] = []
        self.processed = 0

    def rng(self, label: str) -> random.Random:
        return rng_stream(self.seed, label)

    def schedule(self, time: int, kind: str, action: Optional[Callable[..., Any]] = None,
                 *args: Any, tag: Any = None) -> SimEvent:
        check_time(time)
        if time < self.now:
            raise ContractViolation(f"cannot schedule {kind!r} at {time} us; clock is {self.now} us")
        ev = SimEvent(time, self._seq, kind, action, args, tag)
        self._seq += 1
        heapq.heappush(self._queue, ev)
        return ev

    def schedule_in(self, delay: int, kind: str, action: Optional[Callable[..., Any]] = None,
                    *args: Any, tag: Any = None) -> SimEvent:
        return self.schedule(check_time(self.now + delay), kind, action, *args, tag=tag)

    def peek_time(self) -> Optional[int]:
        return self._queue[0].time if self._queue else None

    def __len__(self) -> int:
        return len(self._queue)

    def step(self) -> SimEvent:
        ev = heapq.heappop(self._queue)
        if ev.time < self.now:
            raise ContractViolation("event queue ordering broken")
        self.now = ev.time
        self.processed += 1
        self._hash.update(f"{ev.time},{ev.seq},{ev.kind},{ev.tag}\n".encode())
        if self.keep_trace:
            self.trace.append((ev.time, ev.seq, ev.kind, ev.tag))
        if ev.action is not None:
            ev.action(*ev.args)
        return ev

    def run_until(self, limit: int) -> None:
        """Process every event with ``time <= limit``; the clock ends at ``limit``."""
        check_time(limit)
        queue = self._queue
        while queue and queue[0].time <= limit:
            self.step()
        if limit > self.now:
            self.now = limit

    def trace_digest(self) -> str:
        return self._hash.hexdigest()
