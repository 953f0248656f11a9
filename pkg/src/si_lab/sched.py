"""Deterministic discrete-event scheduler.

Processes are generators.  They yield ``Sleep`` to let simulated time pass
and ``Until`` to suspend until a predicate over shared state holds.  Every
handler runs atomically between two yields, which is the execution model the
protocols assume.  All randomness comes from one seeded generator.
"""

from __future__ import annotations

import heapq
import random
from dataclasses import dataclass, field
from typing import Any, Callable, Generator, NamedTuple

Proc = Generator[Any, Any, Any]


class Sleep(NamedTuple):
    nanos: int


class Until(NamedTuple):
    pred: Callable[[], bool]
    label: str = ""
    # Waiters released by the same event resume in ascending priority order.
    priority: Any = 0
    # Daemon waits (idle replication loops) never count as a deadlock.
    daemon: bool = False


class SimulationDeadlock(RuntimeError):
    pass


@dataclass
class Process:
    name: str
    gen: Proc
    pid: int
    done: bool = False
    result: Any = None
    waiting: Until | None = field(default=None, repr=False)


class Simulator:
    def __init__(self, seed: int, max_steps: int | None = None):
        self.rng = random.Random(seed)
        self.now = 0
        self.seq = 0
        self.steps = 0
        self.max_steps = max_steps
        self._queue: list[tuple[int, int, Process, Any]] = []
        self._waiting: list[Process] = []
        self._pids = 0
        self._last_stamp = 0
        self._channels: dict[Any, int] = {}

    # time ----------------------------------------------------------------
    def stamp(self) -> int:
        """A wall-clock reading; distinct and increasing across calls."""
        self._last_stamp = max(self.now, self._last_stamp + 1)
        return self._last_stamp

    def uniform(self, bounds: tuple[int, int]) -> int:
        lo, hi = bounds
        return lo if hi <= lo else self.rng.randint(lo, hi)

    def channel_delay(self, channel: Any, nanos: int) -> int:
        """Delay for a message on ``channel`` that keeps delivery FIFO."""
        at = max(self.now + nanos, self._channels.get(channel, -1) + 1)
        self._channels[channel] = at
        return at - self.now

    # processes -----------------------------------------------------------
    def spawn(self, gen: Proc, name: str = "", delay: int = 0) -> Process:
        self._pids += 1
        proc = Process(name or f"p{self._pids}", gen, self._pids)
        self._push(self.now + delay, proc, None)
        return proc

    def _push(self, at: int, proc: Process, value: Any) -> None:
        self.seq += 1
        heapq.heappush(self._queue, (at, self.seq, proc, value))

    def _step(self, proc: Process, value: Any) -> None:
        while True:
            try:
                cmd = proc.gen.send(value)
            except StopIteration as stop:
                proc.done = True
                proc.result = stop.value
                return
            if type(cmd) is Sleep:
                self._push(self.now + cmd.nanos, proc, None)
                return
            if type(cmd) is Until:
                if cmd.pred():
                    value = None
                    continue
                proc.waiting = cmd
                self._waiting.append(proc)
                return
            raise TypeError(f"process {proc.name} yielded {cmd!r}")

    def _release(self) -> None:
        ready = [p for p in self._waiting if p.waiting.pred()]  # type: ignore[union-attr]
        if not ready:
            return
        ready_ids = {p.pid for p in ready}
        self._waiting = [p for p in self._waiting if p.pid not in ready_ids]
        ready.sort(key=lambda p: (p.waiting.priority, p.pid))  # type: ignore[union-attr]
        for p in ready:
            p.waiting = None
            self._push(self.now, p, None)

    def run(self) -> None:
        while self._queue:
            at, _, proc, value = heapq.heappop(self._queue)
            self.now = at
            self.steps += 1
            if self.max_steps is not None and self.steps > self.max_steps:
                raise SimulationDeadlock(f"step budget of {self.max_steps} exhausted")
            self._step(proc, value)
            if self._waiting:
                self._release()
        stuck = [p for p in self._waiting if not p.waiting.daemon]  # type: ignore[union-attr]
        if stuck:
            dump = "\n".join(f"  {p.name}: {p.waiting.label}" for p in stuck)  # type: ignore[union-attr]
            raise SimulationDeadlock(f"no runnable events with {len(stuck)} pending waits:\n{dump}")
