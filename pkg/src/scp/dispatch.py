"""Task dispatch transports between the hub executor and edge servers.

The executor only sees the ``Dispatcher`` surface; results flow back through
a ``ResultSink`` (the executor itself). ``LocalDispatcher`` runs a mock lab
in-process on a simulated clock, delivering each result by jumping the clock
to its virtual due time, which makes whole-experiment runs deterministic and
instant. The HTTP transport lives in ``scp.client``.
"""

from __future__ import annotations

import heapq
import threading
from dataclasses import dataclass, field
from typing import Optional, Protocol

from .clock import SimulatedClock
from .types import FieldSpec


@dataclass(frozen=True)
class Invocation:
    task_id: str
    experiment_id: str
    node_id: str
    tool_id: str
    server_id: str
    callback_url: str
    params: dict
    expected_outputs: tuple[FieldSpec, ...] = ()
    context: dict = field(default_factory=dict)
    kind: str = "task"  # task | compensation


class ResultSink(Protocol):
    def on_task_started(self, task_id: str) -> None: ...
    def on_task_progress(self, task_id: str, progress: float,
                         message: str = "") -> None: ...
    def on_task_result(self, task_id: str, outputs: Optional[dict] = None,
                       error: Optional[str] = None) -> None: ...


class Dispatcher(Protocol):
    def dispatch(self, invocation: Invocation) -> None: ...
    def cancel(self, task_id: str) -> None: ...


class LocalDispatcher:
    """In-process dispatcher over a mock lab and a simulated clock."""

    def __init__(self, lab, clock: SimulatedClock):
        self._lab = lab
        self._clock = clock
        self._heap: list[tuple[float, int, str]] = []
        self._pending: dict[str, tuple[Optional[dict], Optional[str]]] = {}
        self._cancelled: set[str] = set()
        self._counter = 0
        self._lock = threading.RLock()
        self.sink: Optional[ResultSink] = None

    def dispatch(self, inv: Invocation) -> None:
        outcome = self._lab.execute(inv.tool_id, inv.params, inv.task_id)
        with self._lock:
            self._counter += 1
            due = self._clock.now() + outcome.latency_ms / 1000.0
            self._pending[inv.task_id] = (outcome.outputs, outcome.error)
            heapq.heappush(self._heap, (due, self._counter, inv.task_id))
        self.sink.on_task_started(inv.task_id)

    def cancel(self, task_id: str) -> None:
        with self._lock:
            if task_id in self._pending:
                self._cancelled.add(task_id)
                self._counter += 1
                heapq.heappush(self._heap, (self._clock.now(), self._counter,
                                            task_id))

    def pending_count(self) -> int:
        with self._lock:
            return len(self._pending)

    def pump_next(self) -> bool:
        """Deliver the earliest due result, advancing the clock to it."""
        with self._lock:
            while self._heap:
                due, _, task_id = heapq.heappop(self._heap)
                if task_id in self._pending:
                    break
            else:
                return False
            outputs, error = self._pending.pop(task_id)
            if task_id in self._cancelled:
                self._cancelled.discard(task_id)
                outputs, error = None, "cancelled"
            if due > self._clock.now():
                self._clock.advance(due - self._clock.now())
        if error is not None:
            self.sink.on_task_result(task_id, error=error)
        else:
            self.sink.on_task_result(task_id, outputs=outputs)
        return True

    def run_until_idle(self, on_tick=None, max_steps: int = 100_000) -> int:
        steps = 0
        while self.pump_next():
            steps += 1
            if on_tick is not None:
                on_tick()
            if steps >= max_steps:
                raise RuntimeError("dispatcher did not quiesce")
        return steps
