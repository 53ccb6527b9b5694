"""Per-experiment provenance: append-only hash-chained event logs on disk.

Layout under the storage root:

    experiments/<eid>/events.jsonl   one canonical-JSON event per line
    experiments/<eid>/specs/v<n>.json
    experiments/<eid>/context.json
    archives/<eid>/                  sealed bundle (context + specs + log)

Appends are serialized per experiment and fsync'd before returning; readers
see a consistent prefix plus a live tail via subscriptions.
"""

from __future__ import annotations

import os
import shutil
import threading
from pathlib import Path
from typing import Iterable, Optional

from . import canonical
from .clock import Clock
from .errors import (Archived, BundleCorrupt, NotTerminal, SchemaViolation,
                     StorageFailure, UnknownExperiment)
from .events import hash_event, make_event
from .graph import layer_index
from .types import (GENESIS_HASH, Event, ExperimentContext, WorkflowSpec)

TERMINAL_KINDS = ("experiment_completed", "experiment_failed")

PROJECTION_KINDS = ("task_completed", "task_failed", "task_compensated",
                    "rollback_skipped") + TERMINAL_KINDS


class _Log:
    def __init__(self, directory: Path):
        self.dir = directory
        self.events_path = directory / "events.jsonl"
        self.lock = threading.RLock()
        self.cond = threading.Condition(self.lock)
        self.cache: list[Event] = []
        self.last_hash = GENESIS_HASH
        self.archived = False
        self._fh = None
        self._recover()

    def _recover(self) -> None:
        if not self.events_path.exists():
            return
        with self.events_path.open("r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                event = Event.from_dict(canonical.loads(line))
                self.cache.append(event)
                self.last_hash = event.hash
                if event.kind == "experiment_archived":
                    self.archived = True

    @property
    def last_seq(self) -> int:
        return len(self.cache)

    def handle(self):
        if self._fh is None:
            self._fh = self.events_path.open("ab")
        return self._fh


class ProvenanceStore:
    def __init__(self, root: str | Path, clock: Clock):
        self._root = Path(root)
        self._clock = clock
        self._logs: dict[str, _Log] = {}
        self._lock = threading.RLock()
        (self._root / "experiments").mkdir(parents=True, exist_ok=True)
        (self._root / "archives").mkdir(parents=True, exist_ok=True)

    # --- log lookup -----------------------------------------------------------

    def _dir(self, experiment_id: str) -> Path:
        return self._root / "experiments" / experiment_id

    def create(self, experiment_id: str) -> None:
        with self._lock:
            directory = self._dir(experiment_id)
            directory.mkdir(parents=True, exist_ok=True)
            (directory / "specs").mkdir(exist_ok=True)
            self._logs.setdefault(experiment_id, _Log(directory))

    def _log(self, experiment_id: str) -> _Log:
        with self._lock:
            log = self._logs.get(experiment_id)
            if log is None:
                if not self._dir(experiment_id).exists():
                    raise UnknownExperiment(experiment_id)
                log = _Log(self._dir(experiment_id))
                self._logs[experiment_id] = log
            return log

    def known(self, experiment_id: str) -> bool:
        return (experiment_id in self._logs
                or self._dir(experiment_id).exists())

    def experiment_ids(self) -> list[str]:
        base = self._root / "experiments"
        return sorted(p.name for p in base.iterdir() if p.is_dir())

    # --- append / read ----------------------------------------------------------

    def append(self, experiment_id: str, kind: str, actor: str,
               payload: dict, timestamp: Optional[str] = None) -> Event:
        log = self._log(experiment_id)
        with log.cond:
            if log.archived:
                raise Archived(experiment_id)
            event = make_event(
                seq=log.last_seq + 1,
                timestamp=timestamp or self._clock.timestamp(),
                experiment_id=experiment_id, kind=kind, actor=actor,
                payload=payload, prev_hash=log.last_hash)
            line = canonical.dumps_bytes(event.to_dict()) + b"\n"
            try:
                fh = log.handle()
                fh.write(line)
                fh.flush()
                os.fsync(fh.fileno())
            except OSError as exc:
                raise StorageFailure(str(exc)) from exc
            log.cache.append(event)
            log.last_hash = event.hash
            if kind == "experiment_archived":
                log.archived = True
            log.cond.notify_all()
            return event

    def read(self, experiment_id: str, from_seq: int = 1) -> list[Event]:
        log = self._log(experiment_id)
        with log.lock:
            return log.cache[max(from_seq - 1, 0):]

    def last_seq(self, experiment_id: str) -> int:
        log = self._log(experiment_id)
        with log.lock:
            return log.last_seq

    def subscribe(self, experiment_id: str, from_seq: int = 1) -> "Subscription":
        return Subscription(self._log(experiment_id), from_seq)

    # --- verification ---------------------------------------------------------------

    def verify_chain(self, experiment_id: str) -> Optional[int]:
        """None when the on-disk chain verifies, else the first bad seq.

        The store's in-memory head is the authority for log length, so tail
        truncation (which a bare hash walk cannot see) is reported as the
        first missing seq.
        """
        log = self._log(experiment_id)
        with log.lock:
            head = log.last_seq
            try:
                lines = log.events_path.read_text(encoding="utf-8").splitlines()
            except OSError as exc:
                raise StorageFailure(str(exc)) from exc
        prev = GENESIS_HASH
        expected = 1
        for line in lines:
            if not line.strip():
                continue
            try:
                event = Event.from_dict(canonical.loads(line))
            except Exception:
                return expected
            if (event.seq != expected or event.prev_hash != prev
                    or hash_event(event.to_dict()) != event.hash):
                return expected
            prev = event.hash
            expected += 1
        if expected <= head:
            return expected  # on-disk log is shorter than the known head
        return None

    # --- specs and context -------------------------------------------------------------

    def save_spec(self, experiment_id: str, spec: WorkflowSpec) -> None:
        log = self._log(experiment_id)
        path = log.dir / "specs" / f"v{spec.version}.json"
        path.write_bytes(canonical.dumps_bytes(spec.to_dict()) + b"\n")

    def load_specs(self, experiment_id: str) -> list[WorkflowSpec]:
        log = self._log(experiment_id)
        specs = []
        for path in sorted((log.dir / "specs").glob("v*.json"),
                           key=lambda p: int(p.stem[1:])):
            specs.append(WorkflowSpec.from_dict(canonical.loads(path.read_bytes())))
        return specs

    def save_context(self, context: ExperimentContext) -> None:
        log = self._log(context.experiment_id)
        (log.dir / "context.json").write_bytes(
            canonical.dumps_bytes(context.to_dict()) + b"\n")

    # --- archive ---------------------------------------------------------------------------

    def is_terminal(self, experiment_id: str) -> bool:
        events = self.read(experiment_id)
        return any(e.kind in TERMINAL_KINDS for e in events)

    def archive(self, experiment_id: str, actor: str = "hub") -> Path:
        """Seal the log and write the bundle directory. Returns its path."""
        log = self._log(experiment_id)
        with log.lock:
            if log.archived:
                raise Archived(experiment_id)
            if not self.is_terminal(experiment_id):
                raise NotTerminal(experiment_id)
            bundle = self._root / "archives" / experiment_id
            self.append(experiment_id, "experiment_archived", actor,
                        {"bundle_path": str(bundle)})
            if log._fh is not None:
                log._fh.close()
                log._fh = None
            if bundle.exists():
                shutil.rmtree(bundle)
            shutil.copytree(log.dir, bundle)
            return bundle


class Subscription:
    """Ordered, gap-free reader over one experiment log plus its live tail."""

    def __init__(self, log: _Log, from_seq: int):
        self._log = log
        self._next = max(from_seq, 1)
        self._closed = False

    def poll(self, timeout: float = 0.0) -> list[Event]:
        """Events with seq >= cursor; blocks up to ``timeout`` when empty."""
        if self._closed:
            return []
        with self._log.cond:
            if self._next > self._log.last_seq and timeout > 0:
                self._log.cond.wait(timeout)
            batch = self._log.cache[self._next - 1:]
            self._next += len(batch)
            return list(batch)

    @property
    def cursor(self) -> int:
        return self._next

    def close(self) -> None:
        self._closed = True


# --- replay comparison ------------------------------------------------------------

def project_events(events: Iterable[Event], spec: WorkflowSpec) -> list[dict]:
    """Timing-free projection, parallel branches normalized by layer + node id.

    Keeps (kind, node_id, outputs/error/node_states) for terminal task and
    experiment events; drops timestamps, seqs, and latencies so legitimate
    interleaving and clock differences do not register as divergence.
    """
    idx = layer_index(spec)
    rows = []
    big = 10 ** 9
    for event in events:
        if event.kind not in PROJECTION_KINDS:
            continue
        node_id = event.payload.get("node_id", "")
        row = {"kind": event.kind, "node_id": node_id}
        if "outputs" in event.payload:
            row["outputs"] = event.payload["outputs"]
        if event.kind == "task_failed":
            row["error"] = event.payload.get("error", "")
        if event.kind in TERMINAL_KINDS:
            row["node_states"] = event.payload.get("node_states", {})
        rows.append((idx.get(node_id, big), node_id, row))
    rows.sort(key=lambda r: (r[0], r[1]))  # stable: same-node order preserved
    return [row for _, _, row in rows]


def replay_check(archived_events: Iterable[Event],
                 fresh_events: Iterable[Event],
                 spec: WorkflowSpec) -> Optional[dict]:
    """None when both projections agree; else the first divergence."""
    a = project_events(archived_events, spec)
    b = project_events(fresh_events, spec)
    for i, (ra, rb) in enumerate(zip(a, b)):
        if ra != rb:
            return {"index": i, "archived": ra, "fresh": rb}
    if len(a) != len(b):
        i = min(len(a), len(b))
        return {"index": i,
                "archived": a[i] if i < len(a) else None,
                "fresh": b[i] if i < len(b) else None}
    return None


def load_bundle(path: str | Path) -> dict:
    """Read an archive bundle; verifies shape, not the hash chain."""
    bundle = Path(path)
    events_path = bundle / "events.jsonl"
    context_path = bundle / "context.json"
    if not events_path.exists() or not context_path.exists():
        raise BundleCorrupt(f"{bundle} is not an archive bundle")
    try:
        context = ExperimentContext.from_dict(
            canonical.loads(context_path.read_bytes()))
        events = [Event.from_dict(canonical.loads(line))
                  for line in events_path.read_text(encoding="utf-8").splitlines()
                  if line.strip()]
        specs = [WorkflowSpec.from_dict(canonical.loads(p.read_bytes()))
                 for p in sorted((bundle / "specs").glob("v*.json"),
                                 key=lambda p: int(p.stem[1:]))]
    except (SchemaViolation, Exception) as exc:
        if isinstance(exc, BundleCorrupt):
            raise
        raise BundleCorrupt(f"unreadable bundle: {exc}") from exc
    if not specs:
        raise BundleCorrupt("bundle holds no workflow specs")
    if not events or events[-1].kind != "experiment_archived":
        raise BundleCorrupt("bundle log does not end in experiment_archived")
    return {"context": context, "specs": specs, "events": events}


def verify_bundle_chain(events: list[Event]) -> Optional[int]:
    prev = GENESIS_HASH
    for expected, event in enumerate(events, start=1):
        if (event.seq != expected or event.prev_hash != prev
                or hash_event(event.to_dict()) != event.hash):
            return expected
        prev = event.hash
    return None
