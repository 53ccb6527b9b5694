"""Global registry of edge servers and their tools.

Server liveness is lease-based: a server is online while its last heartbeat
is within one lease, stale up to three leases, offline after that. Discovery
only ever returns tools on online/stale servers whose last health report did
not mark them fault, filtered by the caller's scopes.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Iterable, Optional

from ..clock import Clock
from ..errors import (InvalidManifest, SchemaViolation, ToolUnavailable,
                      UnknownServer, UnknownTool)
from ..idgen import IdSource
from ..types import HealthReport, ServerManifest, ToolDescriptor

DEFAULT_LEASE_SECONDS = 30

ONLINE, STALE, OFFLINE = "online", "stale", "offline"


@dataclass
class ServerRecord:
    server_id: str
    manifest: ServerManifest
    last_heartbeat: float
    lease_seconds: int
    generation: int = 1
    last_report: Optional[HealthReport] = None
    last_status: str = ONLINE

    def status(self, now: float) -> str:
        age = now - self.last_heartbeat
        if age <= self.lease_seconds:
            return ONLINE
        if age <= 3 * self.lease_seconds:
            return STALE
        return OFFLINE

    def tool_available(self, tool_id: str) -> bool:
        if self.last_report is None:
            return True
        status = self.last_report.device_status.get(tool_id, "ready")
        ready = self.last_report.model_readiness.get(tool_id, True)
        return status in ("ready", "busy") and ready

    def to_dict(self, now: float) -> dict:
        return {
            "server_id": self.server_id,
            "name": self.manifest.name,
            "callback_url": self.manifest.callback_url,
            "status": self.status(now),
            "lease_seconds": self.lease_seconds,
            "generation": self.generation,
            "tool_count": len(self.manifest.tools),
        }


@dataclass(frozen=True)
class ToolBinding:
    """A discoverable tool together with its owning server."""
    descriptor: ToolDescriptor
    server_id: str
    callback_url: str


@dataclass
class RegistryView:
    """Immutable discovery snapshot for one principal, used by the planner."""
    bindings: tuple[ToolBinding, ...]

    def by_class(self, capability_class: str) -> list[ToolBinding]:
        return [b for b in self.bindings
                if b.descriptor.capability_class == capability_class]

    def get(self, tool_id: str) -> Optional[ToolBinding]:
        for b in self.bindings:
            if b.descriptor.tool_id == tool_id:
                return b
        return None

    def descriptors(self) -> list[ToolDescriptor]:
        return [b.descriptor for b in self.bindings]


class Registry:
    """Linearizable server/tool registry with lease-based health."""

    def __init__(self, clock: Clock, id_source: IdSource | None = None,
                 lease_seconds: int = DEFAULT_LEASE_SECONDS):
        self._clock = clock
        self._ids = id_source or IdSource()
        self._lease_seconds = lease_seconds
        self._servers: dict[str, ServerRecord] = {}
        self._by_url: dict[str, str] = {}
        self._lock = threading.RLock()

    # --- registration ------------------------------------------------------

    def register_server(self, manifest: ServerManifest) -> dict:
        """Store (or replace, for a repeated callback_url) a server record."""
        try:
            manifest = ServerManifest.from_dict(manifest.to_dict())
        except SchemaViolation as exc:
            raise InvalidManifest(str(exc)) from exc
        if not manifest.tools:
            raise InvalidManifest("manifest exports no tools")
        with self._lock:
            now = self._clock.now()
            existing = self._by_url.get(manifest.callback_url)
            if existing is not None:
                record = self._servers[existing]
                record.manifest = manifest
                record.last_heartbeat = now
                record.generation += 1
                record.last_report = None
                record.last_status = ONLINE
            else:
                sid = self._ids.server_id()
                record = ServerRecord(server_id=sid, manifest=manifest,
                                      last_heartbeat=now,
                                      lease_seconds=self._lease_seconds)
                self._servers[sid] = record
                self._by_url[manifest.callback_url] = sid
            return {"server_id": record.server_id,
                    "lease_seconds": record.lease_seconds}

    def deregister(self, server_id: str) -> None:
        with self._lock:
            record = self._servers.pop(server_id, None)
            if record is None:
                raise UnknownServer(server_id)
            self._by_url.pop(record.manifest.callback_url, None)

    def heartbeat(self, server_id: str, report: HealthReport) -> None:
        with self._lock:
            record = self._servers.get(server_id)
            if record is None:
                raise UnknownServer(server_id)
            record.last_heartbeat = self._clock.now()
            record.last_report = report
            record.last_status = ONLINE

    # --- discovery -----------------------------------------------------------

    def server(self, server_id: str) -> ServerRecord:
        with self._lock:
            record = self._servers.get(server_id)
            if record is None:
                raise UnknownServer(server_id)
            return record

    def server_status(self, server_id: str) -> str:
        try:
            return self.server(server_id).status(self._clock.now())
        except UnknownServer:
            return OFFLINE

    def servers(self) -> list[dict]:
        with self._lock:
            now = self._clock.now()
            return [r.to_dict(now) for r in
                    sorted(self._servers.values(), key=lambda r: r.server_id)]

    def _visible_bindings(self, scopes: set[str]) -> list[ToolBinding]:
        now = self._clock.now()
        out = []
        for record in self._servers.values():
            if record.status(now) == OFFLINE:
                continue
            for tool in record.manifest.tools:
                if not record.tool_available(tool.tool_id):
                    continue
                if not tool.required_scopes <= scopes:
                    continue
                out.append(ToolBinding(tool, record.server_id,
                                       record.manifest.callback_url))
        return out

    def find_tools(self, scopes: set[str], capability_class: str = "",
                   discipline_label: str = "", text: str = "") -> list[ToolDescriptor]:
        with self._lock:
            bindings = self._visible_bindings(scopes)
        found = []
        for b in bindings:
            t = b.descriptor
            if capability_class and t.capability_class != capability_class:
                continue
            if discipline_label:
                record = self._servers[b.server_id]
                if record.manifest.labels.get("discipline") != discipline_label:
                    continue
            if text and text.lower() not in (t.tool_id + " " + t.description).lower():
                continue
            found.append(t)
        found.sort(key=lambda t: (t.capability_class, t.tool_id))
        return found

    def snapshot(self, scopes: set[str]) -> RegistryView:
        with self._lock:
            bindings = self._visible_bindings(scopes)
        bindings.sort(key=lambda b: (b.descriptor.capability_class,
                                     b.descriptor.tool_id, b.server_id))
        return RegistryView(bindings=tuple(bindings))

    def resolve_tool(self, tool_id: str) -> ToolBinding:
        """Owning server for a tool; heartbeat recency breaks duplicate ids."""
        with self._lock:
            now = self._clock.now()
            owners = [r for r in self._servers.values()
                      if any(t.tool_id == tool_id for t in r.manifest.tools)]
            if not owners:
                raise UnknownTool(tool_id)
            owners.sort(key=lambda r: r.last_heartbeat, reverse=True)
            live = [r for r in owners if r.status(now) != OFFLINE]
            if not live:
                raise ToolUnavailable("offline", tool_id=tool_id)
            record = live[0]
            if not record.tool_available(tool_id):
                raise ToolUnavailable("fault", tool_id=tool_id)
            descriptor = next(t for t in record.manifest.tools
                              if t.tool_id == tool_id)
            return ToolBinding(descriptor, record.server_id,
                               record.manifest.callback_url)

    # --- leases ---------------------------------------------------------------

    def sweep_leases(self, now: float | None = None) -> list[dict]:
        """Recompute statuses; emit {server_id, from, to} per transition."""
        transitions = []
        with self._lock:
            now = self._clock.now() if now is None else now
            for record in self._servers.values():
                status = record.status(now)
                if status != record.last_status:
                    transitions.append({"server_id": record.server_id,
                                        "from": record.last_status, "to": status})
                    record.last_status = status
        return transitions
