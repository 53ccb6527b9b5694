"""Edge-server SDK: tool export, hub auto-registration, invoke/cancel/health.

Wire protocol (all JSON):

    GET  /scp/tools   -> {"server": name, "tools": [ToolDescriptor...]}
    GET  /scp/health  -> HealthReport body
    POST /scp/invoke  -> line-delimited stream of task events: zero or more
                         task_progress lines, then exactly one terminal
                         task_completed or task_failed line
    POST /scp/cancel  -> {"ok": true}

An invoke runs its handler on a worker thread; cancellation is a
cooperative event the handler observes between progress emissions.
Physical-class tools admit one invoke at a time and answer 409 while busy.
"""

from __future__ import annotations

import json
import queue
import threading
import time
from dataclasses import dataclass
from typing import Callable, Optional

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, StreamingResponse

from .. import canonical
from ..clock import SystemClock
from ..errors import DuplicateToolId, InvalidDescriptor, SchemaViolation
from ..types import ServerManifest, ToolDescriptor
from ..validation import validate_output
from .mocklab import MockLab


class ToolError(Exception):
    """Raised by handlers to fail a task with a machine-readable message."""


class CancelledTask(Exception):
    pass


class TaskContext:
    def __init__(self, task_id: str, experiment_context: dict,
                 cancel_event: threading.Event, emit: Callable):
        self.task_id = task_id
        self.experiment_context = experiment_context
        self._cancel = cancel_event
        self._emit = emit

    @property
    def cancelled(self) -> bool:
        return self._cancel.is_set()

    def check_cancelled(self) -> None:
        if self.cancelled:
            raise CancelledTask(self.task_id)

    def emit_progress(self, progress: float, message: str = "") -> None:
        self.check_cancelled()
        self._emit({"kind": "task_progress",
                    "payload": {"progress": progress, "message": message}})

    def sleep(self, seconds: float) -> None:
        """Cancellation-aware sleep."""
        if self._cancel.wait(timeout=max(seconds, 0.0)):
            raise CancelledTask(self.task_id)


@dataclass
class ToolHandler:
    descriptor: ToolDescriptor
    handler: Callable  # (params: dict, ctx: TaskContext) -> dict


class EdgeServer:
    def __init__(self, name: str, labels: Optional[dict] = None):
        self.name = name
        self.labels = labels or {}
        self.clock = SystemClock()
        self._tools: dict[str, ToolHandler] = {}
        self._running: dict[str, threading.Event] = {}
        self._tool_locks: dict[str, threading.Lock] = {}
        self._lock = threading.RLock()
        self.server_id: str = ""
        self.server_token: str = ""

    # --- tool export -----------------------------------------------------------

    def export_tool(self, descriptor: ToolDescriptor, handler: Callable) -> None:
        try:  # re-validate so invariants hold even for hand-built descriptors
            descriptor = ToolDescriptor.from_dict(descriptor.to_dict())
        except SchemaViolation as exc:
            raise InvalidDescriptor(str(exc)) from exc
        with self._lock:
            if descriptor.tool_id in self._tools:
                raise DuplicateToolId(descriptor.tool_id)
            self._tools[descriptor.tool_id] = ToolHandler(descriptor, handler)
            self._tool_locks[descriptor.tool_id] = threading.Lock()

    def tool(self, descriptor: ToolDescriptor):
        """Decorator form of export_tool."""
        def register(fn):
            self.export_tool(descriptor, fn)
            return fn
        return register

    def descriptors(self) -> list[ToolDescriptor]:
        with self._lock:
            return [t.descriptor for _, t in sorted(self._tools.items())]

    def manifest(self, callback_url: str) -> ServerManifest:
        return ServerManifest(name=self.name, callback_url=callback_url,
                              tools=self.descriptors(), labels=self.labels)

    @classmethod
    def from_mock_lab(cls, lab: MockLab, latency_scale: float = 1.0,
                      name: Optional[str] = None,
                      labels: Optional[dict] = None) -> "EdgeServer":
        """Export every fixture tool, simulating its latency in real time."""
        server = cls(name or lab.name, labels=labels)
        for descriptor in lab.descriptors():
            def handler(params, ctx, _tool_id=descriptor.tool_id):
                outcome = lab.execute(_tool_id, params, ctx.task_id)
                delay = outcome.latency_ms * latency_scale / 1000.0
                ctx.sleep(delay / 2)
                ctx.emit_progress(0.5)
                ctx.sleep(delay / 2)
                if outcome.error is not None:
                    raise ToolError(outcome.error)
                return outcome.outputs
            server.export_tool(descriptor, handler)
        return server

    # --- health ---------------------------------------------------------------------

    def health_report(self) -> dict:
        with self._lock:
            device_status = {}
            for tool_id, handler in self._tools.items():
                if handler.descriptor.side_effect == "physical":
                    busy = self._tool_locks[tool_id].locked()
                    device_status[tool_id] = "busy" if busy else "ready"
                else:
                    device_status[tool_id] = "ready"
            readiness = {tool_id: True for tool_id in self._tools}
        return {
            "server_id": self.server_id,
            "device_status": device_status,
            "model_readiness": readiness,
            "resource_utilization": {"cpu_pct": 0.0, "mem_pct": 0.0},
            "reported_at": self.clock.timestamp(),
        }

    # --- invoke -----------------------------------------------------------------------

    def _check_params(self, handler: ToolHandler, params: dict) -> Optional[str]:
        for schema in handler.descriptor.params_schema:
            if schema.name not in params:
                if schema.required:
                    return f"missing param {schema.name!r}"
                continue
            violation = validate_output(params[schema.name], schema)
            if violation is not None:
                return f"param {schema.name!r}: {violation.detail}"
        return None

    def _local_output_check(self, handler: ToolHandler,
                            outputs: dict) -> Optional[str]:
        for schema in handler.descriptor.outputs_schema:
            if schema.name not in outputs:
                if schema.required:
                    return f"missing output {schema.name!r}"
                continue
            violation = validate_output(outputs[schema.name], schema)
            if violation is not None:
                return f"output {schema.name!r}: {violation.detail}"
        return None

    def invoke_stream(self, body: dict):
        """Returns (status_code, error) or (200, line iterator)."""
        task_id = body.get("task_id", "")
        tool_id = body.get("tool_id", "")
        params = body.get("params", {}) or {}
        if self.server_token and body.get("server_token") != self.server_token:
            return 401, {"code": "bad_server_token",
                         "message": "server token mismatch"}
        handler = self._tools.get(tool_id)
        if handler is None:
            return 404, {"code": "unknown_tool", "message": tool_id}
        bad = self._check_params(handler, params)
        if bad:
            return 422, {"code": "bad_params", "message": bad}
        tool_lock = self._tool_locks[tool_id]
        physical = handler.descriptor.side_effect == "physical"
        if physical and not tool_lock.acquire(blocking=False):
            return 409, {"code": "device_busy", "message": tool_id}

        cancel_event = threading.Event()
        with self._lock:
            self._running[task_id] = cancel_event
        out: "queue.Queue[Optional[dict]]" = queue.Queue()

        def emit(message: dict) -> None:
            out.put(message)

        def work() -> None:
            ctx = TaskContext(task_id, body.get("experiment_context", {}),
                              cancel_event, emit)
            try:
                outputs = handler.handler(params, ctx)
                bad_out = self._local_output_check(handler, outputs or {})
                if bad_out:
                    emit({"kind": "task_failed",
                          "payload": {"error":
                                      f"local_schema_check_failed: {bad_out}"}})
                else:
                    emit({"kind": "task_completed",
                          "payload": {"outputs": outputs or {}}})
            except CancelledTask:
                emit({"kind": "task_failed", "payload": {"error": "cancelled"}})
            except ToolError as exc:
                emit({"kind": "task_failed", "payload": {"error": str(exc)}})
            except Exception as exc:  # handler bug: fail the task, not the server
                emit({"kind": "task_failed",
                      "payload": {"error": f"handler_error: {exc}"}})
            finally:
                emit(None)

        worker = threading.Thread(target=work, daemon=True)
        worker.start()

        def lines():
            try:
                while True:
                    message = out.get()
                    if message is None:
                        break
                    message = {"task_id": task_id, **message}
                    yield canonical.dumps(message) + "\n"
                    if message["kind"] in ("task_completed", "task_failed"):
                        break
            finally:
                with self._lock:
                    self._running.pop(task_id, None)
                if physical:
                    tool_lock.release()

        return 200, lines()

    def cancel(self, task_id: str) -> bool:
        """Signal a running task; True if it was (or already finished) here."""
        with self._lock:
            event = self._running.get(task_id)
        if event is None:
            return False
        event.set()
        return True

    # --- FastAPI app ----------------------------------------------------------------------

    def build_app(self) -> FastAPI:
        app = FastAPI(title=f"scp-edge:{self.name}")
        server = self

        @app.get("/scp/tools")
        def tools():
            return {"server": server.name,
                    "tools": [t.to_dict() for t in server.descriptors()]}

        @app.get("/scp/health")
        def health():
            return server.health_report()

        @app.post("/scp/invoke")
        async def invoke(request: Request):
            body = await request.json()
            status, result = server.invoke_stream(body)
            if status != 200:
                return JSONResponse(result, status_code=status)
            return StreamingResponse(result, media_type="application/x-ndjson")

        @app.post("/scp/cancel")
        async def cancel(request: Request):
            body = await request.json()
            if self.server_token and \
                    body.get("server_token") != self.server_token:
                return JSONResponse({"code": "bad_server_token"},
                                    status_code=401)
            task_id = body.get("task_id", "")
            if not server.cancel(task_id):
                return JSONResponse({"code": "unknown_task",
                                     "message": task_id}, status_code=404)
            return {"ok": True}

        return app


class EdgeRegistration(threading.Thread):
    """Registers with a hub and keeps the heartbeat lease alive.

    Heartbeats run at lease/3; a 404 (hub restarted, lease record gone)
    triggers re-registration; connection errors back off exponentially up
    to 60 s. Call stop() to end the loop.
    """

    def __init__(self, server: EdgeServer, hub_url: str, credentials: dict,
                 advertise_url: str):
        super().__init__(daemon=True)
        self.server = server
        self.hub_url = hub_url
        self.credentials = credentials
        self.advertise_url = advertise_url
        self.registered = threading.Event()
        self.lease_seconds = 30
        self._stop = threading.Event()
        self._heartbeats_sent = 0

    def stop(self) -> None:
        self._stop.set()

    @property
    def heartbeats_sent(self) -> int:
        return self._heartbeats_sent

    def _register(self, client) -> None:
        token = client.issue_token(self.credentials["principal_id"],
                                   self.credentials["secret"],
                                   ["tools.read"])
        client.token = token["value"]
        out = client.register_server(
            self.server.manifest(self.advertise_url).to_dict())
        self.server.server_id = out["server_id"]
        self.server.server_token = out["server_token"]
        self.lease_seconds = out["lease_seconds"]
        self.registered.set()

    def run(self) -> None:
        from ..client import ApiClientError, HubClient
        backoff = 0.5
        client = HubClient(self.hub_url)
        try:
            while not self._stop.is_set():
                try:
                    if not self.registered.is_set():
                        self._register(client)
                        backoff = 0.5
                    client.heartbeat(self.server.server_id,
                                     self.server.health_report(),
                                     token=self.server.server_token)
                    self._heartbeats_sent += 1
                    self._stop.wait(self.lease_seconds / 3)
                except ApiClientError as exc:
                    if exc.status in (401, 404):  # hub lost us: register again
                        self.registered.clear()
                        continue
                    self._stop.wait(backoff)
                    backoff = min(backoff * 2, 60.0)
        finally:
            client.close()


def auto_register(server: EdgeServer, hub_url: str, credentials: dict,
                  advertise_url: str, wait_seconds: float = 0.0) -> EdgeRegistration:
    """Start the registration/heartbeat loop; optionally wait until live."""
    registration = EdgeRegistration(server, hub_url, credentials, advertise_url)
    registration.start()
    if wait_seconds:
        registration.registered.wait(timeout=wait_seconds)
    return registration
