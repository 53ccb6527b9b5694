"""HTTP client for the hub API, and the hub-side HTTP task dispatcher.

Both ends of the wire speak canonical JSON. The event stream and the edge
invoke stream are line-delimited JSON; lines starting with ``#`` are
keepalive comments and carry no data.
"""

from __future__ import annotations

import json
import threading
from typing import Iterator, Optional

import httpx

from .dispatch import Invocation
from .types import Event

AUTH_HEADER = "SCP-HUB-API-KEY"


class ApiClientError(Exception):
    def __init__(self, status: int, code: str, message: str = ""):
        super().__init__(f"{status} {code}: {message}")
        self.status = status
        self.code = code
        self.message = message


class HubClient:
    """Thin synchronous client over the hub endpoint table."""

    def __init__(self, base_url: str, token: str = "", timeout: float = 30.0):
        self.base_url = base_url.rstrip("/")
        self.token = token
        self._http = httpx.Client(base_url=self.base_url, timeout=timeout)

    def close(self) -> None:
        self._http.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _headers(self, token: Optional[str] = None) -> dict:
        value = self.token if token is None else token
        return {AUTH_HEADER: value} if value else {}

    def _request(self, method: str, path: str, *, body: dict | None = None,
                 params: dict | None = None, token: Optional[str] = None):
        try:
            response = self._http.request(method, path, json=body,
                                          params=params,
                                          headers=self._headers(token))
        except httpx.HTTPError as exc:
            raise ApiClientError(0, "network_error", str(exc)) from exc
        if response.status_code >= 400:
            try:
                payload = response.json()
            except json.JSONDecodeError:
                payload = {}
            raise ApiClientError(response.status_code,
                                 payload.get("code", "http_error"),
                                 payload.get("message", response.text[:200]))
        if response.status_code == 204 or not response.content:
            return None
        return response.json()

    # --- auth / servers ---------------------------------------------------------

    def issue_token(self, principal_id: str, secret: str, scopes: list[str],
                    experiment_binding: Optional[str] = None) -> dict:
        body = {"principal_id": principal_id, "secret": secret,
                "scopes": scopes}
        if experiment_binding:
            body["experiment_binding"] = experiment_binding
        return self._request("POST", "/api/v1/auth/token", body=body, token="")

    def register_server(self, manifest: dict) -> dict:
        return self._request("POST", "/api/v1/servers/register", body=manifest)

    def heartbeat(self, server_id: str, report: dict,
                  token: Optional[str] = None) -> None:
        self._request("POST", f"/api/v1/servers/{server_id}/heartbeat",
                      body=report, token=token)

    def deregister(self, server_id: str, token: Optional[str] = None) -> None:
        self._request("DELETE", f"/api/v1/servers/{server_id}", token=token)

    def tools(self, capability: str = "", text: str = "") -> list[dict]:
        params = {}
        if capability:
            params["capability"] = capability
        if text:
            params["text"] = text
        return self._request("GET", "/api/v1/tools", params=params)

    # --- experiments -----------------------------------------------------------------

    def create_experiment(self, body: dict) -> dict:
        return self._request("POST", "/api/v1/experiments", body=body)

    def plan(self, experiment_id: str, body: dict) -> list[dict]:
        return self._request("POST", f"/api/v1/experiments/{experiment_id}/plan",
                             body=body)

    def select_plan(self, experiment_id: str, plan_id: str) -> dict:
        return self._request(
            "POST", f"/api/v1/experiments/{experiment_id}/plans/{plan_id}/select",
            body={})

    def submit_workflow(self, experiment_id: str, spec: dict) -> dict:
        return self._request(
            "POST", f"/api/v1/experiments/{experiment_id}/workflow", body=spec)

    def control(self, experiment_id: str, action: str) -> dict:
        return self._request(
            "POST", f"/api/v1/experiments/{experiment_id}/control",
            body={"action": action})

    def status(self, experiment_id: str) -> dict:
        return self._request("GET", f"/api/v1/experiments/{experiment_id}")

    def archive(self, experiment_id: str) -> dict:
        return self._request("POST",
                             f"/api/v1/experiments/{experiment_id}/archive",
                             body={})

    def verify(self, experiment_id: str) -> dict:
        return self._request(
            "GET", f"/api/v1/experiments/{experiment_id}/provenance/verify")

    def reload_templates(self) -> dict:
        return self._request("POST", "/api/v1/admin/templates/reload", body={})

    def stream_events(self, experiment_id: str, from_seq: int = 1,
                      follow: bool = True) -> Iterator[dict]:
        """Yield event dicts from the live stream; keepalives are skipped."""
        params = {"from_seq": from_seq, "follow": str(follow).lower()}
        with self._http.stream(
                "GET", f"/api/v1/experiments/{experiment_id}/events",
                params=params, headers=self._headers(), timeout=None) as resp:
            if resp.status_code >= 400:
                resp.read()
                try:
                    payload = resp.json()
                except json.JSONDecodeError:
                    payload = {}
                raise ApiClientError(resp.status_code,
                                     payload.get("code", "http_error"),
                                     payload.get("message", ""))
            for line in resp.iter_lines():
                if not line or line.startswith("#"):
                    continue
                yield json.loads(line)


class HttpDispatcher:
    """Dispatches task invocations to edge servers over HTTP streams."""

    def __init__(self, server_token_lookup, timeout: float = 120.0):
        self.sink = None
        self._lookup = server_token_lookup
        self._timeout = timeout
        self._routes: dict[str, tuple[str, str]] = {}  # task -> (url, token)
        self._lock = threading.Lock()

    def dispatch(self, inv: Invocation) -> None:
        token = self._lookup(inv.server_id)
        with self._lock:
            self._routes[inv.task_id] = (inv.callback_url, token)
        threading.Thread(target=self._run, args=(inv, token),
                         daemon=True).start()

    def _deliver(self, method: str, *args, **kwargs) -> None:
        try:
            getattr(self.sink, method)(*args, **kwargs)
        except Exception:
            pass  # stale/unknown results after aborts are expected races

    def _run(self, inv: Invocation, token: str) -> None:
        body = {"task_id": inv.task_id, "tool_id": inv.tool_id,
                "params": inv.params, "experiment_context": inv.context,
                "server_token": token}
        url = inv.callback_url.rstrip("/") + "/scp/invoke"
        try:
            with httpx.stream("POST", url, json=body,
                              timeout=self._timeout) as resp:
                if resp.status_code != 200:
                    self._deliver("on_task_result", inv.task_id,
                                  error=f"edge_http_{resp.status_code}")
                    return
                self._deliver("on_task_started", inv.task_id)
                for line in resp.iter_lines():
                    if not line or line.startswith("#"):
                        continue
                    message = json.loads(line)
                    kind = message.get("kind")
                    payload = message.get("payload", {})
                    if kind == "task_progress":
                        self._deliver("on_task_progress", inv.task_id,
                                      payload.get("progress", 0.0),
                                      payload.get("message", ""))
                    elif kind == "task_completed":
                        self._deliver("on_task_result", inv.task_id,
                                      outputs=payload.get("outputs", {}))
                        return
                    elif kind == "task_failed":
                        self._deliver("on_task_result", inv.task_id,
                                      error=payload.get("error", "unknown"))
                        return
            self._deliver("on_task_result", inv.task_id,
                          error="edge_stream_closed")
        except httpx.HTTPError as exc:
            self._deliver("on_task_result", inv.task_id,
                          error=f"edge_unreachable: {exc}")

    def cancel(self, task_id: str) -> None:
        with self._lock:
            route = self._routes.get(task_id)
        if route is None:
            return
        url, token = route

        def _post():
            try:
                httpx.post(url.rstrip("/") + "/scp/cancel",
                           json={"task_id": task_id, "server_token": token},
                           timeout=10.0)
            except httpx.HTTPError:
                pass  # the grace-period anomaly path will fail the task

        threading.Thread(target=_post, daemon=True).start()


def parse_event_line(line: str) -> Optional[Event]:
    if not line or line.startswith("#"):
        return None
    return Event.from_dict(json.loads(line))
