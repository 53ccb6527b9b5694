"""HTTP surface of the hub: the /api/v1 endpoint table.

Every route except token issuance requires the ``SCP-HUB-API-KEY`` header;
every module error maps to exactly one (status, code) pair; mutating
endpoints append their events before responding. The event stream is
line-delimited canonical JSON with ``#`` keepalive comment lines.
"""

from __future__ import annotations

import json

from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, Response, StreamingResponse

from .. import canonical
from ..errors import (Archived, BadCredentials, ExperimentMismatch, Forbidden,
                      MalformedJson, NotFinished, NotTerminal, SCPError,
                      StaleResult, Unauthenticated, UnknownExperiment,
                      UnknownPlan, UnknownServer, UnknownTask, UnknownToken,
                      UnknownTool, WrongPhase)
from .core import Hub

AUTH_HEADER = "SCP-HUB-API-KEY"

_STATUS_BY_ERROR: list[tuple[tuple, int]] = [
    ((Unauthenticated, BadCredentials), 401),
    ((Forbidden, ExperimentMismatch), 403),
    ((UnknownExperiment, UnknownTool, UnknownServer, UnknownTask,
      UnknownPlan, UnknownToken), 404),
    ((WrongPhase, Archived, NotTerminal, StaleResult, NotFinished), 409),
]


def status_for(exc: SCPError) -> int:
    for classes, status in _STATUS_BY_ERROR:
        if isinstance(exc, classes):
            return status
    return 422


def error_response(exc: SCPError) -> JSONResponse:
    status = status_for(exc)
    return JSONResponse({"status": status, "code": exc.code,
                         "message": exc.message, "detail": exc.detail},
                        status_code=status)


def create_app(hub: Hub) -> FastAPI:
    app = FastAPI(title="scp-hub", version="0.1.0")
    app.state.hub = hub
    # the dashboard is served from another origin; auth stays token-based
    app.add_middleware(CORSMiddleware, allow_origins=["*"],
                       allow_methods=["*"], allow_headers=["*"])

    @app.exception_handler(SCPError)
    async def scp_error_handler(request: Request, exc: SCPError):
        return error_response(exc)

    def token_of(request: Request) -> str:
        value = request.headers.get(AUTH_HEADER, "")
        if not value:
            raise Unauthenticated(f"missing {AUTH_HEADER} header")
        return value

    def authorized(request: Request, verb: str, experiment_id=None,
                   server_id=None):
        token = token_of(request)
        principal = hub.auth.authorize(token, verb,
                                       experiment_id=experiment_id,
                                       server_id=server_id)
        return token, principal

    async def parse_body(request: Request) -> dict:
        raw = await request.body()
        if not raw:
            return {}
        try:
            body = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise MalformedJson(str(exc))
        if not isinstance(body, dict):
            raise MalformedJson("request body must be a JSON object")
        return body

    # --- auth ---------------------------------------------------------------------

    @app.post("/api/v1/auth/token")
    async def issue_token(request: Request):
        body = await parse_body(request)
        token = hub.auth.issue_token(
            body.get("principal_id", ""), body.get("secret", ""),
            set(body.get("scopes", [])),
            experiment_binding=body.get("experiment_binding"))
        return JSONResponse(token.to_dict(), status_code=200)

    # --- servers --------------------------------------------------------------------

    @app.post("/api/v1/servers/register")
    async def register_server(request: Request):
        authorized(request, "servers.register")
        body = await parse_body(request)
        return hub.register_server(body)

    @app.post("/api/v1/servers/{server_id}/heartbeat")
    async def heartbeat(server_id: str, request: Request):
        authorized(request, "servers.heartbeat", server_id=server_id)
        body = await parse_body(request)
        hub.heartbeat(server_id, {**body, "server_id": server_id})
        return {"ok": True}

    @app.delete("/api/v1/servers/{server_id}")
    async def deregister(server_id: str, request: Request):
        authorized(request, "servers.deregister", server_id=server_id)
        hub.registry.deregister(server_id)
        return Response(status_code=204)

    @app.get("/api/v1/tools")
    async def tools(request: Request, capability: str = "", text: str = "",
                    discipline: str = ""):
        token, _ = authorized(request, "tools.list")
        found = hub.registry.find_tools(hub.auth.token_scopes(token),
                                        capability_class=capability,
                                        discipline_label=discipline, text=text)
        return [t.to_dict() for t in found]

    # --- experiments ------------------------------------------------------------------

    @app.post("/api/v1/experiments")
    async def create_experiment(request: Request):
        _, principal = authorized(request, "experiments.create")
        body = await parse_body(request)
        record = hub.create_experiment(body, owner=principal.principal_id)
        return JSONResponse(record.context.to_dict(), status_code=201)

    @app.post("/api/v1/experiments/{experiment_id}/plan")
    async def plan(experiment_id: str, request: Request):
        token, principal = authorized(request, "experiments.plan",
                                      experiment_id=experiment_id)
        body = await parse_body(request)
        candidates = hub.plan(experiment_id, body, principal.principal_id,
                              hub.auth.token_scopes(token))
        return [c.to_dict() for c in candidates]

    @app.post("/api/v1/experiments/{experiment_id}/plans/{plan_id}/select")
    async def select_plan(experiment_id: str, plan_id: str, request: Request):
        token, principal = authorized(request, "experiments.select",
                                      experiment_id=experiment_id)
        hub.select_plan(experiment_id, plan_id, principal.principal_id, token)
        return JSONResponse({"experiment_id": experiment_id,
                             "plan_id": plan_id, "phase": "executing"},
                            status_code=202)

    @app.post("/api/v1/experiments/{experiment_id}/workflow")
    async def submit_workflow(experiment_id: str, request: Request):
        token, principal = authorized(request, "experiments.submit",
                                      experiment_id=experiment_id)
        body = await parse_body(request)
        hub.submit_workflow(experiment_id, body, principal.principal_id, token)
        return JSONResponse({"experiment_id": experiment_id,
                             "phase": "executing"}, status_code=202)

    @app.post("/api/v1/experiments/{experiment_id}/control")
    async def control(experiment_id: str, request: Request):
        authorized(request, "experiments.control", experiment_id=experiment_id)
        body = await parse_body(request)
        record = hub.control(experiment_id, body.get("action", ""))
        return {"experiment_id": experiment_id, "phase": record.phase}

    @app.get("/api/v1/experiments/{experiment_id}")
    async def status(experiment_id: str, request: Request):
        authorized(request, "experiments.read", experiment_id=experiment_id)
        return hub.status(experiment_id)

    @app.get("/api/v1/experiments/{experiment_id}/events")
    async def events(experiment_id: str, request: Request, from_seq: int = 1,
                     follow: bool = True):
        authorized(request, "events.read", experiment_id=experiment_id)
        if not hub.provenance.known(experiment_id):
            raise UnknownExperiment(experiment_id)
        subscription = hub.provenance.subscribe(experiment_id, from_seq)
        keepalive = hub.config.keepalive_seconds

        def stream():
            while True:
                batch = subscription.poll(timeout=keepalive if follow else 0)
                if batch:
                    for event in batch:
                        yield canonical.dumps(event.to_dict()) + "\n"
                elif follow:
                    yield f"# keepalive {hub.clock.timestamp()}\n"
                else:
                    return

        return StreamingResponse(stream(), media_type="application/x-ndjson")

    @app.post("/api/v1/experiments/{experiment_id}/archive")
    async def archive(experiment_id: str, request: Request):
        authorized(request, "experiments.archive", experiment_id=experiment_id)
        bundle = hub.archive(experiment_id)
        return {"bundle_path": bundle}

    @app.get("/api/v1/experiments/{experiment_id}/provenance/verify")
    async def verify(experiment_id: str, request: Request):
        authorized(request, "provenance.verify", experiment_id=experiment_id)
        if not hub.provenance.known(experiment_id):
            raise UnknownExperiment(experiment_id)
        first_bad = hub.provenance.verify_chain(experiment_id)
        if first_bad is None:
            return {"ok": True}
        return {"ok": False, "first_bad_seq": first_bad}

    # --- admin ------------------------------------------------------------------------------

    @app.post("/api/v1/admin/templates/reload")
    async def reload_templates(request: Request):
        authorized(request, "admin.reload")
        from .core import load_template_library
        templates = load_template_library(hub.config.resolved_template_dir())
        hub.planner.replace_library(templates)
        return {"templates": sorted(t.template_id for t in templates)}

    # --- closed endpoint table ------------------------------------------------------------

    @app.api_route("/{path:path}",
                   methods=["GET", "POST", "PUT", "DELETE", "PATCH"])
    async def unknown_route(path: str, request: Request):
        return JSONResponse({"status": 404, "code": "unknown_route",
                             "message": f"no such endpoint: /{path}"},
                            status_code=404)

    return app
