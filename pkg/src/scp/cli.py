"""scpctl: command-line client covering the full researcher workflow.

Exit codes: 0 success, 1 API/network error, 2 usage error. ``--output json``
prints raw canonical JSON for scripting.
"""

from __future__ import annotations

import sys
import tempfile

import click

from . import canonical
from .client import ApiClientError, HubClient
from .errors import SCPError


def fail(message: str, code: int = 1):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def render(ctx_obj, data, table_fn=None):
    if ctx_obj["output"] == "json" or table_fn is None:
        click.echo(canonical.dumps(data))
    else:
        table_fn(data)


def print_table(rows: list[dict], columns: list[str]) -> None:
    if not rows:
        click.echo("(none)")
        return
    widths = {c: max(len(c), *(len(str(r.get(c, ""))) for r in rows))
              for c in columns}
    click.echo("  ".join(c.ljust(widths[c]) for c in columns))
    for row in rows:
        click.echo("  ".join(str(row.get(c, "")).ljust(widths[c])
                             for c in columns))


def client_of(ctx) -> HubClient:
    token = ctx.obj["token"]
    if not token:
        fail("no token: set SCP_HUB_API_KEY or pass --token", 2)
    return HubClient(ctx.obj["hub_url"], token=token)


@click.group()
@click.option("--hub-url", envvar="SCP_HUB_URL",
              default="http://127.0.0.1:8420", show_default=True)
@click.option("--token", envvar="SCP_HUB_API_KEY", default="")
@click.option("--output", type=click.Choice(["table", "json"]),
              default="table", show_default=True)
@click.pass_context
def main(ctx, hub_url, token, output):
    """Client for a Science Context Protocol hub."""
    ctx.ensure_object(dict)
    ctx.obj.update(hub_url=hub_url, token=token, output=output)


@main.command()
@click.option("--principal", required=True)
@click.option("--secret", prompt=True, hide_input=True, envvar="SCP_SECRET")
@click.option("--scopes", default="tools.read,experiments.write,dry.execute",
              show_default=True)
@click.option("--bind-experiment", default=None)
@click.pass_context
def token(ctx, principal, secret, scopes, bind_experiment):
    """Issue a bearer token (prints it; export as SCP_HUB_API_KEY)."""
    client = HubClient(ctx.obj["hub_url"])
    try:
        out = client.issue_token(principal, secret,
                                 [s for s in scopes.split(",") if s],
                                 experiment_binding=bind_experiment)
    except ApiClientError as exc:
        fail(str(exc))
    if ctx.obj["output"] == "json":
        click.echo(canonical.dumps(out))
    else:
        click.echo(out["value"])


@main.group()
def tools():
    """Tool discovery."""


@tools.command("list")
@click.option("--capability", default="")
@click.option("--text", default="")
@click.pass_context
def tools_list(ctx, capability, text):
    with client_of(ctx) as client:
        try:
            found = client.tools(capability=capability, text=text)
        except ApiClientError as exc:
            fail(str(exc))
    render(ctx.obj, found, lambda data: print_table(
        [{"tool_id": t["tool_id"], "capability": t["capability_class"],
          "latency_ms": t["estimates"]["latency_ms"],
          "cost": t["estimates"]["cost_units"],
          "risk": t["estimates"]["risk"]} for t in data],
        ["tool_id", "capability", "latency_ms", "cost", "risk"]))


@main.group()
def admin():
    """Hub administration."""


@admin.command("reload-templates")
@click.pass_context
def reload_templates(ctx):
    """Reload the hub's workflow template library from its directory."""
    with client_of(ctx) as client:
        try:
            out = client.reload_templates()
        except ApiClientError as exc:
            fail(str(exc))
    render(ctx.obj, out,
           lambda d: click.echo("\n".join(d["templates"])))


@main.group()
def exp():
    """Experiment lifecycle."""


@exp.command()
@click.option("--type", "experiment_type",
              type=click.Choice(["dry", "wet", "hybrid"]), default="dry")
@click.option("--goal", default="")
@click.option("--tags", default="", help="comma-separated goal tags")
@click.option("--priority", type=int, default=5)
@click.option("--config-file", type=click.Path(exists=True),
              help="JSON file merged into the experiment config")
@click.option("--budget", type=float, default=None)
@click.pass_context
def create(ctx, experiment_type, goal, tags, priority, config_file, budget):
    body = {"experiment_type": experiment_type, "goal": goal,
            "goal_tags": [t for t in tags.split(",") if t],
            "priority": priority, "config": {}}
    if config_file:
        from pathlib import Path
        body["config"] = canonical.loads(Path(config_file).read_bytes())
    if budget is not None:
        body["budget"] = {"cost_units": budget}
    with client_of(ctx) as client:
        try:
            out = client.create_experiment(body)
        except ApiClientError as exc:
            fail(str(exc))
    if ctx.obj["output"] == "json":
        click.echo(canonical.dumps(out))
    else:
        click.echo(out["experiment_id"])


@exp.command()
@click.argument("experiment_id")
@click.option("--tags", default="", help="comma-separated goal tags")
@click.option("-k", type=int, default=None, help="plans to return (default 3)")
@click.option("--max-latency-ms", type=float, default=None)
@click.option("--max-cost", type=float, default=None)
@click.pass_context
def plan(ctx, experiment_id, tags, k, max_latency_ms, max_cost):
    """Request ranked candidate plans."""
    body: dict = {}
    if tags:
        body["goal_tags"] = [t for t in tags.split(",") if t]
    if k is not None:
        body["k"] = k
    constraints = {}
    if max_latency_ms is not None:
        constraints["max_latency_ms"] = max_latency_ms
    if max_cost is not None:
        constraints["max_cost_units"] = max_cost
    if constraints:
        body["constraints"] = constraints
    with client_of(ctx) as client:
        try:
            candidates = client.plan(experiment_id, body)
        except ApiClientError as exc:
            fail(str(exc))
    render(ctx.obj, candidates, lambda data: print_table(
        [{"plan_id": c["plan_id"],
          "latency_ms": round(c["score"]["latency_ms"], 1),
          "cost": round(c["score"]["cost_units"], 2),
          "risk": round(c["score"]["risk"], 4),
          "total": round(c["score"]["total"], 2),
          "steps": len(c["spec"]["nodes"]),
          "warnings": ",".join(w["kind"] for w in c["warnings"]) or "-",
          "rationale": c["rationale"][:60]} for c in data],
        ["plan_id", "latency_ms", "cost", "risk", "total", "steps",
         "warnings", "rationale"]))


@exp.command()
@click.argument("experiment_id")
@click.argument("plan_id")
@click.pass_context
def select(ctx, experiment_id, plan_id):
    """Select a plan; execution starts immediately."""
    with client_of(ctx) as client:
        try:
            out = client.select_plan(experiment_id, plan_id)
        except ApiClientError as exc:
            fail(str(exc))
    render(ctx.obj, out, lambda d: click.echo(f"executing plan {plan_id}"))


@exp.command()
@click.argument("experiment_id")
@click.option("-f", "--file", "spec_file", required=True,
              type=click.Path(exists=True))
@click.pass_context
def submit(ctx, experiment_id, spec_file):
    """Submit a manually composed WorkflowSpec (JSON file)."""
    from pathlib import Path
    spec = canonical.loads(Path(spec_file).read_bytes())
    with client_of(ctx) as client:
        try:
            out = client.submit_workflow(experiment_id, spec)
        except ApiClientError as exc:
            fail(str(exc))
    render(ctx.obj, out, lambda d: click.echo("executing submitted workflow"))


def event_line(event: dict) -> str:
    payload = event.get("payload", {})
    parts = [f"[{event['seq']:>4}]", event["kind"]]
    if payload.get("node_id"):
        parts.append(payload["node_id"])
    for key in ("tool_id", "action", "error", "progress", "kind_detail"):
        if key in payload and payload[key] not in ("", None):
            parts.append(f"{key}={payload[key]}")
    if event["kind"] in ("experiment_completed", "experiment_failed"):
        parts.append(f"states={payload.get('node_states', {})}")
    return " ".join(str(p) for p in parts)


@exp.command()
@click.argument("experiment_id")
@click.option("--from-seq", type=int, default=1, show_default=True)
@click.option("--no-follow", is_flag=True, help="dump current events and exit")
@click.pass_context
def watch(ctx, experiment_id, from_seq, no_follow):
    """Tail the experiment event stream, one line per event."""
    with client_of(ctx) as client:
        try:
            for event in client.stream_events(experiment_id, from_seq=from_seq,
                                              follow=not no_follow):
                if ctx.obj["output"] == "json":
                    click.echo(canonical.dumps(event))
                else:
                    click.echo(event_line(event))
                if event["kind"] in ("experiment_completed",
                                     "experiment_failed",
                                     "experiment_archived") and not no_follow:
                    break
        except ApiClientError as exc:
            fail(str(exc))
        except KeyboardInterrupt:
            pass


def _control(ctx, experiment_id, action):
    with client_of(ctx) as client:
        try:
            out = client.control(experiment_id, action)
        except ApiClientError as exc:
            fail(str(exc))
    render(ctx.obj, out,
           lambda d: click.echo(f"{action}: phase={d['phase']}"))


@exp.command()
@click.argument("experiment_id")
@click.pass_context
def pause(ctx, experiment_id):
    _control(ctx, experiment_id, "pause")


@exp.command()
@click.argument("experiment_id")
@click.pass_context
def resume(ctx, experiment_id):
    _control(ctx, experiment_id, "resume")


@exp.command()
@click.argument("experiment_id")
@click.pass_context
def abort(ctx, experiment_id):
    _control(ctx, experiment_id, "abort")


@exp.command()
@click.argument("experiment_id")
@click.pass_context
def status(ctx, experiment_id):
    with client_of(ctx) as client:
        try:
            out = client.status(experiment_id)
        except ApiClientError as exc:
            fail(str(exc))

    def table(data):
        click.echo(f"experiment {experiment_id}  phase={data['phase']}  "
                   f"spec_version={data['active_spec_version']}")
        rows = [{"node": n, "state": s["state"], "attempts": s["attempts"],
                 "tool": s["tool_id"]}
                for n, s in sorted(data["task_states"].items())]
        print_table(rows, ["node", "state", "attempts", "tool"])

    render(ctx.obj, out, table)


@exp.command()
@click.argument("experiment_id")
@click.pass_context
def archive(ctx, experiment_id):
    with client_of(ctx) as client:
        try:
            out = client.archive(experiment_id)
        except ApiClientError as exc:
            fail(str(exc))
    render(ctx.obj, out, lambda d: click.echo(d["bundle_path"]))


@exp.command()
@click.argument("experiment_id")
@click.pass_context
def verify(ctx, experiment_id):
    with client_of(ctx) as client:
        try:
            out = client.verify(experiment_id)
        except ApiClientError as exc:
            fail(str(exc))
    if ctx.obj["output"] == "json":
        click.echo(canonical.dumps(out))
    elif out["ok"]:
        click.echo("chain ok")
    else:
        fail(f"chain broken at seq {out['first_bad_seq']}")


@exp.command()
@click.argument("bundle", type=click.Path(exists=True))
@click.option("--seed", type=int, default=42, show_default=True)
@click.pass_context
def replay(ctx, bundle, seed):
    """Re-execute an archived run on a local mock lab and compare."""
    from .provenance import (load_bundle, replay_check, verify_bundle_chain)
    try:
        data = load_bundle(bundle)
    except SCPError as exc:
        fail(f"bundle: {exc.message}")
    bad = verify_bundle_chain(data["events"])
    if bad is not None:
        fail(f"archive chain verification failed at seq {bad}")
    spec = data["specs"][-1]
    with tempfile.TemporaryDirectory(prefix="scp-replay-") as root:
        from .local import local_hub
        hub, _ = local_hub(root, seed=seed)
        hub.auth.add_principal("replayer", "agent",
                               {"tools.read", "experiments.write",
                                "dry.execute", "wet.execute"}, secret="replay")
        fresh_token = hub.auth.issue_token(
            "replayer", "replay",
            {"tools.read", "experiments.write", "dry.execute", "wet.execute"})
        old = data["context"].to_dict()
        record = hub.create_experiment(
            {"experiment_type": old["experiment_type"], "goal": old["goal"],
             "goal_tags": old["goal_tags"], "config": old["config"],
             "priority": old["priority"]}, owner="replayer")
        fresh_spec = spec.to_dict()
        fresh_spec["experiment_id"] = record.experiment_id
        fresh_spec["created_from"] = "replay"
        try:
            hub.submit_workflow(record.experiment_id, fresh_spec, "replayer",
                                fresh_token.value)
        except SCPError as exc:
            fail(f"replay submit failed: {exc.message}")
        hub.run_until_idle()
        fresh_events = hub.provenance.read(record.experiment_id)
    diff = replay_check(data["events"], fresh_events, spec)
    if diff is None:
        click.echo("equal")
        return
    click.echo(f"diff at projection index {diff['index']}:", err=True)
    click.echo(f"  archived: {canonical.dumps(diff['archived'])}", err=True)
    click.echo(f"  fresh:    {canonical.dumps(diff['fresh'])}", err=True)
    sys.exit(1)


if __name__ == "__main__":
    main()
