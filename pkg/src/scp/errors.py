"""Error taxonomy shared by hub, edge servers, and clients.

Every error carries a stable machine ``code`` so the HTTP layer can map it
to exactly one (status, code) pair and clients can switch on it.
"""

from __future__ import annotations


class SCPError(Exception):
    """Base class; ``code`` is the wire-level machine string."""

    code = "internal_error"

    def __init__(self, message: str = "", **detail):
        super().__init__(message or self.code)
        self.message = message or self.code
        self.detail = detail


# --- protocol / parsing -----------------------------------------------------

class MalformedJson(SCPError):
    code = "malformed_json"


class SchemaViolation(SCPError):
    code = "schema_violation"

    def __init__(self, path: str, reason: str):
        super().__init__(f"{path}: {reason}", path=path, reason=reason)
        self.path = path
        self.reason = reason


class DuplicateNodeId(SCPError):
    code = "duplicate_node_id"


class UnknownDependency(SCPError):
    code = "unknown_dependency"


class CycleDetected(SCPError):
    code = "cycle_detected"

    def __init__(self, cycle: list[str]):
        super().__init__(f"dependency cycle: {' -> '.join(cycle)}", cycle=cycle)
        self.cycle = cycle


# --- registry ----------------------------------------------------------------

class InvalidManifest(SCPError):
    code = "invalid_manifest"


class DuplicateToolId(SCPError):
    code = "duplicate_tool_id"


class UnknownServer(SCPError):
    code = "unknown_server"


class UnknownTool(SCPError):
    code = "unknown_tool"


class ToolUnavailable(SCPError):
    code = "tool_unavailable"

    def __init__(self, reason: str, tool_id: str = ""):
        super().__init__(f"tool unavailable: {reason}", reason=reason, tool_id=tool_id)
        self.reason = reason


# --- auth ----------------------------------------------------------------------

class BadCredentials(SCPError):
    code = "bad_credentials"


class EmptyScopeIntersection(SCPError):
    code = "empty_scope_intersection"


class Unauthenticated(SCPError):
    code = "unauthenticated"


class Forbidden(SCPError):
    code = "forbidden"

    def __init__(self, missing_scope: str):
        super().__init__(f"missing scope: {missing_scope}", missing_scope=missing_scope)
        self.missing_scope = missing_scope


class ExperimentMismatch(SCPError):
    code = "experiment_mismatch"


class UnknownToken(SCPError):
    code = "unknown_token"


# --- planner --------------------------------------------------------------------

class NoTemplateMatched(SCPError):
    code = "no_template_matched"


class UnknownPlan(SCPError):
    code = "unknown_plan"


class Infeasible(SCPError):
    code = "infeasible"

    def __init__(self, missing_class: str):
        super().__init__(f"no available tool for class: {missing_class}",
                         missing_class=missing_class)
        self.missing_class = missing_class


# --- executor -------------------------------------------------------------------

class WrongPhase(SCPError):
    code = "wrong_phase"

    def __init__(self, current: str, wanted: str = ""):
        msg = f"experiment phase is {current}" + (f", expected {wanted}" if wanted else "")
        super().__init__(msg, current=current, wanted=wanted)
        self.current = current


class ValidationFailed(SCPError):
    code = "validation_failed"

    def __init__(self, violations):
        super().__init__(f"{len(violations)} validation violation(s)",
                         violations=[v.to_dict() for v in violations])
        self.violations = violations


class UnknownTask(SCPError):
    code = "unknown_task"


class StaleResult(SCPError):
    code = "stale_result"


class NoAlternative(SCPError):
    code = "no_alternative"


class NotFinished(SCPError):
    code = "not_finished"


class CompensationFailed(SCPError):
    code = "compensation_failed"


# --- provenance -------------------------------------------------------------------

class UnknownExperiment(SCPError):
    code = "unknown_experiment"


class Archived(SCPError):
    code = "archived"


class NotTerminal(SCPError):
    code = "not_terminal"


class StorageFailure(SCPError):
    code = "storage_failure"


class BundleCorrupt(SCPError):
    code = "bundle_corrupt"


# --- edge ---------------------------------------------------------------------------

class InvalidDescriptor(SCPError):
    code = "invalid_descriptor"


class BadParams(SCPError):
    code = "bad_params"


class FixtureError(SCPError):
    code = "fixture_error"

    def __init__(self, path: str, reason: str):
        super().__init__(f"{path}: {reason}", path=path, reason=reason)


class HubUnreachable(SCPError):
    code = "hub_unreachable"
