"""Science Context Protocol reference platform.

A hub that registers federated tool servers, plans and ranks candidate
experiment workflows, executes JSON task graphs with validation and
rollback, and keeps a hash-chained provenance log per experiment; plus an
edge-server SDK with a deterministic mock lab and a CLI.
"""

__version__ = "0.1.0"

from .types import (  # noqa: F401
    Event,
    ExperimentContext,
    FieldSpec,
    GovernanceWarning,
    HealthReport,
    PlanCandidate,
    PlanScore,
    ServerManifest,
    TaskNode,
    ToolDescriptor,
    Violation,
    WorkflowSpec,
)
from .validation import (  # noqa: F401
    canonicalize,
    parse_workflow_spec,
    validate_output,
    validate_workflow,
)
from .graph import topological_layers  # noqa: F401
from .events import hash_event, make_event  # noqa: F401
