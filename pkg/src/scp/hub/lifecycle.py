"""Experiment lifecycle records and the legal phase transition table."""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

from ..errors import WrongPhase
from ..types import ExperimentContext, PlanCandidate, WorkflowSpec

LEGAL_PHASE_TRANSITIONS: dict[str, set[str]] = {
    "registered": {"planned"},
    "planned": {"executing"},
    "executing": {"paused", "completed", "failed", "aborted"},
    "paused": {"executing", "aborted"},
    "completed": {"archived"},
    "failed": {"archived"},
    "aborted": {"archived"},
    "archived": set(),
}

TERMINAL_PHASES = ("completed", "failed", "aborted")


@dataclass
class ExperimentRecord:
    context: ExperimentContext
    phase: str = "registered"
    specs: dict[int, WorkflowSpec] = field(default_factory=dict)
    plans: dict[str, PlanCandidate] = field(default_factory=dict)
    selected_plan_id: str = ""
    active_spec_version: int = 0
    lock: threading.RLock = field(default_factory=threading.RLock, repr=False)

    @property
    def experiment_id(self) -> str:
        return self.context.experiment_id

    def transition(self, to: str) -> str:
        """Move to phase ``to``; raises WrongPhase on an illegal edge."""
        with self.lock:
            if to not in LEGAL_PHASE_TRANSITIONS.get(self.phase, set()):
                raise WrongPhase(self.phase, wanted=to)
            before, self.phase = self.phase, to
            return before

    def require_phase(self, *phases: str) -> None:
        if self.phase not in phases:
            raise WrongPhase(self.phase, wanted="|".join(phases))

    def next_version(self) -> int:
        return max(self.specs, default=0) + 1

    def store_spec(self, spec: WorkflowSpec) -> None:
        with self.lock:
            self.specs[spec.version] = spec
            self.active_spec_version = spec.version

    @property
    def active_spec(self) -> WorkflowSpec | None:
        return self.specs.get(self.active_spec_version)

    def is_terminal(self) -> bool:
        return self.phase in TERMINAL_PHASES
