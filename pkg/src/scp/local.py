"""In-process hub + mock-lab assembly on a simulated clock.

Runs whole experiments deterministically without any networking: the
dispatcher executes mock tools virtually and jumps the clock to each
result's due time. Used by tests, demos, and `scpctl exp replay`.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional

from .clock import SimulatedClock
from .dispatch import LocalDispatcher
from .edge.mocklab import MockLab, load_mock_lab
from .hub.config import HubConfig, packaged_fixture
from .hub.core import Hub


class CompositeLab:
    """Routes execute() across several mock labs by tool id."""

    def __init__(self, labs: list[MockLab]):
        self._by_tool = {}
        for lab in labs:
            for descriptor in lab.descriptors():
                self._by_tool[descriptor.tool_id] = lab

    def execute(self, tool_id: str, params: dict, task_id: str):
        return self._by_tool[tool_id].execute(tool_id, params, task_id)


def local_hub(storage_root: str | Path, seed: int = 42,
              fixture_paths: Optional[list[str]] = None,
              config: Optional[HubConfig] = None,
              register_labs: bool = True) -> tuple[Hub, CompositeLab]:
    """Build a hub wired to the packaged mock labs, all in-process."""
    config = config or HubConfig(storage_root=str(storage_root), id_seed=seed)
    config.storage_root = str(storage_root)
    clock = SimulatedClock()
    paths = fixture_paths or [packaged_fixture("molecule_screening.json"),
                              packaged_fixture("wet_lab.json")]
    labs = [load_mock_lab(p, seed) for p in paths]
    lab = CompositeLab(labs)
    dispatcher = LocalDispatcher(lab, clock)
    hub = Hub(config, clock=clock, dispatcher=dispatcher)
    dispatcher.sink = hub.executor
    if register_labs:
        for i, single in enumerate(labs):
            hub.register_server(single.manifest(
                f"local://{single.name}").to_dict())
    return hub, lab


SCREENING_FIXTURE = "molecule_screening.json"
WET_FIXTURE = "wet_lab.json"
INPUTS_FIXTURE = "screening_inputs.json"


def screening_inputs() -> dict:
    from . import canonical
    return canonical.loads(
        Path(packaged_fixture(INPUTS_FIXTURE)).read_bytes())
