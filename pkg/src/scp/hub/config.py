"""Hub configuration: one canonical-JSON file plus SCP_-prefixed env overrides."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

from .. import canonical
from ..errors import SchemaViolation


def packaged_template_dir() -> str:
    return str(resources.files("scp").joinpath("data", "templates"))


def packaged_fixture(name: str) -> str:
    return str(resources.files("scp").joinpath("data", "fixtures", name))


@dataclass
class HubConfig:
    listen_host: str = "127.0.0.1"
    listen_port: int = 8420
    storage_root: str = "./scp-data"
    template_dir: str = ""
    lease_seconds: int = 30
    token_ttl_seconds: int = 3600
    keepalive_seconds: float = 15.0
    id_seed: Optional[int] = None
    policy: dict = field(default_factory=dict)
    principals: list = field(default_factory=list)

    def resolved_template_dir(self) -> str:
        return self.template_dir or packaged_template_dir()


_ENV_FIELDS = {
    "SCP_LISTEN_HOST": ("listen_host", str),
    "SCP_LISTEN_PORT": ("listen_port", int),
    "SCP_STORAGE_ROOT": ("storage_root", str),
    "SCP_TEMPLATE_DIR": ("template_dir", str),
    "SCP_LEASE_SECONDS": ("lease_seconds", int),
    "SCP_TOKEN_TTL_SECONDS": ("token_ttl_seconds", int),
    "SCP_KEEPALIVE_SECONDS": ("keepalive_seconds", float),
    "SCP_ID_SEED": ("id_seed", int),
}


def load_config(path: str | Path | None = None,
                env: dict | None = None) -> HubConfig:
    env = os.environ if env is None else env
    data: dict = {}
    if path:
        try:
            data = canonical.loads(Path(path).read_bytes())
        except OSError as exc:
            raise SchemaViolation(str(path), f"unreadable config: {exc}")
    known = set(HubConfig.__dataclass_fields__)
    unknown = set(data) - known
    if unknown:
        raise SchemaViolation("config", f"unknown keys {sorted(unknown)}")
    config = HubConfig(**data)
    for var, (attr, cast) in _ENV_FIELDS.items():
        if var in env:
            try:
                setattr(config, attr, cast(env[var]))
            except ValueError as exc:
                raise SchemaViolation(var, f"bad value: {exc}")
    return config
