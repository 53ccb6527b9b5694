"""Opaque id minting. Seedable so tests and replays are reproducible."""

from __future__ import annotations

import random
import secrets


class IdSource:
    def __init__(self, seed: int | None = None):
        self._rng = random.Random(seed) if seed is not None else None

    def hex(self, nchars: int) -> str:
        if self._rng is not None:
            return "".join(self._rng.choice("0123456789abcdef")
                           for _ in range(nchars))
        return secrets.token_hex(nchars // 2)

    def experiment_id(self) -> str:
        return f"exp-{self.hex(12)}"

    def server_id(self) -> str:
        return f"srv-{self.hex(12)}"

    def token_value(self) -> str:
        return f"sk-{self.hex(32)}"

    def spec_id(self) -> str:
        return f"wf-{self.hex(12)}"
