"""Token issuance and per-action authorization.

Opaque bearer tokens (``sk-`` + 32 hex) carry a scope subset of their
principal and an optional experiment binding. The binding is absolute: a
bound token authorizes nothing for any other experiment.
"""

from __future__ import annotations

import hashlib
import hmac
import threading
from dataclasses import dataclass, field
from typing import Optional

from ..clock import Clock
from ..errors import (BadCredentials, EmptyScopeIntersection,
                      ExperimentMismatch, Forbidden, SchemaViolation,
                      Unauthenticated, UnknownToken)
from ..idgen import IdSource
from ..types import SCOPES

DEFAULT_TTL_SECONDS = 3600

# verb -> required scope; None means any valid token
VERB_SCOPES: dict[str, Optional[str]] = {
    "tools.list": "tools.read",
    "experiments.read": "tools.read",
    "events.read": "tools.read",
    "provenance.verify": "tools.read",
    "experiments.create": "experiments.write",
    "experiments.plan": "experiments.write",
    "experiments.select": "experiments.write",
    "experiments.submit": "experiments.write",
    "experiments.control": "experiments.write",
    "experiments.archive": "experiments.write",
    "servers.register": None,
    "admin.reload": "admin",
}

# verbs a server may call on itself (checked by identity, not scope)
SERVER_SELF_VERBS = ("servers.heartbeat", "servers.deregister")


def _digest(secret: str) -> bytes:
    return hashlib.sha256(secret.encode("utf-8")).digest()


@dataclass
class Principal:
    principal_id: str
    kind: str  # human | agent | server
    scopes: set[str]
    secret_hash: bytes = b""

    def __post_init__(self):
        if self.kind not in ("human", "agent", "server"):
            raise SchemaViolation("principal.kind", f"unknown kind {self.kind!r}")
        unknown = self.scopes - set(SCOPES)
        if unknown:
            raise SchemaViolation("principal.scopes", f"unknown scopes {unknown}")
        if self.kind in ("human", "agent") and not self.scopes:
            raise SchemaViolation("principal.scopes",
                                  "human/agent principals need at least one scope")

    def public(self) -> dict:
        return {"principal_id": self.principal_id, "kind": self.kind,
                "scopes": sorted(self.scopes)}


@dataclass
class Token:
    value: str
    principal_id: str
    scopes: set[str]
    expires_at: float
    experiment_binding: Optional[str] = None

    def to_dict(self) -> dict:
        d = {"value": self.value, "principal_id": self.principal_id,
             "scopes": sorted(self.scopes), "expires_at": self.expires_at}
        if self.experiment_binding:
            d["experiment_binding"] = self.experiment_binding
        return d


class AuthStore:
    """Linearizable token store; authorize is a concurrent read."""

    def __init__(self, clock: Clock, id_source: IdSource | None = None,
                 ttl_seconds: int = DEFAULT_TTL_SECONDS):
        self._clock = clock
        self._ids = id_source or IdSource()
        self._ttl = ttl_seconds
        self._principals: dict[str, Principal] = {}
        self._tokens: dict[str, Token] = {}
        self._lock = threading.RLock()

    def add_principal(self, principal_id: str, kind: str, scopes, secret: str = ""):
        with self._lock:
            self._principals[principal_id] = Principal(
                principal_id=principal_id, kind=kind, scopes=set(scopes),
                secret_hash=_digest(secret) if secret else b"")

    def principal(self, principal_id: str) -> Principal:
        p = self._principals.get(principal_id)
        if p is None:
            raise BadCredentials("unknown principal")
        return p

    # --- issuance ------------------------------------------------------------

    def issue_token(self, principal_id: str, secret: str, requested_scopes,
                    experiment_binding: Optional[str] = None,
                    ttl_seconds: Optional[int] = None) -> Token:
        with self._lock:
            p = self._principals.get(principal_id)
            if p is None or not p.secret_hash or not hmac.compare_digest(
                    p.secret_hash, _digest(secret)):
                raise BadCredentials("bad principal or secret")
            scopes = set(requested_scopes) & p.scopes
            if not scopes:
                raise EmptyScopeIntersection(
                    f"no overlap between requested scopes and {sorted(p.scopes)}")
            token = Token(value=self._ids.token_value(),
                          principal_id=principal_id, scopes=scopes,
                          expires_at=self._clock.now() + (ttl_seconds or self._ttl),
                          experiment_binding=experiment_binding)
            self._tokens[token.value] = token
            return token

    def issue_server_token(self, server_id: str) -> Token:
        """Mint the callback/heartbeat token handed out at registration."""
        with self._lock:
            if server_id not in self._principals:
                self._principals[server_id] = Principal(
                    principal_id=server_id, kind="server", scopes=set())
            token = Token(value=self._ids.token_value(),
                          principal_id=server_id, scopes=set(),
                          expires_at=self._clock.now() + 365 * 86400)
            self._tokens[token.value] = token
            return token

    def revoke(self, token_value: str) -> None:
        with self._lock:
            if token_value not in self._tokens:
                raise UnknownToken(token_value)
            del self._tokens[token_value]

    # --- authorization ----------------------------------------------------------

    def _live_token(self, token_value: str) -> Token:
        token = self._tokens.get(token_value or "")
        if token is None or self._clock.now() >= token.expires_at:
            raise Unauthenticated("unknown or expired token")
        return token

    def authorize(self, token_value: str, verb: str,
                  experiment_id: Optional[str] = None,
                  server_id: Optional[str] = None) -> Principal:
        """Check token validity, verb scope, and experiment binding."""
        token = self._live_token(token_value)
        principal = self._principals.get(token.principal_id)
        if principal is None:
            raise Unauthenticated("principal gone")
        if (token.experiment_binding and experiment_id
                and experiment_id != token.experiment_binding):
            raise ExperimentMismatch(
                f"token bound to {token.experiment_binding}, "
                f"action targets {experiment_id}")
        if verb in SERVER_SELF_VERBS:
            if principal.kind == "server" and principal.principal_id == server_id:
                return principal
            if "admin" in token.scopes:
                return principal
            raise Forbidden("admin")
        if verb not in VERB_SCOPES:
            raise Forbidden(verb)
        required = VERB_SCOPES[verb]
        if required is not None and required not in token.scopes:
            raise Forbidden(required)
        return principal

    def token_scopes(self, token_value: str) -> set[str]:
        return set(self._live_token(token_value).scopes)

    def token_info(self, token_value: str) -> Token:
        return self._live_token(token_value)

    def require_scopes(self, token_value: str, scopes: set[str]) -> None:
        """Per-node execution scope check used before starting workflows."""
        token = self._live_token(token_value)
        missing = scopes - token.scopes
        if missing:
            raise Forbidden(sorted(missing)[0])
