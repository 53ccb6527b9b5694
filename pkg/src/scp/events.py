"""Event hashing and construction for the tamper-evident provenance chain.

An event's hash is SHA-256 over the canonical JSON of all fields except
``hash`` itself; ``prev_hash`` links it to the previous event (64 zeros for
seq 1). Any mutation, reorder, or deletion breaks recomputation somewhere.
"""

from __future__ import annotations

import hashlib

from . import canonical
from .types import GENESIS_HASH, Event


def hash_event(fields: dict) -> str:
    """Digest of an event-sans-hash dict (must include prev_hash)."""
    if "prev_hash" not in fields:
        raise ValueError("prev_hash required before hashing")
    body = {k: v for k, v in fields.items() if k != "hash"}
    return hashlib.sha256(canonical.dumps_bytes(body)).hexdigest()


def make_event(seq: int, timestamp: str, experiment_id: str, kind: str,
               actor: str, payload: dict, prev_hash: str) -> Event:
    fields = {
        "seq": seq,
        "timestamp": timestamp,
        "experiment_id": experiment_id,
        "kind": kind,
        "actor": actor,
        "payload": payload,
        "prev_hash": prev_hash,
    }
    return Event(hash=hash_event(fields), **fields)


def verify_link(event: Event, prev_hash: str) -> bool:
    """True iff the event links to prev_hash and its own hash recomputes."""
    return event.prev_hash == prev_hash and hash_event(event.to_dict()) == event.hash


def verify_sequence(events: list[Event]) -> int | None:
    """Return the first bad seq, or None when the whole chain verifies."""
    prev = GENESIS_HASH
    expected_seq = 1
    for event in events:
        if event.seq != expected_seq or not verify_link(event, prev):
            return event.seq
        prev = event.hash
        expected_seq += 1
    return None
