"""Canonical serialization, digests, and seed derivation shared across modules."""

from __future__ import annotations

import hashlib
import json
from typing import Any

_SEP = "\x1f"  # unit separator: cannot appear in labels/names we accept


def canonical_json(obj: Any) -> str:
    """Serialize with sorted keys and no whitespace so digests are stable."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def digest(obj: Any) -> str:
    """Hex digest of an object's canonical JSON form."""
    return hashlib.sha256(canonical_json(obj).encode("ascii")).hexdigest()


def assignment_id(assignment: dict[str, str]) -> str:
    """Canonical configuration id: hash of sorted name=label pairs.

    Independent of insertion order, stable across runs and platforms.
    """
    joined = "\n".join(f"{name}={label}" for name, label in sorted(assignment.items()))
    return hashlib.sha256(joined.encode("utf-8")).hexdigest()[:32]


def derive_seed(*parts: object) -> int:
    """Deterministic 64-bit seed from an arbitrary tuple of parts."""
    joined = _SEP.join(str(p) for p in parts)
    raw = hashlib.sha256(joined.encode("utf-8")).digest()
    return int.from_bytes(raw[:8], "big")
