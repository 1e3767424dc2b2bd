"""Deterministic RNG derivation.

Python's salted str hash must never leak into pipeline outputs, so every
seeded choice goes through a SHA-256-derived integer instead of hash().
"""

from __future__ import annotations

import hashlib
import random


def stable_int(*parts: object) -> int:
    payload = "\x1f".join(str(p) for p in parts).encode("utf-8")
    return int.from_bytes(hashlib.sha256(payload).digest()[:8], "big")


def stable_rng(*parts: object) -> random.Random:
    """Return a Random seeded only by the string forms of *parts*."""
    return random.Random(stable_int(*parts))
