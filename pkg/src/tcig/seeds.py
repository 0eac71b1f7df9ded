"""Deterministic 64-bit seed derivation, stable across processes and platforms."""
from __future__ import annotations

import hashlib


def hash64(*parts) -> int:
    """Collapse ints/strings/bytes into a reproducible unsigned 64-bit integer."""
    h = hashlib.sha256()
    for p in parts:
        if isinstance(p, bool):
            raise TypeError("booleans are ambiguous seed material")
        if isinstance(p, int):
            h.update(b"i" + p.to_bytes(16, "big", signed=True))
        elif isinstance(p, str):
            raw = p.encode("utf-8")
            h.update(b"s" + len(raw).to_bytes(4, "big") + raw)
        elif isinstance(p, bytes):
            h.update(b"b" + len(p).to_bytes(4, "big") + p)
        else:
            raise TypeError(f"unsupported seed part type {type(p).__name__}")
    return int.from_bytes(h.digest()[:8], "big")
