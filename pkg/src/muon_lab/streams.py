"""Named deterministic random streams.

All randomness in a run flows from one root seed expanded into named
substreams, so changing how one consumer draws never perturbs another.
Streams use the counter-based Philox generator; names are hashed with a
stable digest (not Python's per-process hash).
"""
from __future__ import annotations

import hashlib

import numpy as np


def _key(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFFFFFFFFFF
    digest = hashlib.blake2s(str(part).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def make_stream(*parts) -> np.random.Generator:
    """Generator keyed by an arbitrary tuple of ints and strings."""
    if not parts:
        raise ValueError("need at least one key part")
    seq = np.random.SeedSequence([_key(p) for p in parts])
    return np.random.Generator(np.random.Philox(seq))
