"""Deterministic, parallel-safe random streams keyed by (scenario, seed, trial)."""
from __future__ import annotations

import hashlib

import numpy as np


def stream_key(*parts) -> int:
    """Stable 128-bit integer hash of the key parts (independent of PYTHONHASHSEED)."""
    text = "\x1f".join(str(p) for p in parts)
    return int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:16], "little")


def stream(scenario_id, seed, trial=0) -> np.random.Generator:
    """Philox generator for one (scenario id, seed, trial) triple."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(
        stream_key(scenario_id, seed, trial))))
