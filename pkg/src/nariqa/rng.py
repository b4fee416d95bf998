"""Deterministic, schedule-independent random streams.

Every stochastic component draws from its own Philox stream keyed by a
stable string tuple, so parallel evaluation order cannot perturb results.
"""

from __future__ import annotations

import hashlib

import numpy as np


def stream_key(*parts) -> int:
    """128-bit key derived from the printable form of the parts."""
    text = "\x1f".join(str(p) for p in parts)
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=16).digest()
    return int.from_bytes(digest, "little")


def stream(*parts) -> np.random.Generator:
    """Independent generator for the given key tuple."""
    return np.random.Generator(np.random.Philox(key=stream_key(*parts)))
