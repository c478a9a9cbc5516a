"""Seed derivation: one flat seed, independent streams per (component, index)."""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(seed: int, component: str, index: int = 0) -> int:
    """64-bit seed from SHA-256 of ``seed:component:index``."""
    digest = hashlib.sha256(f"{int(seed)}:{component}:{int(index)}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def derive_rng(seed: int, component: str, index: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive_seed(seed, component, index)))
