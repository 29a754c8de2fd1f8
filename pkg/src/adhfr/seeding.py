"""One global seed fanned out to independent per-component streams."""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(global_seed: int, component: str) -> int:
    digest = hashlib.sha256(f"{int(global_seed)}/{component}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def component_rng(global_seed: int, component: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(global_seed, component))
