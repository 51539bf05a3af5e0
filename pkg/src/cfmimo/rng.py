"""Counter-based random streams keyed by (setup, block, purpose).

Every random draw in the simulator comes from a Philox generator whose key
encodes the consuming context, so results do not depend on evaluation order
or worker count. The packing is injective: setup index (24 bits), block
index (32 bits), purpose code (8 bits).
"""

from __future__ import annotations

import numpy as np

PURPOSE_SETUP = 0
PURPOSE_CHANNEL = 1
PURPOSE_PILOT_NOISE = 2
PURPOSE_PILOT_ASSIGN = 3

_MAX_SETUP = 1 << 24
_MAX_BLOCK = 1 << 32
_MAX_PURPOSE = 1 << 8


def stream_key(setup_index: int, block_index: int, purpose: int) -> int:
    if not 0 <= setup_index < _MAX_SETUP:
        raise ValueError(f"setup_index out of range: {setup_index}")
    if not 0 <= block_index < _MAX_BLOCK:
        raise ValueError(f"block_index out of range: {block_index}")
    if not 0 <= purpose < _MAX_PURPOSE:
        raise ValueError(f"purpose out of range: {purpose}")
    return (setup_index << 40) | (block_index << 8) | purpose


def keyed_stream(seed: int, setup_index: int, block_index: int, purpose: int) -> np.random.Generator:
    key = np.array([seed & (2**64 - 1), stream_key(setup_index, block_index, purpose)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def setup_stream(seed: int, setup_index: int) -> np.random.Generator:
    return keyed_stream(seed, setup_index, 0, PURPOSE_SETUP)


def complex_normal(rng: np.random.Generator, shape) -> np.ndarray:
    """Unit-variance circularly symmetric complex Gaussian samples."""
    z = rng.standard_normal(tuple(shape) + (2,))
    return (z[..., 0] + 1j * z[..., 1]) / np.sqrt(2.0)
