#!/usr/bin/env python3
"""
Counter-based random streams
Each block of sample indices draws from its own Philox key, so a block's
values depend only on (seed, tag, block index) and never on how blocks are
scheduled across workers.
"""

import zlib
from typing import Callable

import numpy as np

BLOCK_SIZE = 4096
_MASK64 = (1 << 64) - 1


def block_generator(seed: int, block: int, tag: str = "") -> np.random.Generator:
    tag_code = zlib.crc32(tag.encode("utf-8")) & 0xFFFFFFFF
    key = np.array([int(seed) & _MASK64, ((tag_code << 32) | (int(block) & 0xFFFFFFFF)) & _MASK64],
                   dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def draw_blocks(seed: int, n: int, tag: str,
                draw: Callable[[np.random.Generator, int], np.ndarray]) -> np.ndarray:
    """Concatenate draw(rng_k, size_k) over fixed-size index blocks"""
    parts = []
    for block, start in enumerate(range(0, n, BLOCK_SIZE)):
        size = min(BLOCK_SIZE, n - start)
        parts.append(draw(block_generator(seed, block, tag), size))
    if not parts:
        return np.empty((0,))
    return np.concatenate(parts, axis=0)
