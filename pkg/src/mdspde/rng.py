"""Counter-based random streams for reproducible, order-independent sampling.

Every Gaussian block is produced by a Philox generator whose 256-bit counter
encodes (step, chunk, stream). Blocks are therefore independent of the order
in which path chunks are processed: a batch split across workers draws exactly
the same numbers as a serial run.
"""

from __future__ import annotations

import threading

import numpy as np

# Stream ids separate noise channels and samplers sharing one seed.
STREAM_SLOW_NOISE = 1
STREAM_FAST_NOISE = 2
STREAM_FROZEN_NOISE = 3
STREAM_INVARIANT = 4
STREAM_GENERIC = 5

_U64 = np.uint64
_local = threading.local()


def _counter(step: int, chunk: int, stream: int):
    # Low word is left free-running for draws within the block.
    return np.array([0, step, chunk, stream], dtype=_U64)


def generator(seed: int, stream: int, step: int = 0, chunk: int = 0) -> np.random.Generator:
    """Generator positioned at the (seed, stream, step, chunk) block.

    One Philox object per (thread, seed) is reused by resetting its counter,
    avoiding per-call seeding overhead; the returned stream depends only on
    the four block coordinates.
    """
    seed = seed & (2**64 - 1)
    cache = getattr(_local, "cache", None)
    if cache is None:
        cache = _local.cache = {}
    entry = cache.get(seed)
    if entry is None:
        bitgen = np.random.Philox(key=np.uint64(seed))
        key = bitgen.state["state"]["key"]
        entry = cache[seed] = (bitgen, key, np.random.Generator(bitgen))
    bitgen, key, gen = entry
    bitgen.state = {
        "bit_generator": "Philox",
        "state": {"counter": _counter(step, chunk, stream), "key": key},
        "buffer": np.zeros(4, dtype=_U64),
        "buffer_pos": 4,
        "has_uint32": 0,
        "uinteger": 0,
    }
    return gen


def normal_block(seed: int, stream: int, step: int, chunk: int, shape) -> np.ndarray:
    """Standard-normal block keyed by (seed, stream, step, chunk)."""
    return generator(seed, stream, step, chunk).standard_normal(shape)
