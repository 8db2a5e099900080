"""Named, stable random substreams derived from one run seed."""
from __future__ import annotations

import zlib

import numpy as np


def _key(name: str, keys) -> list[int]:
    return [zlib.crc32(name.encode("utf-8"))] + [int(k) for k in keys]


def substream(seed: int, name: str, *keys: int) -> int:
    """A 32-bit seed that depends only on (seed, name, keys)."""
    ss = np.random.SeedSequence(int(seed), spawn_key=_key(name, keys))
    return int(ss.generate_state(1)[0])


def generator(seed: int, name: str, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=_key(name, keys)))
