"""Counter-based named random streams.

Every consumer asks for ``stream(seed, "name", i, j, ...)`` and gets an
independent Philox generator keyed by the master seed, the stream name and
the integer counters. Streams never share state, so work can be split across
processes or resumed mid-run without changing any draw.
"""
import zlib

import numpy as np


def _name_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def stream(seed: int, name: str, *counters: int) -> np.random.Generator:
    key = (_name_key(name),) + tuple(int(c) for c in counters)
    ss = np.random.SeedSequence(int(seed), spawn_key=key)
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, name: str, *counters: int) -> int:
    """A 63-bit integer seed for a child computation."""
    key = (_name_key(name),) + tuple(int(c) for c in counters)
    ss = np.random.SeedSequence(int(seed), spawn_key=key)
    return int(ss.generate_state(2, dtype=np.uint64)[0] >> np.uint64(1))
