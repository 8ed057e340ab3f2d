"""Seeded, splittable random streams.

Every stream is a Philox4x64-10 counter-based generator keyed by the pair
``(master_seed, stream_id)``.  Philox output depends only on key and counter,
so a stream produces the same values on every platform and numpy release that
keeps the bit generator stable, and distinct stream ids never share state.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def derive_stream(master_seed: int, stream_id: int = 0) -> np.random.Generator:
    """Return the generator for ``stream_id`` under ``master_seed``.

    Both integers are reduced modulo 2**64, so negative seeds are accepted and
    zero is a valid seed.
    """
    key = np.array([int(master_seed) & _MASK64, int(stream_id) & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def as_generator(rng) -> np.random.Generator:
    """Coerce ``None``, an int seed or an existing generator to a generator."""
    if isinstance(rng, np.random.Generator):
        return rng
    if rng is None:
        return derive_stream(0, 0)
    if isinstance(rng, (int, np.integer)):
        return derive_stream(int(rng), 0)
    raise TypeError(f"cannot build a random generator from {type(rng).__name__}")
