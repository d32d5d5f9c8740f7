"""Root-seed splitting.

Every random stream is ``SeedSequence(root, spawn_key=crc32(name) ...)`` for
a path of stream names such as ``("flow", "init")``. Streams with different
paths are independent and a stream never depends on how many numbers other
streams consumed.
"""

from __future__ import annotations

import zlib

import numpy as np

from .errors import InvalidArgumentError

MAX_SEED = 2**64 - 1


def check_seed(seed) -> int:
    try:
        value = int(seed)
    except (TypeError, ValueError) as exc:
        raise InvalidArgumentError(f"seed must be an unsigned 64-bit integer, got {seed!r}") from exc
    if not 0 <= value <= MAX_SEED:
        raise InvalidArgumentError(f"seed must be in [0, 2**64), got {value}")
    return value


def seed_sequence(root: int, *names: str) -> np.random.SeedSequence:
    key = tuple(zlib.crc32(n.encode("utf-8")) for n in names)
    return np.random.SeedSequence(check_seed(root), spawn_key=key)


def rng_for(root: int, *names: str) -> np.random.Generator:
    return np.random.default_rng(seed_sequence(root, *names))


def int_seed(root: int, *names: str) -> int:
    """A plain 32-bit integer seed for APIs that take one."""
    return int(seed_sequence(root, *names).generate_state(1)[0])
