"""Named random streams.

Every random draw in a run comes from a generator keyed by
``(seed, purpose, *ids)``. Protocol mode is never part of the key, so the
three modes see identical topology, mobility, traffic and fading draws for
the same seed.
"""

from __future__ import annotations

from typing import Final

import numpy as np

# Stable integer tags; Python's hash() is salted per process and cannot be used here.
STREAM_PURPOSES: Final[dict[str, int]] = {
    "topology": 1,
    "dataset": 2,
    "validation": 3,
    "mobility": 4,
    "traffic": 5,
    "fading": 6,
    "init": 7,
    "local_training": 8,
    "central_training": 9,
    "dp_noise": 10,
    "masks": 11,
    "participation": 12,
}


def stream(seed: int, purpose: str, *ids: int) -> np.random.Generator:
    """Return an independent PCG64 generator for ``purpose`` and ``ids``.

    Args:
        seed: Scenario seed (64-bit unsigned).
        purpose: One of ``STREAM_PURPOSES``.
        *ids: Non-negative integers such as a device id and a round index.

    Raises:
        ValueError: If the purpose is unknown or an id is negative.
    """
    try:
        tag = STREAM_PURPOSES[purpose]
    except KeyError as exc:
        raise ValueError(f"unknown stream purpose: {purpose!r}") from exc
    if any(i < 0 for i in ids):
        raise ValueError(f"stream ids must be non-negative, got {ids}")
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=(tag, *(int(i) for i in ids)))
    return np.random.Generator(np.random.PCG64(seq))
