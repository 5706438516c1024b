"""Pairwise-masked secure aggregation and the multi-aggregator global combine.

Each weight-scaled update is encoded as fixed-point integers in Z_2^64 using
one power-of-two exponent per cluster. Device i adds the shared mask m_ij for
every roster peer j > i and subtracts m_ji for every peer j < i, so the masks
cancel exactly in the wrapped 64-bit sum and the aggregator only ever sees
masked words.
"""

from __future__ import annotations

from dataclasses import dataclass
import logging
import math
from typing import Sequence

import numpy as np
import numpy.typing as npt

from ..errors import DropoutError, NoAggregatorError
from ..rng import stream
from .model import ModelParams

logger = logging.getLogger(__name__)

# Headroom bits kept free so the sum of K encodings fits in a signed 64-bit word.
_FIXED_POINT_BITS = 62

ClusterUpdate = tuple[int, ModelParams, int]


@dataclass(frozen=True)
class MaskedUpdate:
    """What a device hands its aggregator.

    ``values`` are wrapped uint64 words, or plain floats when the device is
    alone in its roster (``exponent`` is then None).
    """

    device_id: int
    values: npt.NDArray[np.uint64] | npt.NDArray[np.float64]
    weight: int
    roster: tuple[int, ...]
    exponent: int | None


def _scaled(updates: Sequence[ClusterUpdate]) -> list[npt.NDArray[np.float64]]:
    total = sum(weight for _, _, weight in updates)
    return [np.asarray(delta, dtype=np.float64) * (weight / total) for _, delta, weight in updates]


def fixed_point_exponent(values: Sequence[npt.NDArray[np.float64]]) -> int:
    """Largest exponent e for which the sum of ``values`` scaled by 2**e stays within 62 bits."""
    peak = max((float(np.max(np.abs(v))) if v.size else 0.0) for v in values)
    if peak == 0.0:
        return _FIXED_POINT_BITS
    return _FIXED_POINT_BITS - math.ceil(math.log2(len(values) * peak))


def encode_fixed_point(values: npt.NDArray[np.float64], exponent: int) -> npt.NDArray[np.uint64]:
    return np.rint(np.ldexp(values, exponent)).astype(np.int64).view(np.uint64)


def decode_fixed_point(words: npt.NDArray[np.uint64], exponent: int) -> npt.NDArray[np.float64]:
    return np.ldexp(words.view(np.int64).astype(np.float64), -exponent)


def encode_cluster(updates: Sequence[ClusterUpdate]) -> tuple[list[npt.NDArray[np.uint64]], int]:
    """Fixed-point encodings of the weight-scaled updates and their common exponent."""
    scaled = _scaled(updates)
    exponent = fixed_point_exponent(scaled)
    return [encode_fixed_point(v, exponent) for v in scaled], exponent


def mask_updates(
    updates: Sequence[ClusterUpdate], seed: int, cluster_id: int, round_index: int, attempt: int = 0
) -> list[MaskedUpdate]:
    """Mask a cluster's ``(device_id, noisy_delta, weight)`` updates.

    Masks come from the ``masks`` stream keyed by cluster, round and masking
    attempt; a re-mask after a dropout therefore uses fresh masks.
    """
    if not updates:
        raise ValueError("mask_updates needs at least one update")
    ordered = sorted(updates, key=lambda u: u[0])
    roster = tuple(device_id for device_id, _, _ in ordered)
    if len(ordered) == 1:
        device_id, _, weight = ordered[0]
        return [MaskedUpdate(device_id, _scaled(ordered)[0], weight, roster, None)]

    encoded, exponent = encode_cluster(ordered)
    rng = stream(seed, "masks", cluster_id, round_index, attempt)
    dim = encoded[0].shape[0]
    for a in range(len(ordered)):
        for b in range(a + 1, len(ordered)):
            mask = rng.integers(0, np.iinfo(np.uint64).max, size=dim, dtype=np.uint64, endpoint=True)
            encoded[a] = encoded[a] + mask
            encoded[b] = encoded[b] - mask
    return [
        MaskedUpdate(device_id, words, weight, roster, exponent)
        for (device_id, _, weight), words in zip(ordered, encoded)
    ]


def secure_aggregate(masked: Sequence[MaskedUpdate]) -> tuple[ModelParams, int]:
    """Weighted mean of the cluster's updates, recovered from masked words only.

    Returns:
        The aggregated update and the total weight of the contributors.

    Raises:
        ValueError: If ``masked`` is empty or the updates disagree on roster or exponent.
        DropoutError: If members of the masking roster are missing.
    """
    if not masked:
        raise ValueError("secure_aggregate needs at least one masked update")
    roster = masked[0].roster
    exponent = masked[0].exponent
    if any(m.roster != roster or m.exponent != exponent for m in masked):
        raise ValueError("masked updates come from different masking rounds")
    missing = set(roster) - {m.device_id for m in masked}
    if missing:
        raise DropoutError(sorted(missing))

    ordered = sorted(masked, key=lambda m: m.device_id)
    total_weight = sum(m.weight for m in ordered)
    if exponent is None:
        return np.array(ordered[0].values, dtype=np.float64), total_weight
    acc = np.zeros(ordered[0].values.shape, dtype=np.uint64)
    for m in ordered:
        acc += m.values
    return decode_fixed_point(acc, exponent), total_weight


def masks_cancel(updates: Sequence[ClusterUpdate], masked: Sequence[MaskedUpdate]) -> bool:
    """Check that the wrapped sum of ``masked`` equals the wrapped sum of the raw encodings."""
    if len(updates) == 1:
        return bool(np.array_equal(_scaled(updates)[0], masked[0].values))
    encoded, _ = encode_cluster(sorted(updates, key=lambda u: u[0]))
    raw = np.zeros(encoded[0].shape, dtype=np.uint64)
    for words in encoded:
        raw += words
    total = np.zeros(encoded[0].shape, dtype=np.uint64)
    for m in masked:
        total += m.values
    return bool(np.array_equal(raw, total))


def global_combine(
    w_global: ModelParams, cluster_deltas: Sequence[ModelParams], n_aggregators: int, *, strict: bool = False
) -> ModelParams:
    """``W + sum(deltas) / M_live``, or divided by the configured ``M`` when ``strict``.

    Raises:
        NoAggregatorError: If no cluster produced an update.
    """
    if not cluster_deltas:
        raise NoAggregatorError("no live aggregator produced an update this round")
    acc = np.zeros_like(w_global)
    for delta in cluster_deltas:
        acc += delta
    divisor = n_aggregators if strict else len(cluster_deltas)
    return w_global + acc / divisor
