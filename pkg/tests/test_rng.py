import numpy as np
import pytest

from aitp_sim.rng import STREAM_PURPOSES, stream


def test_same_key_same_draws():
    np.testing.assert_array_equal(stream(42, "fading", 3, 7).random(5), stream(42, "fading", 3, 7).random(5))


@pytest.mark.parametrize(
    "other",
    [(43, "fading", 3, 7), (42, "traffic", 3, 7), (42, "fading", 4, 7), (42, "fading", 3, 8), (42, "fading", 3)],
)
def test_keys_are_independent(other):
    assert not np.array_equal(stream(42, "fading", 3, 7).random(5), stream(*other).random(5))


def test_purpose_tags_are_unique():
    assert len(set(STREAM_PURPOSES.values())) == len(STREAM_PURPOSES)


def test_rejects_unknown_purpose_and_negative_ids():
    with pytest.raises(ValueError):
        stream(1, "weather")
    with pytest.raises(ValueError):
        stream(1, "fading", -1)


def test_accepts_full_64_bit_seed():
    assert 0.0 <= stream(2**64 - 1, "init").random() < 1.0
