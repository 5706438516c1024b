import math

import numpy as np
import pytest

from aitp_sim.errors import DomainError
from aitp_sim.fl.privacy import (
    DP_DELTA,
    PrivacyAccountant,
    add_dp_noise,
    clip_update,
    gaussian_sigma,
    spend_privacy,
)


@pytest.mark.parametrize("epsilon,clip_norm", [(1.0, 1.0), (0.1, 1.0), (2.0, 0.5)])
def test_gaussian_sigma(epsilon, clip_norm):
    expected = clip_norm * math.sqrt(2.0 * math.log(1.25 / DP_DELTA)) / epsilon
    assert gaussian_sigma(epsilon, clip_norm) == pytest.approx(expected)


def test_sigma_scales_inversely_with_epsilon():
    assert gaussian_sigma(0.1, 1.0) == pytest.approx(10 * gaussian_sigma(1.0, 1.0))


def test_infinite_epsilon_adds_no_noise(rng):
    delta = np.array([0.3, -0.4])
    assert gaussian_sigma(math.inf, 1.0) == 0.0
    np.testing.assert_array_equal(add_dp_noise(delta, math.inf, 1.0, rng), delta)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(epsilon=0.0, clip_norm=1.0),
        dict(epsilon=-1.0, clip_norm=1.0),
        dict(epsilon=1.0, clip_norm=0.0),
        dict(epsilon=1.0, clip_norm=1.0, delta=1.0),
        dict(epsilon=math.nan, clip_norm=1.0),
    ],
)
def test_gaussian_sigma_rejects_invalid(kwargs):
    with pytest.raises(DomainError):
        gaussian_sigma(**kwargs)


def test_clip_scales_long_updates():
    delta = np.array([3.0, 4.0]) * 0.4
    clipped = clip_update(delta, 1.0)
    assert np.linalg.norm(clipped) == pytest.approx(1.0)
    np.testing.assert_allclose(clipped / np.linalg.norm(clipped), delta / np.linalg.norm(delta))


def test_clip_keeps_short_updates():
    delta = np.array([0.1, -0.2])
    clipped = clip_update(delta, 1.0)
    np.testing.assert_array_equal(clipped, delta)
    assert clipped is not delta


def test_noise_standard_deviation(rng):
    noisy = add_dp_noise(np.zeros(100_000), 1.0, 1.0, rng)
    assert np.std(noisy) == pytest.approx(gaussian_sigma(1.0, 1.0), rel=0.02)
    assert abs(np.mean(noisy)) < 0.05


def test_disabled_noise_only_clips():
    rng = np.random.default_rng(1)
    untouched = np.random.default_rng(1)
    result = add_dp_noise(np.array([6.0, 8.0]), 1.0, 5.0, rng, enabled=False)
    np.testing.assert_allclose(result, [3.0, 4.0])
    assert rng.random() == untouched.random()


def test_accountant_budget_and_exclusion():
    acct = PrivacyAccountant(epsilon_max=10.0)
    assert all(spend_privacy(acct, 3, 1.0) for _ in range(10))
    assert acct.epsilon_spent(3) == 10.0
    assert not acct.is_excluded(3)
    assert not spend_privacy(acct, 3, 1.0)
    assert acct.is_excluded(3)
    assert acct.epsilon_spent(3) == 10.0
    assert not spend_privacy(acct, 3, 0.0)


def test_accountant_tolerates_float_accumulation():
    acct = PrivacyAccountant(epsilon_max=10.0)
    assert all(acct.spend(0, 0.1) for _ in range(100))
    assert acct.epsilon_spent(0) <= 10.0
    assert not acct.spend(0, 0.1)


def test_accountant_tracks_devices_separately():
    acct = PrivacyAccountant(epsilon_max=1.0)
    acct.spend(1, 1.0)
    acct.exhaust(2)
    assert acct.epsilon_spent(0) == 0.0
    assert acct.epsilon_spent(1) == acct.epsilon_spent(2) == 1.0
    assert acct.excluded == set()
