import numpy as np
import pytest

from aitp_sim.errors import DomainError
from aitp_sim.mobility_traffic import TRAFFIC_CLASSES, random_waypoint_step, traffic_for
from aitp_sim.scenario import TrafficKind

STEP = dict(area_m=1000.0, speed_min=1.0, speed_max=15.0)


def test_static_device_is_unchanged(make_device, rng):
    device = make_device(speed=0.0)
    assert random_waypoint_step(device, 5.0, rng, **STEP) is device


def test_straight_line_step(make_device, rng):
    device = make_device(position=np.array([0.0, 0.0]), waypoint=np.array([100.0, 0.0]), speed=10.0)
    moved = random_waypoint_step(device, 1.0, rng, **STEP)
    np.testing.assert_allclose(moved.position, [10.0, 0.0])
    np.testing.assert_array_equal(moved.waypoint, [100.0, 0.0])
    assert moved.speed == 10.0
    np.testing.assert_array_equal(device.position, [0.0, 0.0])


def test_arrival_redraws_waypoint_and_speed(make_device, rng):
    device = make_device(position=np.array([95.0, 0.0]), waypoint=np.array([100.0, 0.0]), speed=10.0)
    moved = random_waypoint_step(device, 1.0, rng, **STEP)
    np.testing.assert_array_equal(moved.position, [100.0, 0.0])
    assert np.all((moved.waypoint >= 0.0) & (moved.waypoint <= 1000.0))
    assert 1.0 <= moved.speed <= 15.0


def test_positions_stay_in_area(make_device, rng):
    device = make_device(position=np.array([50.0, 50.0]), waypoint=np.array([90.0, 10.0]), speed=7.0)
    for _ in range(10_000):
        device = random_waypoint_step(device, 1.0, rng, area_m=100.0, speed_min=1.0, speed_max=15.0)
        assert np.all((device.position >= 0.0) & (device.position <= 100.0))


def test_distance_to_waypoint_decreases_until_redraw(make_device, rng):
    device = make_device(position=np.array([0.0, 0.0]), waypoint=np.array([300.0, 400.0]), speed=12.0)
    remaining = np.linalg.norm(device.waypoint - device.position)
    while True:
        device = random_waypoint_step(device, 1.0, rng, **STEP)
        if np.array_equal(device.position, [300.0, 400.0]):
            break
        now = np.linalg.norm(device.waypoint - device.position)
        assert now < remaining
        remaining = now


@pytest.mark.parametrize("dt", [0.0, -1.0])
def test_step_rejects_non_positive_dt(make_device, rng, dt):
    with pytest.raises(DomainError):
        random_waypoint_step(make_device(speed=3.0), dt, rng, **STEP)
    with pytest.raises(DomainError):
        traffic_for(make_device(), dt, rng)


def test_traffic_classes():
    embb, urllc, mmtc = (TRAFFIC_CLASSES[k] for k in (TrafficKind.EMBB, TrafficKind.URLLC, TrafficKind.MMTC))
    assert (embb.arrival_rate, embb.packet_bits) == (50.0, 12_000)
    assert (urllc.arrival_rate, urllc.packet_bits) == (200.0, 256)
    assert (mmtc.arrival_rate, mmtc.packet_bits) == (1.0, 256)
    assert urllc.latency_budget < embb.latency_budget
    assert all(c.arrival_rate > 0 and c.packet_bits > 0 for c in TRAFFIC_CLASSES.values())


def test_mmtc_mean_offered_bits(make_device, rng):
    device = make_device(traffic=TrafficKind.MMTC)
    offered = [traffic_for(device, 1.0, rng)[1] for _ in range(100_000)]
    assert np.mean(offered) == pytest.approx(256.0, rel=0.02)
    assert all(bits % 256 == 0 for bits in offered[:100])


def test_poisson_arrival_mean(make_device, rng):
    device = make_device(traffic=TrafficKind.URLLC)
    packets = [traffic_for(device, 0.01, rng)[1] // 256 for _ in range(100_000)]
    assert np.mean(packets) == pytest.approx(200.0 * 0.01, rel=0.02)


def test_tiny_window_offers_nothing(make_device, rng):
    device = make_device(traffic=TrafficKind.EMBB)
    results = [traffic_for(device, 1e-9, rng) for _ in range(100)]
    assert all(rate == 50.0 and bits == 0 for rate, bits in results)
