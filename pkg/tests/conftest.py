"""Shared fixtures for simulator tests."""

import numpy as np
import pytest

from aitp_sim.scenario import DeviceState, LocalDataset, TrafficKind, make_config


@pytest.fixture
def small_cfg():
    """Eight devices in two clusters with small datasets; runs in well under a second per round."""
    return make_config(n_devices=8, n_aggregators=2, rounds=3, dataset_rows=32, validation_rows=64, seed=7)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def make_device():
    """Factory for a static eMBB device in the middle of a 1 km area."""

    def _make(**overrides):
        values = dict(
            id=0,
            cluster_id=0,
            position=np.array([500.0, 500.0]),
            waypoint=np.array([600.0, 500.0]),
            speed=0.0,
            traffic=TrafficKind.EMBB,
            snr_offset_db=0.0,
            tx_power=0.2,
            bandwidth=1e8,
        )
        values.update(overrides)
        return DeviceState(**values)

    return _make


@pytest.fixture
def make_dataset():
    def _make(rows, seed=0):
        gen = np.random.default_rng(seed)
        return LocalDataset(features=gen.normal(size=(rows, 4)), labels=gen.uniform(size=(rows, 2)))

    return _make


@pytest.fixture
def write_scenario(tmp_path):
    def _write(text, name="scenario.conf"):
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return path

    return _write
