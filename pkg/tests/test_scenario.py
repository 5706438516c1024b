import numpy as np
import pytest

from aitp_sim.adaptation import oracle_label
from aitp_sim.channel import ChannelModel
from aitp_sim.errors import ParseError, ValidationError
from aitp_sim.rng import stream
from aitp_sim.scenario import (
    FailureEvent,
    Mode,
    TrafficKind,
    anchor_positions,
    build_topology,
    load_scenario,
    make_config,
    nearest_anchor,
    synth_dataset,
    validation_set,
)


def test_load_scenario_echoes_values(write_scenario):
    path = write_scenario("n_devices = 500\nn_aggregators = 5\nmode = AITP\n")
    cfg = load_scenario(path)
    assert cfg.n_devices == 500
    assert cfg.n_aggregators == 5
    assert cfg.mode is Mode.AITP
    assert cfg.rounds == 20


def test_load_scenario_minimal(write_scenario):
    cfg = load_scenario(write_scenario("n_devices = 1\nn_aggregators = 1\n"))
    assert (cfg.n_devices, cfg.n_aggregators) == (1, 1)


def test_load_scenario_comments_and_case(write_scenario):
    text = """
    # a comment line
    mode = caip   # trailing comment
    channel_model = thz_140ghz
    traffic_mix = 0.5, 0.25, 0.25
    failure_plan = 10:aggregator:2; 3:device:7
    dp_enabled = false
    strict_paper_combine = true
    """
    cfg = load_scenario(write_scenario(text))
    assert cfg.mode is Mode.CAIP
    assert cfg.channel_model is ChannelModel.THZ_140GHZ
    assert cfg.traffic_mix == (0.5, 0.25, 0.25)
    assert cfg.failure_plan == (FailureEvent(10, "aggregator", 2), FailureEvent(3, "device", 7))
    assert cfg.dp_enabled is False
    assert cfg.strict_paper_combine is True


@pytest.mark.parametrize(
    "text,field",
    [
        ("n_aggregators = 0\n", "n_aggregators"),
        ("n_devices = 3\nn_aggregators = 4\n", "n_aggregators"),
        ("traffic_mix = 0.5, 0.2, 0.2\n", "traffic_mix"),
        ("objective_weights = 0, 0, 0\n", "objective_weights"),
        ("dp_epsilon_round = 60\n", "dp_epsilon_round"),
        ("power_max = 0\n", "power_max"),
        ("speed_min = 20\n", "speed_min"),
        ("failure_plan = 10:router:2\n", "failure_plan"),
    ],
)
def test_load_scenario_validation_errors_name_field(write_scenario, text, field):
    with pytest.raises(ValidationError) as excinfo:
        load_scenario(write_scenario(text))
    assert excinfo.value.field == field
    assert str(excinfo.value).startswith(f"{field}: ")


@pytest.mark.parametrize(
    "text",
    [
        "n_devices 50\n",
        "n_devcies = 50\n",
        "seed = 1\nseed = 2\n",
    ],
)
def test_load_scenario_parse_errors(write_scenario, text):
    with pytest.raises(ParseError):
        load_scenario(write_scenario(text))


def test_load_scenario_missing_file(tmp_path):
    with pytest.raises(ParseError):
        load_scenario(tmp_path / "nope.conf")


def test_config_text_reloads_identically(write_scenario):
    cfg = make_config(n_devices=12, n_aggregators=3, failure_plan="4:device:1", traffic_mix=(0.2, 0.3, 0.5))
    assert load_scenario(write_scenario(cfg.to_text())) == cfg


def test_replace_revalidates():
    cfg = make_config()
    assert cfg.replace(seed=9).seed == 9
    with pytest.raises(ValidationError):
        cfg.replace(n_devices=3)


@pytest.mark.parametrize("text", ["10:aggregator", "0:device:1", "1:device:-1", "x:device:1", "1:switch:0"])
def test_failure_event_parse_rejects(text):
    with pytest.raises(ValueError):
        FailureEvent.parse(text)


def test_failure_event_text():
    assert FailureEvent.parse(" 10 : Aggregator : 2 ").to_text() == "10:aggregator:2"


def test_anchor_grid():
    anchors = anchor_positions(1000.0, 4)
    np.testing.assert_allclose(anchors, [[250, 250], [750, 250], [250, 750], [750, 750]])
    assert anchor_positions(1000.0, 5).shape == (5, 2)


def test_nearest_anchor_ties_go_low():
    anchors = np.array([[0.0, 0.0], [10.0, 0.0]])
    assert nearest_anchor(np.array([5.0, 0.0]), anchors) == 0
    assert nearest_anchor(np.array([5.0, 0.0]), anchors, candidates=[1]) == 1


def test_topology_partitions_devices():
    cfg = make_config(n_devices=500, n_aggregators=5, seed=42, dataset_rows=4)
    devices, aggregators = build_topology(cfg)
    members = [i for agg in aggregators for i in agg.member_ids]
    assert len(aggregators) == 5
    assert sum(len(agg.member_ids) for agg in aggregators) == 500
    assert sorted(members) == list(range(500))
    for device in devices:
        assert device.id in aggregators[device.cluster_id].member_ids
        assert np.all((device.position >= 0) & (device.position <= cfg.area_m))
        assert 0 < device.tx_power <= cfg.power_max
        assert 0 < device.bandwidth <= cfg.bandwidth_max


def test_topology_assigns_nearest_anchor():
    cfg = make_config(n_devices=60, n_aggregators=4, dataset_rows=4)
    devices, aggregators = build_topology(cfg)
    anchors = np.array([a.anchor for a in aggregators])
    for device in devices:
        assert device.cluster_id == nearest_anchor(device.position, anchors)


def test_topology_single_device():
    devices, aggregators = build_topology(make_config(n_devices=1, n_aggregators=1, dataset_rows=4))
    assert len(devices) == 1
    assert devices[0].cluster_id == 0
    assert aggregators[0].member_ids == [0]


def test_topology_is_deterministic():
    cfg = make_config(n_devices=100, n_aggregators=5, seed=7, dataset_rows=4)
    first, _ = build_topology(cfg)
    second, _ = build_topology(cfg)
    for a, b in zip(first, second):
        assert a.cluster_id == b.cluster_id
        np.testing.assert_array_equal(a.position, b.position)
        np.testing.assert_array_equal(a.dataset.features, b.dataset.features)


def test_topology_mobile_mix():
    devices, _ = build_topology(make_config(n_devices=40, mobile_fraction=0.0, dataset_rows=4))
    assert not any(d.mobile for d in devices)
    devices, _ = build_topology(make_config(n_devices=40, mobile_fraction=1.0, dataset_rows=4))
    assert all(d.mobile and 1.0 <= d.speed <= 15.0 for d in devices)


def test_degenerate_traffic_mix_is_all_embb():
    devices, _ = build_topology(make_config(n_devices=30, traffic_mix="1, 0, 0", dataset_rows=4))
    assert {d.traffic for d in devices} == {TrafficKind.EMBB}


def test_synth_dataset_labels_match_oracle(make_device):
    cfg = make_config()
    dataset = synth_dataset(cfg, make_device(snr_offset_db=3.0), stream(cfg.seed, "dataset", 0), 64)
    assert dataset.size == 64
    for features, label in zip(dataset.features, dataset.labels):
        np.testing.assert_array_equal(label, oracle_label(features, cfg.power_max, cfg.bandwidth_max))
    assert np.all(dataset.features[:, 0] >= -5.0 + 3.0)
    assert np.all(dataset.features[:, 0] <= 30.0 + 3.0)
    assert np.all(dataset.features[:, 3] == 0.0)


def test_synth_dataset_single_row_and_determinism(make_device):
    cfg = make_config()
    one = synth_dataset(cfg, make_device(), stream(cfg.seed, "dataset", 3), 1)
    again = synth_dataset(cfg, make_device(), stream(cfg.seed, "dataset", 3), 1)
    assert one.size == 1
    np.testing.assert_array_equal(one.features, again.features)


def test_synth_dataset_rejects_empty(make_device):
    cfg = make_config()
    with pytest.raises(ValueError):
        synth_dataset(cfg, make_device(), stream(cfg.seed, "dataset", 0), 0)


def test_datasets_differ_across_devices():
    devices, _ = build_topology(make_config(n_devices=4, n_aggregators=1, dataset_rows=16))
    assert not np.array_equal(devices[0].dataset.features, devices[1].dataset.features)


def test_validation_set_reserved_stream():
    cfg = make_config(validation_rows=100)
    first = validation_set(cfg)
    assert first.size == 100
    np.testing.assert_array_equal(first.features, validation_set(cfg).features)
    assert not np.array_equal(first.features, validation_set(cfg.replace(seed=cfg.seed + 1)).features)
