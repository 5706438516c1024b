import csv
import itertools
import json
from types import SimpleNamespace

import pytest
from click.testing import CliRunner

from aitp_sim import engine
from aitp_sim.cli import EXIT_ABORTED, EXIT_INVALID, EXIT_OK, EXIT_RUNTIME, cli
from aitp_sim.fl.model import CHECKPOINT_MAGIC, MODEL_DIM, load_checkpoint

TINY = """
n_devices = 6
n_aggregators = 2
rounds = 2
dataset_rows = 16
validation_rows = 32
seed = 5
"""


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def tiny_scenario(write_scenario):
    return str(write_scenario(TINY, "tiny.conf"))


def _summary_modes(path):
    with open(path / "summary.csv", newline="", encoding="utf-8") as fh:
        return [row["mode"] for row in csv.DictReader(fh)]


def test_run_writes_outputs(runner, tiny_scenario, tmp_path):
    out = tmp_path / "results"
    result = runner.invoke(cli, ["run", "--scenario", tiny_scenario, "--mode", "all", "--out", str(out)])
    assert result.exit_code == EXIT_OK, result.output
    assert {p.name for p in out.iterdir()} == {"metrics.csv", "summary.csv", "manifest.json"}
    assert _summary_modes(out) == ["AITP", "CAIP", "NAP"]
    assert "Simulation complete" in result.output


def test_run_overrides(runner, tiny_scenario, tmp_path):
    out = tmp_path / "results"
    args = ["run", "--scenario", tiny_scenario, "--mode", "nap", "--devices", "4", "--rounds", "1", "--out", str(out)]
    result = runner.invoke(cli, args)
    assert result.exit_code == EXIT_OK, result.output
    with open(out / "metrics.csv", newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 1
    assert rows[0]["n_devices"] == "4"
    assert rows[0]["mode"] == "NAP"


def test_run_uses_out_dir_from_environment(runner, tiny_scenario, tmp_path):
    out = tmp_path / "from-env"
    result = runner.invoke(cli, ["run", "--scenario", tiny_scenario], env={"AITP_OUT_DIR": str(out)})
    assert result.exit_code == EXIT_OK, result.output
    assert _summary_modes(out) == ["AITP"]


def test_run_missing_scenario(runner, tmp_path):
    result = runner.invoke(cli, ["run", "--scenario", str(tmp_path / "nope.conf"), "--out", str(tmp_path)])
    assert result.exit_code == EXIT_INVALID
    assert "Invalid scenario" in result.output


def test_run_invalid_scenario_value(runner, write_scenario, tmp_path):
    path = write_scenario("n_devices = 2\nn_aggregators = 3\n")
    result = runner.invoke(cli, ["run", "--scenario", str(path), "--out", str(tmp_path)])
    assert result.exit_code == EXIT_INVALID
    assert "n_aggregators" in result.output


@pytest.mark.parametrize(
    "args",
    [
        ["run", "--mode", "bogus"],
        ["run", "--failure", "10:router:2"],
        ["run", "--workers", "0"],
        ["sweep", "--devices", "10,x"],
        ["privacy-sweep", "--epsilons", "0.5,-1"],
        ["no-such-command"],
    ],
)
def test_bad_usage_exits_invalid(runner, args):
    assert runner.invoke(cli, args).exit_code == EXIT_INVALID


def test_bad_wall_clock_environment(runner, tiny_scenario, tmp_path):
    result = runner.invoke(
        cli, ["run", "--scenario", tiny_scenario, "--out", str(tmp_path)], env={"AITP_WALL_CLOCK_LIMIT": "soon"}
    )
    assert result.exit_code == EXIT_INVALID


def test_unknown_failure_target_is_runtime_error(runner, tiny_scenario, tmp_path):
    args = ["run", "--scenario", tiny_scenario, "--failure", "1:device:99", "--out", str(tmp_path)]
    result = runner.invoke(cli, args)
    assert result.exit_code == EXIT_RUNTIME
    assert "no device 99" in result.output


def test_run_writes_checkpoint(runner, tiny_scenario, tmp_path):
    target = tmp_path / "model.bin"
    args = ["run", "--scenario", tiny_scenario, "--mode", "all", "--out", str(tmp_path), "--checkpoint", str(target)]
    result = runner.invoke(cli, args)
    assert result.exit_code == EXIT_OK, result.output
    assert target.read_bytes()[:8] == CHECKPOINT_MAGIC
    assert load_checkpoint(target).shape == (MODEL_DIM,)


def test_run_with_mask_audit_and_failure(runner, tiny_scenario, tmp_path):
    args = ["run", "--scenario", tiny_scenario, "--audit-masks", "--failure", "1:aggregator:1", "--out", str(tmp_path)]
    result = runner.invoke(cli, args)
    assert result.exit_code == EXIT_OK, result.output
    with open(tmp_path / "metrics.csv", newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["mask_audit_failures"] for r in rows] == ["0", "0"]
    assert rows[-1]["live_aggregators"] == "1"


def test_wall_clock_abort_exit_code(runner, tiny_scenario, tmp_path, monkeypatch):
    ticks = itertools.chain([0.0, 0.0], itertools.repeat(100.0))
    monkeypatch.setattr(engine, "time", SimpleNamespace(monotonic=lambda: next(ticks)))
    args = ["run", "--scenario", tiny_scenario, "--audit-masks", "--out", str(tmp_path)]
    result = runner.invoke(cli, args, env={"AITP_WALL_CLOCK_LIMIT": "5"})
    assert result.exit_code == EXIT_ABORTED
    assert "partial results" in result.output


def test_sweep(runner, tiny_scenario, tmp_path):
    args = ["sweep", "--scenario", tiny_scenario, "--devices", "4,6", "--rounds", "1", "--out", str(tmp_path)]
    result = runner.invoke(cli, args)
    assert result.exit_code == EXIT_OK, result.output
    assert _summary_modes(tmp_path) == ["AITP", "CAIP", "NAP"] * 2


def test_privacy_sweep(runner, tiny_scenario, tmp_path):
    args = ["privacy-sweep", "--scenario", tiny_scenario, "--epsilons", "2.0,0.5", "--out", str(tmp_path)]
    result = runner.invoke(cli, args)
    assert result.exit_code == EXIT_OK, result.output
    with open(tmp_path / "summary.csv", newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    assert [float(r["dp_epsilon_round"]) for r in rows] == [2.0, 0.5]
    assert all(r["dp_enabled"] == "True" for r in rows)


def test_mcs_table_to_stdout(runner):
    result = runner.invoke(cli, ["mcs-table"])
    assert result.exit_code == EXIT_OK
    lines = result.output.splitlines()
    assert lines[0] == "index,modulation_order,code_rate,min_snr_db"
    assert len(lines) == 9


def test_mcs_table_to_file(runner, tmp_path):
    target = tmp_path / "mcs.csv"
    result = runner.invoke(cli, ["mcs-table", "--out", str(target)])
    assert result.exit_code == EXIT_OK
    assert target.read_text(encoding="utf-8").startswith("index,")


def test_run_strict_paper_combine_flag(runner, tiny_scenario, tmp_path):
    args = ["run", "--scenario", tiny_scenario, "--strict-paper-combine", "--failure", "1:aggregator:1"]
    result = runner.invoke(cli, [*args, "--out", str(tmp_path)])
    assert result.exit_code == EXIT_OK, result.output
    manifest = json.loads((tmp_path / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["runs"][0]["config"]["strict_paper_combine"] is True
