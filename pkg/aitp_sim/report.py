"""Simulation reports and their CSV/JSON output files."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
import json
import logging
import math
from pathlib import Path
from typing import Any, Final, Sequence

import numpy as np
import numpy.typing as npt

from . import __version__
from .errors import OutputError
from .fl.model import FEATURE_NAMES, LABEL_NAMES, MODEL_DIM
from .metrics import PRIVACY_LOSS_DEFINITION, ROBUSTNESS_DEFINITION, RoundMetrics
from .scenario import Mode, ScenarioConfig, make_config

logger = logging.getLogger(__name__)

FORMAT_VERSION: Final = "1"
SPEC_VERSION: Final = "1.0"

METRIC_COLUMNS: Final[tuple[str, ...]] = (
    "mode",
    "n_devices",
    "seed",
    "round",
    "live_devices",
    "live_aggregators",
    "participants",
    "excluded",
    "t_network",
    "mean_latency",
    "total_energy",
    "energy_efficiency",
    "privacy_loss",
    "accuracy",
    "objective",
    "mcs_violations",
    "queue_overloads",
    "budget_violations",
    "dropouts",
    "mask_audit_failures",
    "learning_skipped",
    "messages_per_aggregator",
)

SUMMARY_COLUMNS: Final[tuple[str, ...]] = (
    "mode",
    "n_devices",
    "seed",
    "channel_model",
    "dp_enabled",
    "dp_epsilon_round",
    "rounds_run",
    "mean_latency_ms",
    "throughput_gbps",
    "energy_efficiency",
    "privacy_loss",
    "robustness",
    "initial_accuracy",
    "final_accuracy",
    "mean_objective",
    "mcs_violations",
    "queue_overloads",
    "budget_violations",
    "dropouts",
    "privacy_constraint_ok",
    "bandwidth_constraint_ok",
    "power_constraint_ok",
    "convergence_constraint_ok",
    "aborted",
)


def summarize(
    cfg: ScenarioConfig,
    rounds: Sequence[RoundMetrics],
    *,
    initial_accuracy: float,
    robustness: float,
    aborted: bool,
) -> dict[str, Any]:
    """Table-style summary of a run, computed only from ``rounds`` and the config."""
    n = len(rounds)
    energy = math.fsum(r.total_energy for r in rounds)
    bits = math.fsum(r.t_network * r.window for r in rounds)
    final_accuracy = rounds[-1].accuracy if rounds else initial_accuracy
    return {
        "mode": cfg.mode.value,
        "n_devices": cfg.n_devices,
        "seed": cfg.seed,
        "channel_model": cfg.channel_model.value,
        "dp_enabled": cfg.dp_enabled,
        "dp_epsilon_round": cfg.dp_epsilon_round,
        "rounds_run": n,
        "mean_latency_ms": math.fsum(r.mean_latency for r in rounds) / n * 1e3 if n else 0.0,
        "throughput_gbps": math.fsum(r.t_network for r in rounds) / n / 1e9 if n else 0.0,
        "energy_efficiency": bits / energy if energy > 0 else 0.0,
        "privacy_loss": rounds[-1].privacy_loss if rounds else 0.0,
        "robustness": robustness,
        "initial_accuracy": initial_accuracy,
        "final_accuracy": final_accuracy,
        "mean_objective": math.fsum(r.objective for r in rounds) / n if n else 0.0,
        "mcs_violations": sum(r.mcs_violations for r in rounds),
        "queue_overloads": sum(r.queue_overloads for r in rounds),
        "budget_violations": sum(r.budget_violations for r in rounds),
        "dropouts": sum(r.dropouts for r in rounds),
        "privacy_constraint_ok": all(e <= cfg.dp_epsilon_max for r in rounds for e in r.epsilon_spent),
        "bandwidth_constraint_ok": all(0 < b <= cfg.bandwidth_max for r in rounds for b in r.bandwidth),
        "power_constraint_ok": all(0 < p <= cfg.power_max for r in rounds for p in r.tx_power),
        "convergence_constraint_ok": cfg.mode is Mode.NAP or final_accuracy >= cfg.accuracy_target,
        "aborted": aborted,
    }


@dataclass
class SimulationReport:
    """Result of one :func:`aitp_sim.engine.run_simulation` call."""

    config: ScenarioConfig
    rounds: list[RoundMetrics] = field(default_factory=list)
    summary: dict[str, Any] = field(default_factory=dict)
    wall_clock_s: float = 0.0
    aborted: bool = False
    final_model: npt.NDArray[np.float64] | None = field(default=None, repr=False, compare=False)

    @property
    def seed(self) -> int:
        return self.config.seed

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "SimulationReport":
        return cls(
            config=make_config(**data["config"]),
            rounds=[RoundMetrics.from_dict(r) for r in data.get("rounds", [])],
            summary=dict(data.get("summary", {})),
            wall_clock_s=data.get("wall_clock_s", 0.0),
            aborted=data.get("aborted", False),
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "config": self.config.model_dump(mode="json"),
            "seed": self.seed,
            "rounds": [r.to_dict() for r in self.rounds],
            "summary": self.summary,
            "wall_clock_s": self.wall_clock_s,
            "aborted": self.aborted,
        }


def metric_row(report: SimulationReport, metrics: RoundMetrics) -> dict[str, Any]:
    row = {col: getattr(metrics, col) for col in METRIC_COLUMNS if hasattr(metrics, col)}
    row["mode"] = metrics.mode.value
    row["n_devices"] = report.config.n_devices
    row["seed"] = report.seed
    row["messages_per_aggregator"] = "|".join(str(c) for c in metrics.messages_per_aggregator)
    return row


def _write_csv(path: Path, columns: Sequence[str], rows: Sequence[dict[str, Any]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


def emit_outputs(reports: SimulationReport | Sequence[SimulationReport], out_dir: str | Path) -> list[Path]:
    """Write ``metrics.csv``, ``summary.csv`` and ``manifest.json`` into ``out_dir``.

    Floats are written with ``repr``, which round-trips exactly.

    Returns:
        Paths of the files written.

    Raises:
        OutputError: If the directory or a file cannot be written.
    """
    if isinstance(reports, SimulationReport):
        reports = [reports]
    out = Path(out_dir)
    manifest = {
        "format_version": FORMAT_VERSION,
        "spec_version": SPEC_VERSION,
        "package_version": __version__,
        "seeds": sorted({r.seed for r in reports}),
        "metrics_columns": list(METRIC_COLUMNS),
        "summary_columns": list(SUMMARY_COLUMNS),
        "model": {"dimension": MODEL_DIM, "features": list(FEATURE_NAMES), "labels": list(LABEL_NAMES)},
        "definitions": {"privacy_loss": PRIVACY_LOSS_DEFINITION, "robustness": ROBUSTNESS_DEFINITION},
        "runs": [
            {"config": r.config.model_dump(mode="json"), "wall_clock_s": r.wall_clock_s, "aborted": r.aborted}
            for r in reports
        ],
    }
    paths = [out / "metrics.csv", out / "summary.csv", out / "manifest.json"]
    try:
        out.mkdir(parents=True, exist_ok=True)
        _write_csv(paths[0], METRIC_COLUMNS, [metric_row(r, m) for r in reports for m in r.rounds])
        _write_csv(paths[1], SUMMARY_COLUMNS, [r.summary for r in reports if r.summary])
        paths[2].write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    except OSError as exc:
        raise OutputError(f"cannot write results to {out}: {exc}") from exc
    logger.info(f"Wrote {len(reports)} run(s) to {out}")
    return paths
