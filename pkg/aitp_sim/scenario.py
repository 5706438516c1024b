"""Scenario configuration, topology construction and synthetic datasets.

A scenario file is plain ``key = value`` text with ``#`` comments. Every key
maps onto a field of :class:`ScenarioConfig`; anything else is a typo and is
rejected while parsing rather than silently ignored.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import StrEnum
import logging
import math
from pathlib import Path
from typing import Any, Final, Literal

import numpy as np
import numpy.typing as npt
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from pydantic import ValidationError as PydanticValidationError

from .adaptation import oracle_label
from .channel import ChannelModel
from .errors import ParseError, ValidationError
from .rng import stream

logger = logging.getLogger(__name__)

SNR_RANGE_DB: Final[tuple[float, float]] = (-5.0, 30.0)
INTERFERENCE_RANGE_DBM: Final[tuple[float, float]] = (-110.0, -80.0)

FailureKind = Literal["device", "aggregator"]


class Mode(StrEnum):
    AITP = "AITP"
    CAIP = "CAIP"
    NAP = "NAP"


class TrafficKind(StrEnum):
    EMBB = "eMBB"
    URLLC = "URLLC"
    MMTC = "mMTC"


TRAFFIC_ORDER: Final[tuple[TrafficKind, ...]] = (TrafficKind.EMBB, TrafficKind.URLLC, TrafficKind.MMTC)


@dataclass(frozen=True)
class FailureEvent:
    """One failure-plan entry: ``kind`` target ``target`` goes down in ``round``."""

    round: int
    kind: FailureKind
    target: int

    @classmethod
    def parse(cls, text: str) -> "FailureEvent":
        """Parse ``round:kind:id``, e.g. ``10:aggregator:2``."""
        parts = [part.strip() for part in text.split(":")]
        if len(parts) != 3:
            raise ValueError(f"failure entry {text!r} is not round:kind:id")
        round_text, kind, target_text = parts
        kind = kind.lower()
        if kind not in ("device", "aggregator"):
            raise ValueError(f"failure kind must be device or aggregator, got {kind!r}")
        try:
            round_index, target = int(round_text), int(target_text)
        except ValueError as exc:
            raise ValueError(f"failure entry {text!r} has a non-integer round or id") from exc
        if round_index < 1 or target < 0:
            raise ValueError(f"failure entry {text!r} needs round >= 1 and id >= 0")
        return cls(round=round_index, kind=kind, target=target)  # type: ignore[arg-type]

    def to_text(self) -> str:
        return f"{self.round}:{self.kind}:{self.target}"


def _split_floats(value: Any) -> Any:
    if isinstance(value, str):
        return tuple(float(part) for part in value.split(",") if part.strip())
    return value


class ScenarioConfig(BaseModel):
    """Full experiment description. Instances are immutable; use :meth:`replace`."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    area_m: float = Field(1000.0, gt=0)
    n_devices: int = Field(50, ge=1)
    n_aggregators: int = Field(5, ge=1)
    mode: Mode = Mode.AITP
    rounds: int = Field(20, ge=0)
    local_epochs: int = Field(1, ge=1)
    learning_rate: float = Field(0.05, gt=0)
    batch_size: int = Field(16, ge=1)
    dp_epsilon_round: float = Field(0.5, gt=0)
    dp_epsilon_max: float = Field(50.0, gt=0)
    dp_clip: float = Field(1.0, gt=0)
    objective_weights: tuple[float, float, float] = (0.5, 0.3, 0.2)
    bandwidth_max: float = Field(1e8, gt=0)
    power_max: float = Field(0.2, gt=0)
    accuracy_target: float = Field(0.5, ge=0, le=1)
    channel_model: ChannelModel = ChannelModel.MMWAVE_28GHZ
    traffic_mix: tuple[float, float, float] = (0.6, 0.2, 0.2)
    failure_plan: tuple[FailureEvent, ...] = ()
    seed: int = Field(42, ge=0, lt=2**64)

    dataset_rows: int = Field(256, ge=1)
    validation_rows: int = Field(512, ge=1)
    mobile_fraction: float = Field(0.5, ge=0, le=1)
    snr_offset_db: float = Field(5.0, ge=0)
    speed_min: float = Field(1.0, gt=0)
    speed_max: float = Field(15.0, gt=0)
    codebook_size: int = Field(16, ge=1)
    round_duration_s: float = Field(1.0, gt=0)
    dp_enabled: bool = True
    participation_fraction: float = Field(1.0, gt=0, le=1)
    strict_paper_combine: bool = False
    c_train: float = Field(1e-8, gt=0)
    c_agg: float = Field(1e-9, gt=0)
    c_comp: float = Field(1e-7, gt=0)
    c_central: float = Field(1e-6, gt=0)
    c_central_j: float = Field(1e-6, gt=0)
    control_rate_bps: float = Field(1e6, gt=0)
    control_power_w: float = Field(0.05, gt=0)
    processing_delay_s: float = Field(1e-4, ge=0)
    latency_cap_s: float = Field(1.0, gt=0)
    rho_max: float = Field(0.999, gt=0, lt=1)
    wall_clock_limit_s: float = Field(0.0, ge=0)

    @field_validator("mode", "channel_model", mode="before")
    @classmethod
    def _upper_enum(cls, value: Any) -> Any:
        return value.strip().upper() if isinstance(value, str) else value

    @field_validator("objective_weights", "traffic_mix", mode="before")
    @classmethod
    def _parse_triple(cls, value: Any) -> Any:
        return _split_floats(value)

    @field_validator("failure_plan", mode="before")
    @classmethod
    def _parse_failures(cls, value: Any) -> Any:
        if isinstance(value, str):
            return tuple(FailureEvent.parse(entry) for entry in value.split(";") if entry.strip())
        return tuple(FailureEvent.parse(item) if isinstance(item, str) else item for item in value)

    @field_validator("objective_weights")
    @classmethod
    def _check_weights(cls, value: tuple[float, float, float]) -> tuple[float, float, float]:
        if any(w < 0 for w in value):
            raise ValueError("weights must be >= 0")
        if sum(value) <= 0:
            raise ValueError("alpha + beta + gamma must be > 0")
        return value

    @field_validator("traffic_mix")
    @classmethod
    def _check_mix(cls, value: tuple[float, float, float]) -> tuple[float, float, float]:
        if any(f < 0 for f in value):
            raise ValueError("fractions must be >= 0")
        if abs(math.fsum(value) - 1.0) > 1e-9:
            raise ValueError(f"fractions must sum to 1, got {math.fsum(value)!r}")
        return value

    @model_validator(mode="after")
    def _check_cross_fields(self) -> "ScenarioConfig":
        if self.n_aggregators > self.n_devices:
            raise ValueError("n_aggregators: must not exceed n_devices")
        if self.dp_epsilon_round > self.dp_epsilon_max:
            raise ValueError("dp_epsilon_round: must not exceed dp_epsilon_max")
        if self.speed_min > self.speed_max:
            raise ValueError("speed_min: must not exceed speed_max")
        return self

    def replace(self, **changes: Any) -> "ScenarioConfig":
        """Return a re-validated copy with ``changes`` applied."""
        return make_config(**{**self.model_dump(), **changes})

    def to_text(self) -> str:
        """Render the config in the scenario file format accepted by :func:`load_scenario`."""
        lines = []
        for key, value in self.model_dump().items():
            if key == "failure_plan":
                text = "; ".join(FailureEvent(**event).to_text() for event in value)
            elif isinstance(value, tuple):
                text = ", ".join(repr(v) for v in value)
            elif isinstance(value, StrEnum):
                text = value.value
            else:
                text = str(value).lower() if isinstance(value, bool) else repr(value)
            lines.append(f"{key} = {text}")
        return "\n".join(lines) + "\n"


SCENARIO_KEYS: Final[tuple[str, ...]] = tuple(ScenarioConfig.model_fields)


def make_config(**values: Any) -> ScenarioConfig:
    """Build a :class:`ScenarioConfig`, converting pydantic failures into :class:`ValidationError`."""
    try:
        return ScenarioConfig(**values)
    except PydanticValidationError as exc:
        first = exc.errors()[0]
        message = str(first["msg"]).removeprefix("Value error, ")
        if first["loc"]:
            field_name = str(first["loc"][0])
        else:
            field_name, _, message = message.partition(": ")
        raise ValidationError(field_name, message) from exc


def load_scenario(path: str | Path) -> ScenarioConfig:
    """Parse and validate a scenario file.

    Args:
        path: Scenario file in ``key = value`` format.

    Returns:
        Validated configuration; keys absent from the file keep their defaults.

    Raises:
        ParseError: If the file is unreadable or a line is malformed, unknown or repeated.
        ValidationError: If a value violates a config invariant.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read scenario {path}: {exc}") from exc

    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, _, value = line.partition("=")
        key = key.strip().lower()
        if key not in SCENARIO_KEYS:
            raise ParseError(f"{path}:{lineno}: unknown key {key!r}")
        if key in values:
            raise ParseError(f"{path}:{lineno}: duplicate key {key!r}")
        values[key] = value.strip()

    cfg = make_config(**values)
    logger.debug(f"Loaded scenario {path} ({len(values)} keys set)")
    return cfg


@dataclass(frozen=True)
class LocalDataset:
    """Feature rows ``(snr_db, interference_dbm, load, speed_mps)`` with oracle labels."""

    features: npt.NDArray[np.float64]
    labels: npt.NDArray[np.float64]

    def __post_init__(self) -> None:
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise ValueError("a dataset needs at least one row")
        if self.labels.shape[0] != self.features.shape[0]:
            raise ValueError("features and labels must have the same row count")

    @property
    def size(self) -> int:
        return int(self.features.shape[0])


@dataclass
class DeviceState:
    id: int
    cluster_id: int
    position: npt.NDArray[np.float64]
    waypoint: npt.NDArray[np.float64]
    speed: float
    traffic: TrafficKind
    snr_offset_db: float
    dataset: LocalDataset | None = None
    local_model: npt.NDArray[np.float64] | None = None
    tx_power: float = 0.0
    bandwidth: float = 0.0
    energy_spent: float = 0.0
    epsilon_spent: float = 0.0
    alive: bool = True
    excluded: bool = False

    @property
    def mobile(self) -> bool:
        return self.speed > 0


@dataclass
class AggregatorState:
    id: int
    anchor: npt.NDArray[np.float64]
    member_ids: list[int] = field(default_factory=list)
    alive: bool = True


def anchor_positions(area_m: float, n_aggregators: int) -> npt.NDArray[np.float64]:
    """Centers of a ``rows x cols`` grid of cells, filled row by row, one per aggregator."""
    cols = math.ceil(math.sqrt(n_aggregators))
    rows = math.ceil(n_aggregators / cols)
    k = np.arange(n_aggregators)
    x = ((k % cols) + 0.5) * area_m / cols
    y = ((k // cols) + 0.5) * area_m / rows
    return np.column_stack([x, y])


def nearest_anchor(
    position: npt.NDArray[np.float64], anchors: npt.NDArray[np.float64], candidates: list[int] | None = None
) -> int:
    """Index of the closest anchor; ties go to the lowest index."""
    ids = list(range(len(anchors))) if candidates is None else sorted(candidates)
    if not ids:
        raise ValueError("no candidate anchors")
    dist = np.linalg.norm(anchors[ids] - position, axis=1)
    return ids[int(np.argmin(dist))]


def build_topology(
    cfg: ScenarioConfig, rng: np.random.Generator | None = None
) -> tuple[list[DeviceState], list[AggregatorState]]:
    """Place devices uniformly and assign each to its nearest aggregator anchor.

    Every array is drawn unconditionally so that the draw sequence (and hence
    the topology) depends only on the seed and the counts, not on fractions.
    Datasets come from per-device ``dataset`` streams.
    """
    rng = rng if rng is not None else stream(cfg.seed, "topology")
    n = cfg.n_devices
    positions = rng.uniform(0.0, cfg.area_m, size=(n, 2))
    mobile = rng.random(n) < cfg.mobile_fraction
    speeds = rng.uniform(cfg.speed_min, cfg.speed_max, size=n) * mobile
    waypoints = rng.uniform(0.0, cfg.area_m, size=(n, 2))
    class_u = rng.random(n)
    offsets = rng.uniform(-cfg.snr_offset_db, cfg.snr_offset_db, size=n)

    anchors = anchor_positions(cfg.area_m, cfg.n_aggregators)
    dist = np.linalg.norm(positions[:, None, :] - anchors[None, :, :], axis=2)
    clusters = np.argmin(dist, axis=1)
    class_idx = np.minimum(np.searchsorted(np.cumsum(cfg.traffic_mix), class_u, side="right"), 2)

    aggregators = [AggregatorState(id=k, anchor=anchors[k].copy()) for k in range(cfg.n_aggregators)]
    devices: list[DeviceState] = []
    for i in range(n):
        device = DeviceState(
            id=i,
            cluster_id=int(clusters[i]),
            position=positions[i].copy(),
            waypoint=waypoints[i].copy(),
            speed=float(speeds[i]),
            traffic=TRAFFIC_ORDER[int(class_idx[i])],
            snr_offset_db=float(offsets[i]),
            tx_power=cfg.power_max,
            bandwidth=cfg.bandwidth_max,
        )
        device.dataset = synth_dataset(cfg, device, stream(cfg.seed, "dataset", i), cfg.dataset_rows)
        devices.append(device)
        aggregators[device.cluster_id].member_ids.append(i)

    logger.debug(f"Built topology: {n} devices over {cfg.n_aggregators} clusters")
    return devices, aggregators


def _draw_features(
    cfg: ScenarioConfig, rng: np.random.Generator, n_rows: int, offset_db: float, mobile: npt.NDArray[np.bool_]
) -> npt.NDArray[np.float64]:
    snr = rng.uniform(*SNR_RANGE_DB, size=n_rows) + offset_db
    interference = rng.uniform(*INTERFERENCE_RANGE_DBM, size=n_rows)
    load = rng.uniform(0.0, 1.0, size=n_rows)
    speed = rng.uniform(cfg.speed_min, cfg.speed_max, size=n_rows) * mobile
    return np.column_stack([snr, interference, load, speed])


def _label_rows(cfg: ScenarioConfig, features: npt.NDArray[np.float64]) -> npt.NDArray[np.float64]:
    return np.array([oracle_label(row, cfg.power_max, cfg.bandwidth_max) for row in features], dtype=np.float64)


def synth_dataset(cfg: ScenarioConfig, device: DeviceState, rng: np.random.Generator, n_rows: int) -> LocalDataset:
    """Draw ``n_rows`` feature rows for ``device`` and label them with the oracles.

    Raises:
        ValueError: If ``n_rows`` < 1.
    """
    if n_rows < 1:
        raise ValueError(f"n_rows must be >= 1, got {n_rows}")
    mobile = np.full(n_rows, device.mobile)
    features = _draw_features(cfg, rng, n_rows, device.snr_offset_db, mobile)
    return LocalDataset(features=features, labels=_label_rows(cfg, features))


def validation_set(cfg: ScenarioConfig) -> LocalDataset:
    """Held-out rows drawn like device datasets from the reserved ``validation`` stream, without an offset."""
    rng = stream(cfg.seed, "validation")
    mobile = rng.random(cfg.validation_rows) < cfg.mobile_fraction
    features = _draw_features(cfg, rng, cfg.validation_rows, 0.0, mobile)
    return LocalDataset(features=features, labels=_label_rows(cfg, features))
