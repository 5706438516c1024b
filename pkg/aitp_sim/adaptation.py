"""Transmission-parameter selection: oracles, the learned AITP policy, NAP and CAIP costs."""

from __future__ import annotations

from dataclasses import dataclass
import math
from typing import TYPE_CHECKING, Final, Sequence

import numpy as np
import numpy.typing as npt

from .channel import MCS_TABLE, ChannelObservation, McsEntry, reference_observation
from .fl.model import ModelParams, mcs_index_from_output, predict

if TYPE_CHECKING:
    from .scenario import DeviceState, ScenarioConfig

BEAM_MAX_GAIN: Final = 10.0
BEAM_GAIN_FLOOR: Final = 0.01
OMNI_GAIN: Final = 1.0

POWER_MARGIN_DB: Final = 1.0
MCS_VIOLATION_TOLERANCE_DB: Final = 3.0
MIN_POWER_FRACTION: Final = 0.01

NAP_MCS_INDEX: Final = 3
NAP_POWER_FRACTION: Final = 0.5

FLOAT_BITS: Final = 64
# Dataset rows carry 4 features and 2 labels.
FLOATS_PER_ROW: Final = 6


@dataclass(frozen=True)
class TxParams:
    mcs: McsEntry
    power: float
    beam_index: int
    beam_gain: float


def oracle_mcs(obs: ChannelObservation, table: Sequence[McsEntry] = MCS_TABLE) -> McsEntry:
    """Highest entry whose threshold the probe SNR meets; entry 0 if none does."""
    return supported_mcs(obs.snr_db, table)


def supported_mcs(snr_db: float, table: Sequence[McsEntry] = MCS_TABLE) -> McsEntry:
    if not table:
        raise ValueError("MCS table is empty")
    best = table[0]
    for entry in table:
        if entry.min_snr_db <= snr_db:
            best = entry
    return best


def oracle_power(obs: ChannelObservation, p_max: float, target_mcs: McsEntry) -> float:
    """Minimum power that lifts the SINR to the target threshold plus a 1 dB margin, capped at ``p_max``."""
    if p_max <= 0:
        raise ValueError(f"p_max must be > 0, got {p_max}")
    required = obs.noise_plus_interference / obs.gain * 10.0 ** ((target_mcs.min_snr_db + POWER_MARGIN_DB) / 10.0)
    return min(required, p_max)


def oracle_label(features: npt.NDArray[np.float64], p_max: float, bandwidth: float) -> npt.NDArray[np.float64]:
    """Training label ``(mcs_index / 7, power / p_max)`` for one feature row."""
    obs = reference_observation(float(features[0]), float(features[1]), p_max, bandwidth)
    mcs = oracle_mcs(obs)
    power = oracle_power(obs, p_max, mcs)
    return np.array([mcs.index / (len(MCS_TABLE) - 1), power / p_max])


def effective_mcs(selected: McsEntry, achieved_snr_db: float) -> McsEntry:
    """Entry the link actually runs: the selection, or a lower one the achieved SINR supports."""
    supported = supported_mcs(achieved_snr_db)
    return selected if selected.index <= supported.index else supported


def is_mcs_violation(selected: McsEntry, achieved_snr_db: float) -> bool:
    return selected.min_snr_db > achieved_snr_db + MCS_VIOLATION_TOLERANCE_DB


def beam_centers(codebook_size: int) -> npt.NDArray[np.float64]:
    b = np.arange(codebook_size)
    return -math.pi + (b + 0.5) * 2.0 * math.pi / codebook_size


def angular_distance(a: npt.ArrayLike, b: npt.ArrayLike) -> npt.NDArray[np.float64]:
    """Absolute angle between ``a`` and ``b`` wrapped into [0, pi]."""
    return np.abs((np.asarray(a) - np.asarray(b) + math.pi) % (2.0 * math.pi) - math.pi)


def beam_gain(offset_rad: float, codebook_size: int) -> float:
    return BEAM_MAX_GAIN * max(math.cos(offset_rad * codebook_size / 2.0) ** 2, BEAM_GAIN_FLOOR)


def select_beam(aoa_rad: float, codebook_size: int) -> tuple[int, float]:
    """Codebook beam closest to ``aoa_rad`` (ties to the lower index) and its gain.

    Raises:
        ValueError: If ``codebook_size`` < 1.
    """
    if codebook_size < 1:
        raise ValueError(f"codebook size must be >= 1, got {codebook_size}")
    offsets = angular_distance(aoa_rad, beam_centers(codebook_size))
    index = int(np.argmin(offsets))
    return index, beam_gain(float(offsets[index]), codebook_size)


def steer_beam(aoa_rad: float, codebook_size: int) -> tuple[int, float]:
    """Beam actually used by an adaptive link: the best codebook beam, or omni when it would lose gain."""
    index, gain = select_beam(aoa_rad, codebook_size)
    return index, max(gain, OMNI_GAIN)


def model_features(obs: ChannelObservation, load: float, speed: float) -> npt.NDArray[np.float64]:
    """Feature row ``(probe snr_db, interference-plus-noise dBm, load, speed)``."""
    return np.array([obs.snr_db, 10.0 * math.log10(obs.noise_plus_interference) + 30.0, load, speed])


def decode_outputs(outputs: npt.NDArray[np.float64], p_max: float) -> tuple[McsEntry, float]:
    """Map raw model outputs to a table entry and a power in ``[0.01, 1]·p_max``."""
    index = int(mcs_index_from_output(outputs[0]))
    fraction = float(np.clip(outputs[1], MIN_POWER_FRACTION, 1.0))
    return MCS_TABLE[index], fraction * p_max


def select_tx_params_aitp(
    w: ModelParams,
    obs: ChannelObservation,
    *,
    load: float,
    speed: float,
    p_max: float,
    beam: tuple[int, float],
) -> TxParams:
    """Learned selection: run the device's features through the global model.

    ``obs`` must already include the gain of ``beam``.
    """
    mcs, power = decode_outputs(predict(w, model_features(obs, load, speed))[0], p_max)
    return TxParams(mcs=mcs, power=power, beam_index=beam[0], beam_gain=beam[1])


def select_tx_params_oracle(obs: ChannelObservation, *, p_max: float, beam: tuple[int, float]) -> TxParams:
    """Oracle selection applied by the CAIP central server."""
    mcs = oracle_mcs(obs)
    return TxParams(mcs=mcs, power=oracle_power(obs, p_max, mcs), beam_index=beam[0], beam_gain=beam[1])


def nap_params(cfg: ScenarioConfig) -> TxParams:
    """Fixed NAP parameters: middle MCS, half power, no beamforming."""
    return TxParams(
        mcs=MCS_TABLE[NAP_MCS_INDEX], power=NAP_POWER_FRACTION * cfg.power_max, beam_index=0, beam_gain=OMNI_GAIN
    )


def update_bits(model_dim: int) -> int:
    """Bits in one model-update message."""
    return model_dim * FLOAT_BITS


def raw_upload_bits(rows: int) -> int:
    """Bits a CAIP device uploads for ``rows`` raw dataset rows."""
    return rows * FLOATS_PER_ROW * FLOAT_BITS


def caip_round_costs(devices: Sequence[DeviceState], cfg: ScenarioConfig) -> tuple[list[int], float]:
    """Per-device raw upload bits and the central server's compute time for one CAIP round.

    ``devices`` are the devices uploading this round.
    """
    uploads = [raw_upload_bits(d.dataset.size if d.dataset is not None else cfg.dataset_rows) for d in devices]
    total_rows = sum(u // (FLOATS_PER_ROW * FLOAT_BITS) for u in uploads)
    return uploads, cfg.c_central * total_rows
