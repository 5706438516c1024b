"""Path loss, channel observations, the MCS table and Shannon link throughput."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import StrEnum
import logging
import math
from pathlib import Path
from typing import IO, TYPE_CHECKING, Final, Iterable

import numpy as np
import numpy.typing as npt

from .errors import DomainError, OutputError

if TYPE_CHECKING:
    from .scenario import DeviceState

logger = logging.getLogger(__name__)

# Thermal noise density at 290 K, W/Hz.
KT_W_PER_HZ: Final = 4.0e-21
REFERENCE_DISTANCE_M: Final = 1.0
CROSS_INTERFERENCE_FRACTION: Final = 0.05


class ChannelModel(StrEnum):
    MMWAVE_28GHZ = "MMWAVE_28GHZ"
    THZ_140GHZ = "THZ_140GHZ"
    RAYLEIGH = "RAYLEIGH"


# (PL0 dB at d0, path-loss exponent); RAYLEIGH shares the 28 GHz deterministic part.
PATH_LOSS_PARAMS: Final[dict[ChannelModel, tuple[float, float]]] = {
    ChannelModel.MMWAVE_28GHZ: (61.4, 2.0),
    ChannelModel.THZ_140GHZ: (75.4, 2.2),
    ChannelModel.RAYLEIGH: (61.4, 2.0),
}

MODULATION_NAMES: Final[dict[int, str]] = {2: "QPSK", 4: "16QAM", 6: "64QAM", 8: "256QAM"}


@dataclass(frozen=True)
class McsEntry:
    index: int
    modulation_order: int
    code_rate: float
    min_snr_db: float

    @property
    def modulation(self) -> str:
        return MODULATION_NAMES[self.modulation_order]

    @property
    def spectral_efficiency(self) -> float:
        return self.modulation_order * self.code_rate


MCS_TABLE: Final[tuple[McsEntry, ...]] = (
    McsEntry(0, 2, 0.50, -1.0),
    McsEntry(1, 2, 0.60, 3.0),
    McsEntry(2, 4, 0.60, 7.0),
    McsEntry(3, 4, 0.65, 11.0),
    McsEntry(4, 6, 0.65, 15.0),
    McsEntry(5, 6, 0.70, 19.0),
    McsEntry(6, 8, 0.70, 23.0),
    McsEntry(7, 8, 0.75, 27.0),
)

MCS_CSV_COLUMNS: Final[tuple[str, ...]] = ("index", "modulation_order", "code_rate", "min_snr_db")


@dataclass(frozen=True)
class ChannelObservation:
    """Link state measured with a probe transmission at ``probe_power`` watts.

    ``snr_db`` is the SINR of the probe; the SINR at another power follows from
    :meth:`snr_at`.
    """

    gain: float
    noise: float
    interference: float
    probe_power: float
    snr_db: float
    cqi: int

    @property
    def noise_plus_interference(self) -> float:
        return self.noise + self.interference

    def snr_at(self, power: float) -> float:
        """SINR in dB when transmitting at ``power`` watts."""
        if power <= 0:
            return -math.inf
        return self.snr_db + 10.0 * math.log10(power / self.probe_power)


def cqi_from_snr(snr_db: float) -> int:
    """Quantize an SNR into the 0-15 CQI range in 2.5 dB steps."""
    if math.isnan(snr_db):
        return 0
    if math.isinf(snr_db):
        return 15 if snr_db > 0 else 0
    return min(15, max(0, math.floor((snr_db + 6.0) / 2.5)))


def make_observation(gain: float, noise: float, interference: float, probe_power: float) -> ChannelObservation:
    """Assemble an observation and derive its SNR and CQI.

    Raises:
        DomainError: If gain, noise or probe power is not positive, or interference is negative.
    """
    if gain <= 0 or noise <= 0 or probe_power <= 0:
        raise DomainError(f"gain, noise and probe power must be > 0 (gain={gain}, noise={noise}, P={probe_power})")
    if interference < 0:
        raise DomainError(f"interference must be >= 0, got {interference}")
    snr_db = 10.0 * math.log10(probe_power * gain / (noise + interference))
    return ChannelObservation(
        gain=gain,
        noise=noise,
        interference=interference,
        probe_power=probe_power,
        snr_db=snr_db,
        cqi=cqi_from_snr(snr_db),
    )


def _deterministic_path_loss_db(model: ChannelModel, distance_m: float) -> float:
    pl0, exponent = PATH_LOSS_PARAMS[model]
    return pl0 + 10.0 * exponent * math.log10(distance_m / REFERENCE_DISTANCE_M)


def path_loss_db(model: ChannelModel, distance_m: float, rng: np.random.Generator | None = None) -> float:
    """Log-distance path loss, with an exponential(1) power fade for ``RAYLEIGH``.

    Raises:
        DomainError: If ``distance_m`` is not positive.
        ValueError: If ``model`` is ``RAYLEIGH`` and no generator is given.
    """
    if not distance_m > 0:
        raise DomainError(f"distance must be > 0, got {distance_m}")
    loss = _deterministic_path_loss_db(model, distance_m)
    if model is ChannelModel.RAYLEIGH:
        if rng is None:
            raise ValueError("RAYLEIGH path loss needs a generator for the fading draw")
        loss -= 10.0 * math.log10(rng.exponential(1.0))
    return loss


def anchor_interference(
    anchors: npt.NDArray[np.float64], model: ChannelModel, p_max: float
) -> npt.NDArray[np.float64]:
    """Cross-cluster interference power (W) received at each anchor.

    Each anchor sees a fixed fraction of the power the other anchors' clusters
    would deliver at full power over the anchor-to-anchor distance. The
    deterministic part of the path loss is used, so the result does not depend
    on fading draws or on which aggregators are alive.
    """
    m = len(anchors)
    result = np.zeros(m)
    for k in range(m):
        total = 0.0
        for j in range(m):
            if j == k:
                continue
            distance = max(float(np.linalg.norm(anchors[k] - anchors[j])), REFERENCE_DISTANCE_M)
            total += p_max * 10.0 ** (-_deterministic_path_loss_db(model, distance) / 10.0)
        result[k] = CROSS_INTERFERENCE_FRACTION * total
    return result


def observe(
    device: DeviceState,
    distance_m: float,
    model: ChannelModel,
    rng: np.random.Generator | None,
    *,
    probe_power: float,
    interference: float,
    beam_gain: float = 1.0,
) -> ChannelObservation:
    """Observe ``device``'s link to its serving point over ``device.bandwidth``.

    Raises:
        DomainError: If the device is not alive.
    """
    if not device.alive:
        raise DomainError(f"device {device.id} is not alive")
    loss = path_loss_db(model, max(distance_m, REFERENCE_DISTANCE_M), rng)
    gain = 10.0 ** (-loss / 10.0) * beam_gain
    return make_observation(gain, KT_W_PER_HZ * device.bandwidth, interference, probe_power)


def reference_observation(
    snr_db: float, interference_dbm: float, probe_power: float, bandwidth: float
) -> ChannelObservation:
    """Synthesize an observation with a given probe SNR and interference-plus-noise level.

    Used to label dataset rows, whose features carry SNR and interference but no geometry.
    """
    noise = KT_W_PER_HZ * bandwidth
    total = 10.0 ** ((interference_dbm - 30.0) / 10.0)
    interference = max(total - noise, 0.0)
    gain = 10.0 ** (snr_db / 10.0) * (noise + interference) / probe_power
    return make_observation(gain, noise, interference, probe_power)


def shannon_throughput(bandwidth: float, power: float, obs: ChannelObservation, code_rate: float) -> float:
    """``B·log2(1 + P·G/(N+I))·C`` in bits/s.

    Raises:
        DomainError: On non-positive bandwidth, negative power or a code rate outside (0, 1].
    """
    if bandwidth <= 0:
        raise DomainError(f"bandwidth must be > 0, got {bandwidth}")
    if not 0 < code_rate <= 1:
        raise DomainError(f"code rate must be in (0, 1], got {code_rate}")
    if power < 0:
        raise DomainError(f"power must be >= 0, got {power}")
    sinr = power * obs.gain / obs.noise_plus_interference
    return bandwidth * math.log2(1.0 + sinr) * code_rate


def network_throughput(per_device: Iterable[float]) -> float:
    """Sum of device throughputs in the given (device-id) order, compensated."""
    return math.fsum(per_device)


def write_mcs_table(target: str | Path | IO[str], table: tuple[McsEntry, ...] = MCS_TABLE) -> None:
    """Write the MCS table as CSV to a path or an open text stream.

    Raises:
        OutputError: If the file cannot be written.
    """
    rows = [{col: getattr(entry, col) for col in MCS_CSV_COLUMNS} for entry in table]
    if isinstance(target, (str, Path)):
        try:
            with open(target, "w", newline="", encoding="utf-8") as fh:
                _write_rows(fh, rows)
        except OSError as exc:
            raise OutputError(f"cannot write MCS table to {target}: {exc}") from exc
        logger.debug(f"Wrote MCS table to {target}")
    else:
        _write_rows(target, rows)


def _write_rows(fh: IO[str], rows: list[dict[str, object]]) -> None:
    writer = csv.DictWriter(fh, fieldnames=list(MCS_CSV_COLUMNS), lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
