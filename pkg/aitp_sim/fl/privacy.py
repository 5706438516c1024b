"""Update clipping, the Gaussian mechanism and per-device budget accounting.

Noise scale for an (epsilon, delta) release of an update clipped to L2 norm C:

    sigma = C * sqrt(2 * ln(1.25 / delta)) / epsilon
"""

from __future__ import annotations

from dataclasses import dataclass, field
import logging
import math
from typing import Final

import numpy as np

from ..errors import DomainError
from .model import ModelParams

logger = logging.getLogger(__name__)

DP_DELTA: Final = 1e-5


def gaussian_sigma(epsilon: float, clip_norm: float, delta: float = DP_DELTA) -> float:
    """Per-coordinate noise standard deviation; 0 when ``epsilon`` is infinite.

    Raises:
        DomainError: On non-positive ``epsilon`` or ``clip_norm``, or ``delta`` outside (0, 1).
    """
    if not epsilon > 0:
        raise DomainError(f"epsilon must be > 0, got {epsilon}")
    if not clip_norm > 0:
        raise DomainError(f"clip norm must be > 0, got {clip_norm}")
    if not 0 < delta < 1:
        raise DomainError(f"delta must be in (0, 1), got {delta}")
    if math.isinf(epsilon):
        return 0.0
    return clip_norm * math.sqrt(2.0 * math.log(1.25 / delta)) / epsilon


def clip_update(delta_w: ModelParams, clip_norm: float) -> ModelParams:
    """Scale ``delta_w`` down to L2 norm ``clip_norm`` if it is longer."""
    norm = float(np.linalg.norm(delta_w))
    if norm <= clip_norm:
        return delta_w.copy()
    return delta_w * (clip_norm / norm)


def add_dp_noise(
    delta_w: ModelParams,
    epsilon_round: float,
    clip_norm: float,
    rng: np.random.Generator,
    *,
    enabled: bool = True,
) -> ModelParams:
    """Clip ``delta_w`` and add Gaussian noise calibrated to ``epsilon_round``.

    With ``enabled=False`` or an infinite budget the clipped update is returned
    unchanged and ``rng`` is not consumed.
    """
    sigma = gaussian_sigma(epsilon_round, clip_norm)
    clipped = clip_update(delta_w, clip_norm)
    if not enabled or sigma == 0.0:
        return clipped
    return clipped + rng.normal(0.0, sigma, size=clipped.shape)


@dataclass
class PrivacyAccountant:
    """Basic-composition budget ledger.

    A device whose next charge would push it past ``epsilon_max`` is excluded
    for the rest of the run instead of overspending.
    """

    epsilon_max: float
    spent: dict[int, float] = field(default_factory=dict)
    excluded: set[int] = field(default_factory=set)

    def epsilon_spent(self, device_id: int) -> float:
        return self.spent.get(device_id, 0.0)

    def is_excluded(self, device_id: int) -> bool:
        return device_id in self.excluded

    def spend(self, device_id: int, epsilon_round: float) -> bool:
        """Charge ``epsilon_round``; return False (and exclude) when the budget would be exceeded."""
        if device_id in self.excluded:
            return False
        total = self.epsilon_spent(device_id) + epsilon_round
        if total > self.epsilon_max and not math.isclose(total, self.epsilon_max, rel_tol=1e-12):
            self.excluded.add(device_id)
            logger.warning(
                f"Device {device_id} excluded: spending {epsilon_round} would exceed budget {self.epsilon_max}"
            )
            return False
        self.spent[device_id] = min(total, self.epsilon_max)
        return True

    def exhaust(self, device_id: int) -> None:
        """Mark the device's whole budget as consumed (raw-data exposure)."""
        self.spent[device_id] = self.epsilon_max


def spend_privacy(acct: PrivacyAccountant, device_id: int, epsilon_round: float) -> bool:
    """Charge one round to ``device_id``; False means the device is now excluded."""
    return acct.spend(device_id, epsilon_round)
