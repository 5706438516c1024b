"""Latency, queueing, energy, efficiency, objective, privacy-loss and robustness metrics."""

from __future__ import annotations

from dataclasses import dataclass, fields
import math
from typing import Any, Final, Sequence

from .channel import network_throughput
from .errors import DomainError, UnstableQueueError
from .fl.privacy import PrivacyAccountant
from .scenario import Mode

DEFAULT_RHO_MAX: Final = 0.999

PRIVACY_LOSS_DEFINITION: Final = (
    "Mean over live devices of epsilon_spent / epsilon_max. AITP charges epsilon_round per participating round; "
    "CAIP devices are charged the full epsilon_max on their first raw-data upload; NAP exchanges no model or "
    "data traffic and is always 0."
)
ROBUSTNESS_DEFINITION: Final = (
    "Mean network throughput over the rounds after the first failure round, divided by the same mean in a "
    "failure-free run with the same seed, clipped to [0, 1]; 1.0 when the plan is empty."
)


def queueing_delay_mm1(arrival_rate: float, service_rate: float, rho_max: float = DEFAULT_RHO_MAX) -> float:
    """Mean M/M/1 sojourn time ``1/(mu - lambda)``.

    Raises:
        DomainError: If ``service_rate`` is not positive or ``arrival_rate`` is negative.
        UnstableQueueError: If utilization reaches ``rho_max``.
    """
    if not service_rate > 0:
        raise DomainError(f"service rate must be > 0, got {service_rate}")
    if arrival_rate < 0:
        raise DomainError(f"arrival rate must be >= 0, got {arrival_rate}")
    if arrival_rate >= rho_max * service_rate:
        raise UnstableQueueError(arrival_rate / service_rate)
    return 1.0 / (service_rate - arrival_rate)


def transmission_latency(bits: float, throughput: float) -> float:
    if not throughput > 0:
        raise DomainError(f"throughput must be > 0, got {throughput}")
    if bits < 0:
        raise DomainError(f"bits must be >= 0, got {bits}")
    return bits / throughput


def fl_latency(rounds: int, t_train: float, t_update_tx: float, t_agg: float) -> float:
    """Cumulative FL latency ``R·(t_train + t_update_tx + t_agg)``."""
    if rounds < 0 or min(t_train, t_update_tx, t_agg) < 0:
        raise DomainError("fl_latency inputs must be >= 0")
    return rounds * (t_train + t_update_tx + t_agg)


def total_latency(l_tx: float, l_proc: float, l_queue: float, l_fl_share: float) -> float:
    if min(l_tx, l_proc, l_queue, l_fl_share) < 0:
        raise DomainError("latency components must be >= 0")
    return l_tx + l_proc + l_queue + l_fl_share


def device_energy(power: float, t_tx: float, e_comp: float) -> float:
    """``P·t_tx + E_comp`` in joules."""
    if min(power, t_tx, e_comp) < 0:
        raise DomainError("energy inputs must be >= 0")
    return power * t_tx + e_comp


def energy_efficiency(t_network: float, energies: Sequence[float], window: float) -> float:
    """Bits delivered per joule over ``window`` seconds.

    Raises:
        DomainError: If the energies sum to zero or less.
    """
    total = math.fsum(energies)
    if not total > 0:
        raise DomainError(f"total energy must be > 0, got {total}")
    return t_network * window / total


def objective(alpha: float, beta: float, gamma: float, l_norm: float, t_norm: float, e_norm: float) -> float:
    """Scalarized cost ``alpha·L + beta·(1 - T) + gamma·E`` on normalized inputs.

    Raises:
        DomainError: On negative or all-zero weights, or inputs outside [0, 1].
    """
    if min(alpha, beta, gamma) < 0 or alpha + beta + gamma <= 0:
        raise DomainError(f"weights must be >= 0 and not all zero, got {(alpha, beta, gamma)}")
    if not all(0.0 <= v <= 1.0 for v in (l_norm, t_norm, e_norm)):
        raise DomainError(f"normalized inputs must be in [0, 1], got {(l_norm, t_norm, e_norm)}")
    return alpha * l_norm + beta * (1.0 - t_norm) + gamma * e_norm


def privacy_loss(mode: Mode, accountant: PrivacyAccountant, device_ids: Sequence[int]) -> float:
    if mode is Mode.NAP or not device_ids:
        return 0.0
    ratios = [accountant.epsilon_spent(i) / accountant.epsilon_max for i in device_ids]
    return math.fsum(ratios) / len(ratios)


def robustness(throughput_with_failures: float, throughput_baseline: float) -> float:
    """Failure-plan throughput relative to the failure-free run, clipped to [0, 1].

    Raises:
        DomainError: If the baseline is not positive.
    """
    if not throughput_baseline > 0:
        raise DomainError(f"baseline throughput must be > 0, got {throughput_baseline}")
    return min(1.0, max(0.0, throughput_with_failures / throughput_baseline))


@dataclass
class RoundMetrics:
    """One round of results.

    Per-device tuples are aligned with ``device_ids`` (live devices in id
    order); the aggregate fields are derived from them by :func:`assemble_round`.
    """

    round: int
    mode: Mode
    device_ids: tuple[int, ...] = ()
    throughput: tuple[float, ...] = ()
    tx_power: tuple[float, ...] = ()
    bandwidth: tuple[float, ...] = ()
    l_tx: tuple[float, ...] = ()
    l_proc: tuple[float, ...] = ()
    l_queue: tuple[float, ...] = ()
    l_fl_share: tuple[float, ...] = ()
    latency_budget: tuple[float, ...] = ()
    energy: tuple[float, ...] = ()
    epsilon_spent: tuple[float, ...] = ()
    central_energy: float = 0.0
    window: float = 1.0
    t_network: float = 0.0
    mean_latency: float = 0.0
    total_energy: float = 0.0
    energy_efficiency: float = 0.0
    privacy_loss: float = 0.0
    live_devices: int = 0
    live_aggregators: int = 0
    participants: int = 0
    excluded: int = 0
    mcs_violations: int = 0
    queue_overloads: int = 0
    budget_violations: int = 0
    dropouts: int = 0
    mask_audit_failures: int = 0
    learning_skipped: bool = False
    accuracy: float = 0.0
    objective: float = 0.0
    messages_per_aggregator: tuple[int, ...] = ()

    @property
    def l_total(self) -> tuple[float, ...]:
        return tuple(
            total_latency(tx, proc, queue, share)
            for tx, proc, queue, share in zip(self.l_tx, self.l_proc, self.l_queue, self.l_fl_share)
        )

    def to_dict(self) -> dict[str, Any]:
        data: dict[str, Any] = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = list(value)
            elif isinstance(value, Mode):
                value = value.value
            data[f.name] = value
        return data

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RoundMetrics":
        values = dict(data)
        values["mode"] = Mode(values["mode"])
        for f in fields(cls):
            if isinstance(values.get(f.name), list):
                values[f.name] = tuple(values[f.name])
        return cls(**values)


def assemble_round(metrics: RoundMetrics) -> RoundMetrics:
    """Fill the aggregate fields of ``metrics`` from its per-device tuples."""
    metrics.live_devices = len(metrics.device_ids)
    metrics.t_network = network_throughput(metrics.throughput)
    totals = metrics.l_total
    metrics.mean_latency = math.fsum(totals) / len(totals) if totals else 0.0
    metrics.budget_violations = sum(1 for total, budget in zip(totals, metrics.latency_budget) if total > budget)
    energies = [*metrics.energy, metrics.central_energy]
    metrics.total_energy = math.fsum(energies)
    metrics.energy_efficiency = (
        energy_efficiency(metrics.t_network, energies, metrics.window) if metrics.total_energy > 0 else 0.0
    )
    return metrics
