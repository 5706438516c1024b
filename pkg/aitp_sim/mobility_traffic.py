"""Random Waypoint mobility and per-class Poisson traffic."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Final

import numpy as np

from .errors import DomainError
from .scenario import DeviceState, TrafficKind


@dataclass(frozen=True)
class TrafficClass:
    kind: TrafficKind
    arrival_rate: float
    packet_bits: int
    latency_budget: float


TRAFFIC_CLASSES: Final[dict[TrafficKind, TrafficClass]] = {
    TrafficKind.EMBB: TrafficClass(TrafficKind.EMBB, arrival_rate=50.0, packet_bits=12_000, latency_budget=20e-3),
    TrafficKind.URLLC: TrafficClass(TrafficKind.URLLC, arrival_rate=200.0, packet_bits=256, latency_budget=1e-3),
    TrafficKind.MMTC: TrafficClass(TrafficKind.MMTC, arrival_rate=1.0, packet_bits=256, latency_budget=1.0),
}


def random_waypoint_step(
    device: DeviceState,
    dt: float,
    rng: np.random.Generator,
    *,
    area_m: float,
    speed_min: float,
    speed_max: float,
) -> DeviceState:
    """Advance ``device`` by ``dt`` seconds toward its waypoint.

    A device that reaches its waypoint stops there for the rest of the step
    and draws a new waypoint and speed (no pause time). Static devices are
    returned unchanged.

    Raises:
        DomainError: If ``dt`` is not positive.
    """
    if not dt > 0:
        raise DomainError(f"dt must be > 0, got {dt}")
    if not device.mobile:
        return device
    to_go = device.waypoint - device.position
    distance = float(np.linalg.norm(to_go))
    travel = device.speed * dt
    if distance <= travel:
        return replace(
            device,
            position=device.waypoint.copy(),
            waypoint=rng.uniform(0.0, area_m, size=2),
            speed=float(rng.uniform(speed_min, speed_max)),
        )
    position = np.clip(device.position + to_go * (travel / distance), 0.0, area_m)
    return replace(device, position=position)


def traffic_for(device: DeviceState, dt: float, rng: np.random.Generator) -> tuple[float, int]:
    """Arrival rate of the device's class and the bits it offers over ``dt``.

    Raises:
        DomainError: If ``dt`` is not positive.
    """
    if not dt > 0:
        raise DomainError(f"dt must be > 0, got {dt}")
    cls = TRAFFIC_CLASSES[device.traffic]
    packets = int(rng.poisson(cls.arrival_rate * dt))
    return cls.arrival_rate, packets * cls.packet_bits
