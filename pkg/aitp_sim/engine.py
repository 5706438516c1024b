"""Round-synchronous simulation loop for the AITP, CAIP and NAP protocol modes.

One round is one traffic window of ``round_duration_s`` seconds. Within a
round the steps are: orphan reassignment, mobility, channel observation,
parameter selection, traffic/latency/energy, learning, failure injection and
metrics. Per-device training may fan out to a thread pool; every reduction
runs in device-id order, so results do not depend on the worker count.
"""

from __future__ import annotations

from concurrent.futures import Executor, ThreadPoolExecutor
from dataclasses import dataclass, field
import logging
import math
import time
from typing import Callable, Literal, Sequence

import numpy as np
import numpy.typing as npt

from .adaptation import (
    BEAM_MAX_GAIN,
    OMNI_GAIN,
    TxParams,
    caip_round_costs,
    effective_mcs,
    is_mcs_violation,
    nap_params,
    select_tx_params_aitp,
    select_tx_params_oracle,
    steer_beam,
    update_bits,
)
from .channel import MCS_TABLE, ChannelObservation, anchor_interference, observe, shannon_throughput
from .errors import DropoutError, NoAggregatorError, UnknownIdError, UnstableQueueError
from .fl.model import MODEL_DIM, ModelParams, init_model, local_train, model_accuracy
from .fl.privacy import PrivacyAccountant, add_dp_noise, spend_privacy
from .fl.secure_agg import ClusterUpdate, MaskedUpdate, global_combine, mask_updates, masks_cancel, secure_aggregate
from .metrics import (
    RoundMetrics,
    assemble_round,
    device_energy,
    fl_latency,
    objective,
    privacy_loss,
    queueing_delay_mm1,
    robustness,
    transmission_latency,
)
from .mobility_traffic import TRAFFIC_CLASSES, random_waypoint_step, traffic_for
from .report import SimulationReport, summarize
from .rng import stream
from .scenario import (
    AggregatorState,
    DeviceState,
    FailureEvent,
    LocalDataset,
    Mode,
    ScenarioConfig,
    build_topology,
    nearest_anchor,
    validation_set,
)

logger = logging.getLogger(__name__)

# CAIP's central server is aggregator 0.
CENTRAL_SERVER_ID = 0

MessageKind = Literal["model_update", "raw_data"]

_PER_DEVICE_FIELDS = (
    "throughput",
    "tx_power",
    "bandwidth",
    "l_tx",
    "l_proc",
    "l_queue",
    "l_fl_share",
    "latency_budget",
    "energy",
)


@dataclass(frozen=True)
class Message:
    round: int
    kind: MessageKind
    sender: int
    receiver: int
    bits: int


@dataclass
class SimulationState:
    cfg: ScenarioConfig
    devices: list[DeviceState]
    aggregators: list[AggregatorState]
    global_model: ModelParams
    accountant: PrivacyAccountant
    validation: LocalDataset
    interference: npt.NDArray[np.float64]
    messages: list[Message] = field(default_factory=list)
    central_failed: bool = False
    pending_reassignment: bool = False
    executor: Executor | None = None
    audit_masks: bool = False

    def live_aggregator_ids(self) -> list[int]:
        return [a.id for a in self.aggregators if a.alive]

    def is_served(self, device: DeviceState) -> bool:
        return self.aggregators[device.cluster_id].alive


def initial_state(
    cfg: ScenarioConfig, *, executor: Executor | None = None, audit_masks: bool = False
) -> SimulationState:
    """Build the topology, datasets, validation rows and the initial global model for ``cfg``."""
    devices, aggregators = build_topology(cfg)
    anchors = np.array([a.anchor for a in aggregators])
    return SimulationState(
        cfg=cfg,
        devices=devices,
        aggregators=aggregators,
        global_model=init_model(cfg.seed),
        accountant=PrivacyAccountant(cfg.dp_epsilon_max),
        validation=validation_set(cfg),
        interference=anchor_interference(anchors, cfg.channel_model, cfg.power_max),
        executor=executor,
        audit_masks=audit_masks,
    )


def check_failure_plan(cfg: ScenarioConfig) -> None:
    """Reject failure entries that target ids outside the topology.

    Raises:
        UnknownIdError: On the first unknown device or aggregator id.
    """
    for event in cfg.failure_plan:
        limit = cfg.n_devices if event.kind == "device" else cfg.n_aggregators
        if event.target >= limit:
            raise UnknownIdError(f"failure {event.to_text()!r}: no {event.kind} {event.target} (have {limit})")


def inject_failure(state: SimulationState, event: FailureEvent) -> SimulationState:
    """Take the device or aggregator named by ``event`` down.

    Orphaned members of a failed aggregator move to the nearest live aggregator
    at the next round boundary. Under CAIP, losing aggregator 0 is a central
    server outage.

    Raises:
        UnknownIdError: If the target id does not exist.
    """
    if event.kind == "device":
        if not 0 <= event.target < len(state.devices):
            raise UnknownIdError(f"no device {event.target}")
        state.devices[event.target].alive = False
        logger.warning(f"Round {event.round}: device {event.target} failed")
        return state

    if not 0 <= event.target < len(state.aggregators):
        raise UnknownIdError(f"no aggregator {event.target}")
    state.aggregators[event.target].alive = False
    state.pending_reassignment = True
    if state.cfg.mode is Mode.CAIP and event.target == CENTRAL_SERVER_ID:
        state.central_failed = True
        logger.warning(f"Round {event.round}: central server failed, CAIP network is down")
    else:
        logger.warning(f"Round {event.round}: aggregator {event.target} failed")
    return state


def reassign_orphans(state: SimulationState) -> None:
    """Move members of failed aggregators to the nearest live one."""
    state.pending_reassignment = False
    live = state.live_aggregator_ids()
    if not live:
        return
    anchors = np.array([a.anchor for a in state.aggregators])
    for agg in state.aggregators:
        if agg.alive or not agg.member_ids:
            continue
        moved = len(agg.member_ids)
        for device_id in agg.member_ids:
            device = state.devices[device_id]
            device.cluster_id = nearest_anchor(device.position, anchors, live)
            state.aggregators[device.cluster_id].member_ids.append(device_id)
        agg.member_ids = []
        logger.warning(f"Reassigned {moved} devices of failed aggregator {agg.id}")
    for agg in state.aggregators:
        agg.member_ids.sort()


@dataclass
class _Link:
    """Per-device link outcome for one round."""

    device: DeviceState
    params: TxParams
    rate: float
    effective_rate: float
    peak_rate: float
    arrival_rate: float
    offered_bits: int
    packet_bits: int
    violation: bool


def _bearing(device: DeviceState, anchor: npt.NDArray[np.float64]) -> tuple[float, float]:
    offset = device.position - anchor
    return float(np.hypot(offset[0], offset[1])), math.atan2(float(offset[1]), float(offset[0]))


def _peak_rate(obs: ChannelObservation, beam_used: float, cfg: ScenarioConfig, bandwidth: float) -> float:
    """Full-power, full-beam, top-MCS rate of the link; the T_max term."""
    path_gain = obs.gain / beam_used
    sinr = cfg.power_max * path_gain * BEAM_MAX_GAIN / obs.noise_plus_interference
    return bandwidth * math.log2(1.0 + sinr) * MCS_TABLE[-1].code_rate


def _observe_link(state: SimulationState, device: DeviceState, round_index: int) -> _Link:
    cfg = state.cfg
    anchor = state.aggregators[device.cluster_id].anchor
    distance, aoa = _bearing(device, anchor)
    beam = (0, OMNI_GAIN) if cfg.mode is Mode.NAP else steer_beam(aoa, cfg.codebook_size)
    obs = observe(
        device,
        distance,
        cfg.channel_model,
        stream(cfg.seed, "fading", device.id, round_index),
        probe_power=cfg.power_max,
        interference=float(state.interference[device.cluster_id]),
        beam_gain=beam[1],
    )

    traffic_rng = stream(cfg.seed, "traffic", device.id, round_index)
    arrival_rate, offered_bits = traffic_for(device, cfg.round_duration_s, traffic_rng)
    packet_bits = TRAFFIC_CLASSES[device.traffic].packet_bits
    load = min(1.0, arrival_rate * packet_bits / device.bandwidth)

    match cfg.mode:
        case Mode.AITP:
            params = select_tx_params_aitp(
                state.global_model, obs, load=load, speed=device.speed, p_max=cfg.power_max, beam=beam
            )
        case Mode.CAIP:
            params = select_tx_params_oracle(obs, p_max=cfg.power_max, beam=beam)
        case Mode.NAP:
            params = nap_params(cfg)

    achieved = obs.snr_at(params.power)
    mcs = effective_mcs(params.mcs, achieved)
    rate = shannon_throughput(device.bandwidth, params.power, obs, mcs.code_rate)
    device.tx_power = params.power
    return _Link(
        device=device,
        params=params,
        rate=rate,
        effective_rate=rate,
        peak_rate=_peak_rate(obs, beam[1], cfg, device.bandwidth),
        arrival_rate=arrival_rate,
        offered_bits=offered_bits,
        packet_bits=packet_bits,
        violation=cfg.mode is Mode.AITP and is_mcs_violation(params.mcs, achieved),
    )


def _select_participants(state: SimulationState, round_index: int) -> list[DeviceState]:
    cfg = state.cfg
    candidates = [
        d for d in state.devices if d.alive and state.is_served(d) and not state.accountant.is_excluded(d.id)
    ]
    if cfg.participation_fraction >= 1.0 or not candidates:
        return candidates
    k = max(1, math.ceil(cfg.participation_fraction * len(candidates)))
    rng = stream(cfg.seed, "participation", round_index)
    chosen = set(rng.choice([d.id for d in candidates], size=k, replace=False).tolist())
    return [d for d in candidates if d.id in chosen]


def _train_all(
    state: SimulationState, devices: Sequence[DeviceState], round_index: int
) -> list[ModelParams]:
    cfg = state.cfg
    w = state.global_model

    def train(device: DeviceState) -> ModelParams:
        assert device.dataset is not None
        rng = stream(cfg.seed, "local_training", device.id, round_index)
        return local_train(w, device.dataset, cfg.local_epochs, cfg.learning_rate, cfg.batch_size, rng)

    if state.executor is None:
        return [train(d) for d in devices]
    return list(state.executor.map(train, devices))


@dataclass
class _LearningOutcome:
    skipped: bool = False
    dropouts: int = 0
    audit_failures: int = 0


def _audit(state: SimulationState, updates: Sequence[ClusterUpdate], masked: Sequence[MaskedUpdate]) -> int:
    if not state.audit_masks or masks_cancel(updates, masked):
        return 0
    logger.warning(f"Mask audit failed for roster {masked[0].roster}")
    return 1


def _learn_aitp(
    state: SimulationState, participants: list[DeviceState], failing: set[int], round_index: int
) -> _LearningOutcome:
    cfg = state.cfg
    outcome = _LearningOutcome()
    bits = update_bits(MODEL_DIM)
    cluster_deltas: list[ModelParams] = []

    for agg in state.aggregators:
        if not agg.alive:
            continue
        members = [d for d in participants if d.cluster_id == agg.id]
        if not members:
            continue
        updates: list[ClusterUpdate] = []
        for device, delta in zip(members, _train_all(state, members, round_index)):
            noisy = add_dp_noise(
                delta,
                cfg.dp_epsilon_round,
                cfg.dp_clip,
                stream(cfg.seed, "dp_noise", device.id, round_index),
                enabled=cfg.dp_enabled,
            )
            released = spend_privacy(state.accountant, device.id, cfg.dp_epsilon_round)
            device.epsilon_spent = state.accountant.epsilon_spent(device.id)
            device.excluded = state.accountant.is_excluded(device.id)
            if not released:
                continue
            device.local_model = state.global_model + delta
            assert device.dataset is not None
            updates.append((device.id, noisy, device.dataset.size))
        if not updates:
            continue

        masked = mask_updates(updates, cfg.seed, agg.id, round_index)
        outcome.audit_failures += _audit(state, updates, masked)
        delivered = [m for m in masked if m.device_id not in failing]
        if not delivered:
            outcome.dropouts += len(masked)
            logger.warning(f"Round {round_index}: every update for aggregator {agg.id} dropped")
            continue
        try:
            cluster_delta, _ = secure_aggregate(delivered)
            senders = [m.device_id for m in delivered]
        except DropoutError as exc:
            outcome.dropouts += len(exc.missing_ids)
            logger.warning(f"Round {round_index}: aggregator {agg.id} re-masking after dropout of {exc.missing_ids}")
            survivors = [u for u in updates if u[0] not in exc.missing_ids]
            remasked = mask_updates(survivors, cfg.seed, agg.id, round_index, attempt=1)
            outcome.audit_failures += _audit(state, survivors, remasked)
            cluster_delta, _ = secure_aggregate(remasked)
            senders = [u[0] for u in survivors]
        state.messages.extend(Message(round_index, "model_update", s, agg.id, bits) for s in senders)
        cluster_deltas.append(cluster_delta)
        logger.debug(f"Round {round_index}: aggregator {agg.id} combined {len(senders)} updates")

    try:
        state.global_model = global_combine(
            state.global_model, cluster_deltas, cfg.n_aggregators, strict=cfg.strict_paper_combine
        )
    except NoAggregatorError as exc:
        logger.info(f"Round {round_index}: learning skipped ({exc})")
        outcome.skipped = True
    return outcome


def _learn_caip(
    state: SimulationState, uploaders: list[DeviceState], uploads: list[int], round_index: int
) -> _LearningOutcome:
    cfg = state.cfg
    if state.central_failed or not uploaders:
        return _LearningOutcome(skipped=True)
    for device, upload in zip(uploaders, uploads):
        state.messages.append(Message(round_index, "raw_data", device.id, CENTRAL_SERVER_ID, upload))
        state.accountant.exhaust(device.id)
        device.epsilon_spent = state.accountant.epsilon_spent(device.id)
    datasets = [d.dataset for d in uploaders if d.dataset is not None]
    pooled = LocalDataset(
        features=np.vstack([ds.features for ds in datasets]), labels=np.vstack([ds.labels for ds in datasets])
    )
    rng = stream(cfg.seed, "central_training", round_index)
    state.global_model = state.global_model + local_train(
        state.global_model, pooled, cfg.local_epochs, cfg.learning_rate, cfg.batch_size, rng
    )
    return _LearningOutcome()


def run_round(state: SimulationState, round_index: int) -> tuple[SimulationState, RoundMetrics]:
    """Advance the simulation by one round and return its metrics.

    Args:
        state: State after the previous round; mutated in place.
        round_index: 1-based round number, used to key the random streams.
    """
    cfg = state.cfg
    dt = cfg.round_duration_s
    cap = cfg.latency_cap_s

    if state.pending_reassignment:
        reassign_orphans(state)

    for i, device in enumerate(state.devices):
        if device.alive:
            state.devices[i] = random_waypoint_step(
                device,
                dt,
                stream(cfg.seed, "mobility", device.id, round_index),
                area_m=cfg.area_m,
                speed_min=cfg.speed_min,
                speed_max=cfg.speed_max,
            )

    live = [d for d in state.devices if d.alive]
    links = {d.id: _observe_link(state, d, round_index) for d in live if state.is_served(d)}

    participants: list[DeviceState] = []
    uploads: dict[int, int] = {}
    central_time = 0.0
    central_energy = 0.0
    if cfg.mode is Mode.AITP:
        participants = _select_participants(state, round_index)
    elif cfg.mode is Mode.CAIP and not state.central_failed:
        participants = [d for d in live if d.id in links]
        upload_bits, central_time = caip_round_costs(participants, cfg)
        uploads = {d.id: bits for d, bits in zip(participants, upload_bits)}
        central_energy = cfg.c_central_j * sum(d.dataset.size for d in participants if d.dataset is not None)
    participant_ids = {d.id for d in participants}

    if cfg.mode is Mode.CAIP:
        for link in links.values():
            if state.central_failed:
                link.effective_rate = 0.0
            else:
                wait = uploads[link.device.id] / cfg.control_rate_bps + central_time
                link.effective_rate = (1.0 - min(1.0, wait / dt)) * link.rate

    packets = {i: link.offered_bits // link.packet_bits for i, link in links.items()}
    cluster_packets: dict[int, int] = {}
    for i, count in packets.items():
        key = 0 if cfg.mode is Mode.CAIP else state.devices[i].cluster_id
        cluster_packets[key] = cluster_packets.get(key, 0) + count
    cluster_size = {
        agg.id: sum(1 for d in participants if d.cluster_id == agg.id) for agg in state.aggregators
    }

    row: dict[str, list[float]] = {k: [] for k in _PER_DEVICE_FIELDS}
    overloads = 0
    violations = 0
    t_max = 0.0
    for device in live:
        link = links.get(device.id)
        fl_share = 0.0
        energy = 0.0
        if link is None or link.effective_rate <= 0:
            l_tx, l_proc, l_queue, throughput = cap, 0.0, 0.0, 0.0
            power = link.params.power if link is not None else device.tx_power
        else:
            throughput = link.effective_rate
            power = link.params.power
            l_tx = transmission_latency(link.packet_bits, throughput)
            l_proc = cfg.processing_delay_s
            try:
                l_queue = queueing_delay_mm1(link.arrival_rate, throughput / link.packet_bits, cfg.rho_max)
            except UnstableQueueError as exc:
                logger.warning(f"Round {round_index}: device {device.id} queue overloaded ({exc}), capping latency")
                l_queue = cap
                overloads += 1

            served = max(1, cluster_packets.get(0 if cfg.mode is Mode.CAIP else device.cluster_id, 0))
            assert device.dataset is not None
            rows = device.dataset.size
            e_extra = 0.0
            if device.id in participant_ids and cfg.mode is Mode.AITP:
                t_train = cfg.c_train * cfg.local_epochs * rows * MODEL_DIM
                t_update = update_bits(MODEL_DIM) / cfg.control_rate_bps
                t_agg = cfg.c_agg * cluster_size[device.cluster_id] * MODEL_DIM
                fl_share = fl_latency(1, t_train, t_update, t_agg) / served
                e_extra = cfg.c_comp * cfg.local_epochs * rows * MODEL_DIM + cfg.control_power_w * t_update
            elif device.id in uploads:
                t_upload = uploads[device.id] / cfg.control_rate_bps
                fl_share = fl_latency(1, 0.0, t_upload, central_time) / served
                e_extra = cfg.control_power_w * t_upload

            t_data = dt if cfg.mode is Mode.NAP else min(dt, link.offered_bits / link.rate)
            energy = device_energy(power, t_data, e_extra)
            violations += link.violation
        if link is not None:
            t_max += link.peak_rate
        device.energy_spent += energy
        row["throughput"].append(throughput)
        row["tx_power"].append(power)
        row["bandwidth"].append(device.bandwidth)
        row["l_tx"].append(l_tx)
        row["l_proc"].append(l_proc)
        row["l_queue"].append(l_queue)
        row["l_fl_share"].append(fl_share)
        row["latency_budget"].append(TRAFFIC_CLASSES[device.traffic].latency_budget)
        row["energy"].append(energy)

    first_message = len(state.messages)
    failing = {e.target for e in cfg.failure_plan if e.round == round_index and e.kind == "device"}
    match cfg.mode:
        case Mode.AITP:
            outcome = _learn_aitp(state, participants, failing, round_index)
        case Mode.CAIP:
            outcome = _learn_caip(state, participants, [uploads[d.id] for d in participants], round_index)
        case Mode.NAP:
            outcome = _LearningOutcome()

    for event in cfg.failure_plan:
        if event.round == round_index:
            inject_failure(state, event)

    received = [0] * cfg.n_aggregators
    for message in state.messages[first_message:]:
        received[message.receiver] += 1

    live_ids = tuple(d.id for d in live)
    metrics = assemble_round(
        RoundMetrics(
            round=round_index,
            mode=cfg.mode,
            device_ids=live_ids,
            throughput=tuple(row["throughput"]),
            tx_power=tuple(row["tx_power"]),
            bandwidth=tuple(row["bandwidth"]),
            l_tx=tuple(row["l_tx"]),
            l_proc=tuple(row["l_proc"]),
            l_queue=tuple(row["l_queue"]),
            l_fl_share=tuple(row["l_fl_share"]),
            latency_budget=tuple(row["latency_budget"]),
            energy=tuple(row["energy"]),
            epsilon_spent=tuple(state.accountant.epsilon_spent(i) for i in live_ids),
            central_energy=central_energy,
            window=dt,
            live_aggregators=len(state.live_aggregator_ids()),
            participants=len(participants),
            excluded=len(state.accountant.excluded),
            mcs_violations=violations,
            queue_overloads=overloads,
            dropouts=outcome.dropouts,
            mask_audit_failures=outcome.audit_failures,
            learning_skipped=outcome.skipped,
            messages_per_aggregator=tuple(received),
        )
    )
    metrics.accuracy = model_accuracy(state.global_model, state.validation)
    metrics.privacy_loss = privacy_loss(cfg.mode, state.accountant, live_ids)
    energy_budget = len(live_ids) * cfg.power_max * dt
    metrics.objective = objective(
        *cfg.objective_weights,
        min(1.0, metrics.mean_latency / cap),
        min(1.0, metrics.t_network / t_max) if t_max > 0 else 0.0,
        min(1.0, metrics.total_energy / energy_budget) if energy_budget > 0 else 0.0,
    )
    logger.info(
        f"Round {round_index} [{cfg.mode.value}]: T={metrics.t_network / 1e9:.3f} Gbps, "
        f"L={metrics.mean_latency * 1e3:.3f} ms, accuracy={metrics.accuracy:.3f}"
    )
    return state, metrics


def _run_rounds(
    cfg: ScenarioConfig,
    *,
    executor: Executor | None,
    audit_masks: bool,
    max_rounds: int,
    deadline: float | None,
    on_round: Callable[[RoundMetrics], None] | None,
) -> tuple[SimulationState, float, list[RoundMetrics], bool]:
    state = initial_state(cfg, executor=executor, audit_masks=audit_masks)
    initial_accuracy = model_accuracy(state.global_model, state.validation)
    rounds: list[RoundMetrics] = []
    for r in range(1, max_rounds + 1):
        if deadline is not None and time.monotonic() > deadline:
            logger.warning(f"Wall-clock limit of {cfg.wall_clock_limit_s}s reached after {len(rounds)} rounds")
            return state, initial_accuracy, rounds, True
        state, metrics = run_round(state, r)
        rounds.append(metrics)
        if on_round is not None:
            on_round(metrics)
    return state, initial_accuracy, rounds, False


def _mean_after(rounds: Sequence[RoundMetrics], first_failure: int) -> float:
    after = [r.t_network for r in rounds if r.round > first_failure]
    return math.fsum(after) / len(after) if after else 0.0


def run_simulation(
    cfg: ScenarioConfig,
    *,
    workers: int = 1,
    audit_masks: bool = False,
    on_round: Callable[[RoundMetrics], None] | None = None,
) -> SimulationReport:
    """Run ``cfg.rounds`` rounds and summarize them.

    With a non-empty failure plan a failure-free shadow run with the same seed
    provides the robustness baseline.

    Args:
        cfg: Validated scenario.
        workers: Thread-pool size for per-device training; 1 runs inline.
        audit_masks: Verify mask cancellation on every cluster and round.
        on_round: Called with each round's metrics as soon as it completes.

    Returns:
        The report; ``aborted`` is set when the wall-clock limit cut the run short.

    Raises:
        UnknownIdError: If the failure plan names an id outside the topology.
    """
    check_failure_plan(cfg)
    started = time.monotonic()
    deadline = started + cfg.wall_clock_limit_s if cfg.wall_clock_limit_s > 0 else None
    executor = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        state, initial_accuracy, rounds, aborted = _run_rounds(
            cfg,
            executor=executor,
            audit_masks=audit_masks,
            max_rounds=cfg.rounds,
            deadline=deadline,
            on_round=on_round,
        )
        score = 1.0
        if cfg.failure_plan and rounds:
            first_failure = min(e.round for e in cfg.failure_plan)
            _, _, shadow, _ = _run_rounds(
                cfg.replace(failure_plan=()),
                executor=executor,
                audit_masks=False,
                max_rounds=len(rounds),
                deadline=None,
                on_round=None,
            )
            baseline = _mean_after(shadow, first_failure)
            if baseline > 0:
                score = robustness(_mean_after(rounds, first_failure), baseline)
    finally:
        if executor is not None:
            executor.shutdown()

    elapsed = time.monotonic() - started
    logger.info(f"{cfg.mode.value} run finished: {len(rounds)} rounds in {elapsed:.2f}s")
    return SimulationReport(
        config=cfg,
        rounds=rounds,
        summary=summarize(cfg, rounds, initial_accuracy=initial_accuracy, robustness=score, aborted=aborted),
        wall_clock_s=elapsed,
        aborted=aborted,
        final_model=state.global_model.copy(),
    )
