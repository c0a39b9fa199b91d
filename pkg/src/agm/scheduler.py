"""Task selection and claiming: pick the next transport for a polling worker.

The ranking is a total order so assignment is deterministic: higher step
priority first, then shorter distance from the worker to the pickup point,
then older instance, then lexicographically smaller instance id. Claiming is
a compare-and-swap on the instance document, so two workers polling at once
can never win the same task; the destination slot is reserved at claim time
so two workers are never routed to the last free slot of one station.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any, Callable

from .domain import (
    EventKind,
    InstancePhase,
    Job,
    JobPayload,
    JobPhase,
    Pose3,
    Routing,
    RoutingInstance,
    RoutingStep,
    Worker,
    WorkerStatus,
    Workstation,
    derive_station_state,
    pose_distance,
)
from .store import DocumentStore, NotFound, VersionConflict

log = logging.getLogger(__name__)

IdFactory = Callable[[str], str]

# Bounded CAS retry for single-document read-modify-write loops.
_CAS_ATTEMPTS = 16


@dataclass(frozen=True)
class SchedulerConfig:
    """Tunables for the assignment decision."""

    battery_threshold: float = 0.20
    claim_retry_limit: int = 3
    stale_job_timeout: float = 300.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.battery_threshold <= 1.0:
            raise ValueError("battery_threshold must be in [0,1]")
        if self.claim_retry_limit < 1:
            raise ValueError("claim_retry_limit must be >= 1")

    def to_dict(self) -> dict[str, Any]:
        return {
            "battery_threshold": self.battery_threshold,
            "claim_retry_limit": self.claim_retry_limit,
            "stale_job_timeout": self.stale_job_timeout,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> SchedulerConfig:
        return cls(
            battery_threshold=data.get("battery_threshold", 0.20),
            claim_retry_limit=data.get("claim_retry_limit", 3),
            stale_job_timeout=data.get("stale_job_timeout", 300.0),
        )


@dataclass(frozen=True)
class CandidateTask:
    """A claimable transport: one awaiting instance plus a reservable destination."""

    instance_id: str
    step_index: int
    priority: int
    source_station: str
    destination_station: str
    source_pose: Pose3
    destination_pose: Pose3
    created_at: float


def assign_destination(step: RoutingStep, store: DocumentStore) -> str | None:
    """Pick the station that will perform ``step``: among stations of its type
    with free capacity and not down, the least occupied, ties broken by id."""
    best: tuple[int, str] | None = None
    for doc in store.query("workstations", where={"station_type": step.station_type}):
        station = Workstation.from_dict(doc.body)
        if station.state.value == "down" or station.occupancy >= station.capacity:
            continue
        key = (station.occupancy, station.id)
        if best is None or key < best:
            best = key
    return None if best is None else best[1]


def eligible_tasks(worker: Worker, store: DocumentStore) -> list[CandidateTask]:
    """Every awaiting instance this worker could transport right now.

    An instance qualifies when its upcoming step requires the worker's group
    and a destination station can actually take the part.
    """
    routings: dict[str, Routing] = {}
    stations: dict[str, Workstation] = {
        doc.id: Workstation.from_dict(doc.body) for doc in store.query("workstations")
    }
    candidates: list[CandidateTask] = []
    for doc in store.query("instances", where={"phase": InstancePhase.AWAITING_TRANSPORT.value}):
        inst = RoutingInstance.from_dict(doc.body)
        routing = routings.get(inst.routing_id)
        if routing is None:
            try:
                routing = Routing.from_dict(store.get("routings", inst.routing_id).body)
            except NotFound:
                continue
            routings[inst.routing_id] = routing
        if inst.current_step >= len(routing.steps):
            continue
        step = routing.steps[inst.current_step]
        if step.worker_group != worker.worker_group:
            continue
        destination_id = assign_destination(step, store)
        if destination_id is None:
            continue
        source = stations.get(inst.location)
        if source is None:
            continue  # part is on a worker or at an unknown location
        candidates.append(
            CandidateTask(
                instance_id=inst.id,
                step_index=inst.current_step,
                priority=step.priority,
                source_station=source.id,
                destination_station=destination_id,
                source_pose=source.pose,
                destination_pose=stations[destination_id].pose,
                created_at=inst.created_at,
            )
        )
    return candidates


def rank(candidates: list[CandidateTask], worker: Worker) -> list[CandidateTask]:
    """Total order: priority desc, distance to pickup asc, age asc, id asc."""
    return sorted(
        candidates,
        key=lambda c: (
            -c.priority,
            pose_distance(worker.pose, c.source_pose),
            c.created_at,
            c.instance_id,
        ),
    )


# -- claiming -------------------------------------------------------------------

def cas_update(
    store: DocumentStore,
    collection: str,
    doc_id: str,
    mutate: Callable[[dict[str, Any]], dict[str, Any] | None],
) -> dict[str, Any] | None:
    """Read-modify-write with bounded retries. ``mutate`` returns the new body
    or None to abort; the final committed body (or None) is returned."""
    for _ in range(_CAS_ATTEMPTS):
        try:
            doc = store.get(collection, doc_id)
        except NotFound:
            return None
        new_body = mutate(dict(doc.body))
        if new_body is None:
            return None
        try:
            store.put(collection, doc_id, new_body, expected_version=doc.version)
            return new_body
        except VersionConflict:
            continue
    log.warning("CAS retry budget exhausted for %s/%s", collection, doc_id)
    return None


def _reserve_station(store: DocumentStore, station_id: str) -> dict[str, Any] | None:
    def mutate(body: dict[str, Any]) -> dict[str, Any] | None:
        if body["state"] == "down" or body["occupancy"] >= body["capacity"]:
            return None
        body["occupancy"] += 1
        body["state"] = derive_station_state(body["occupancy"], body["capacity"], down=False).value
        return body

    return cas_update(store, "workstations", station_id, mutate)


def release_station(store: DocumentStore, station_id: str) -> dict[str, Any] | None:
    """Give back one reserved slot; down stations stay down."""

    def mutate(body: dict[str, Any]) -> dict[str, Any] | None:
        if body["occupancy"] <= 0:
            return None
        body["occupancy"] -= 1
        if body["state"] != "down":
            body["state"] = derive_station_state(body["occupancy"], body["capacity"], down=False).value
        return body

    return cas_update(store, "workstations", station_id, mutate)


def _payload_for_job(job: Job, store: DocumentStore) -> JobPayload:
    """Rebuild the poll payload for an existing job (idempotent re-poll)."""
    operation_name = None
    part_number = None
    try:
        inst = RoutingInstance.from_dict(store.get("instances", job.instance_id).body)
        routing = Routing.from_dict(store.get("routings", inst.routing_id).body)
        part_number = routing.part_number
        if 0 <= job.step_index < len(routing.steps):
            operation_name = routing.steps[job.step_index].operation_name
    except NotFound:
        pass
    return JobPayload(
        status=1,
        job_id=job.id,
        source=job.source,
        destination=job.destination,
        operation_name=operation_name,
        instance_id=job.instance_id,
        part_number=part_number,
    )


def open_job_for(worker_id: str, store: DocumentStore) -> Job | None:
    for doc in store.query("jobs", where={"worker_id": worker_id}):
        job = Job.from_dict(doc.body)
        if job.phase is not JobPhase.DELIVERED:
            return job
    return None


def _try_claim(
    candidate: CandidateTask,
    worker: Worker,
    store: DocumentStore,
    now: float,
    id_factory: IdFactory,
) -> Job | None:
    """Reserve the destination slot, then CAS the instance from awaiting to
    in_transit. Any failure rolls the reservation back and reports None."""
    reserved = _reserve_station(store, candidate.destination_station)
    if reserved is None:
        return None

    job_id = id_factory("job")

    def mutate(body: dict[str, Any]) -> dict[str, Any] | None:
        if (
            body["phase"] != InstancePhase.AWAITING_TRANSPORT.value
            or body["current_step"] != candidate.step_index
        ):
            return None
        body["phase"] = InstancePhase.IN_TRANSIT.value
        return body

    # Single CAS attempt on the instance: a conflict means someone else claimed it.
    try:
        doc = store.get("instances", candidate.instance_id)
        new_body = mutate(dict(doc.body))
        if new_body is not None:
            store.put("instances", candidate.instance_id, new_body, expected_version=doc.version)
        else:
            release_station(store, candidate.destination_station)
            return None
    except (NotFound, VersionConflict):
        release_station(store, candidate.destination_station)
        return None

    job = Job(
        id=job_id,
        worker_id=worker.id,
        instance_id=candidate.instance_id,
        step_index=candidate.step_index,
        source=candidate.source_pose,
        destination=candidate.destination_pose,
        source_station=candidate.source_station,
        destination_station=candidate.destination_station,
        assigned_at=now,
        phase=JobPhase.ASSIGNED,
    )
    store.put("jobs", job.id, job.to_dict(), expected_version=None)

    store.append_audit(
        EventKind.WORKSTATION_STATE,
        candidate.destination_station,
        {
            "station_id": candidate.destination_station,
            "action": "reserved",
            "occupancy": reserved["occupancy"],
            "capacity": reserved["capacity"],
            "state": reserved["state"],
        },
        now,
    )
    return job


def set_worker_status(
    store: DocumentStore, worker_id: str, status: WorkerStatus
) -> dict[str, Any] | None:
    return cas_update(
        store,
        "workers",
        worker_id,
        lambda body: {**body, "status": status.value},
    )


def select_next_job(
    worker_key: str,
    store: DocumentStore,
    cfg: SchedulerConfig,
    now: float,
    id_factory: IdFactory,
) -> JobPayload:
    """Answer one worker poll.

    Decision sequence: unknown key -> no job; already holding a job -> the
    same payload again; battery below threshold -> no job and the worker is
    parked charging; otherwise rank the eligible tasks and claim the best one,
    moving to the next candidate on any claim conflict, re-evaluating the
    world up to ``claim_retry_limit`` times.
    """
    try:
        worker_doc = store.get("workers", worker_key)
    except NotFound:
        return JobPayload(status=0)
    worker = Worker.from_dict(worker_doc.body)

    held = open_job_for(worker.id, store)
    if held is not None:
        return _payload_for_job(held, store)

    if worker.battery < cfg.battery_threshold:
        if worker.status is not WorkerStatus.CHARGING:
            set_worker_status(store, worker.id, WorkerStatus.CHARGING)
            store.append_audit(
                EventKind.WORKER_ACTIVITY,
                worker.id,
                {
                    "worker_id": worker.id,
                    "action": "battery_low",
                    "battery": worker.battery,
                    "status": WorkerStatus.CHARGING.value,
                },
                now,
            )
        return JobPayload(status=0)

    if worker.status in (WorkerStatus.ASSIGNED, WorkerStatus.WORKING):
        # Holds no open job (checked above): a poll raced us or a claim was
        # orphaned. Reset to idle and let the worker poll again.
        try:
            store.put(
                "workers",
                worker.id,
                {**worker_doc.body, "status": WorkerStatus.IDLE.value},
                expected_version=worker_doc.version,
            )
        except (VersionConflict, NotFound):
            pass
        return JobPayload(status=0)

    # Claim ticket: flip this worker to assigned before touching any instance,
    # so concurrent polls with the same key cannot end up with two jobs.
    was_resting = worker.status in (WorkerStatus.CHARGING, WorkerStatus.OFFLINE)
    try:
        store.put(
            "workers",
            worker.id,
            {**worker_doc.body, "status": WorkerStatus.ASSIGNED.value},
            expected_version=worker_doc.version,
        )
    except (VersionConflict, NotFound):
        return JobPayload(status=0)

    job: Job | None = None
    claimed: CandidateTask | None = None
    for _ in range(cfg.claim_retry_limit):
        candidates = rank(eligible_tasks(worker, store), worker)
        if not candidates:
            break
        for candidate in candidates:
            job = _try_claim(candidate, worker, store, now, id_factory)
            if job is not None:
                claimed = candidate
                break
        if job is not None:
            break

    if job is None or claimed is None:
        set_worker_status(store, worker.id, WorkerStatus.IDLE)
        if was_resting:
            # Make the charging/offline -> idle recovery visible to projections.
            store.append_audit(
                EventKind.WORKER_ACTIVITY,
                worker.id,
                {
                    "worker_id": worker.id,
                    "action": "status_changed",
                    "status": WorkerStatus.IDLE.value,
                },
                now,
            )
        return JobPayload(status=0)

    payload = _payload_for_job(job, store)
    store.append_audit(
        EventKind.TASK_ASSIGNED,
        job.instance_id,
        {
            "instance_id": job.instance_id,
            "step_index": job.step_index,
            "worker_id": worker.id,
            "job_id": job.id,
            "source_station": job.source_station,
            "destination_station": job.destination_station,
            "priority": claimed.priority,
            "operation_name": payload.operation_name,
        },
        now,
    )
    return payload


def reclaim_stale_jobs(store: DocumentStore, cfg: SchedulerConfig, now: float) -> list[str]:
    """Cancel undelivered jobs whose worker has gone silent.

    The instance returns to the available pool at its pickup station, the
    destination reservation is released, and the worker is marked offline.
    """
    reclaimed: list[str] = []
    cutoff = now - cfg.stale_job_timeout
    for doc in store.query("jobs"):
        job = Job.from_dict(doc.body)
        if job.phase is JobPhase.DELIVERED:
            continue
        try:
            worker = Worker.from_dict(store.get("workers", job.worker_id).body)
        except NotFound:
            worker = None
        if worker is not None and worker.last_seen >= cutoff:
            continue

        def back_to_pool(body: dict[str, Any]) -> dict[str, Any] | None:
            if body["phase"] != InstancePhase.IN_TRANSIT.value:
                return None
            body["phase"] = InstancePhase.AWAITING_TRANSPORT.value
            body["location"] = job.source_station
            return body

        if cas_update(store, "instances", job.instance_id, back_to_pool) is None:
            continue
        released = release_station(store, job.destination_station)
        try:
            store.delete("jobs", job.id)
        except NotFound:
            continue
        if worker is not None:
            set_worker_status(store, worker.id, WorkerStatus.OFFLINE)
        if released is not None:
            store.append_audit(
                EventKind.WORKSTATION_STATE,
                job.destination_station,
                {
                    "station_id": job.destination_station,
                    "action": "released",
                    "occupancy": released["occupancy"],
                    "capacity": released["capacity"],
                    "state": released["state"],
                },
                now,
            )
        store.append_audit(
            EventKind.WORKER_ACTIVITY,
            job.worker_id,
            {
                "worker_id": job.worker_id,
                "action": "job_reclaimed",
                "job_id": job.id,
                "instance_id": job.instance_id,
                "step_index": job.step_index,
                "status": WorkerStatus.OFFLINE.value,
            },
            now,
        )
        reclaimed.append(job.id)
    return reclaimed
