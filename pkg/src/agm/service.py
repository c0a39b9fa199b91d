"""Application operations behind the HTTP surface.

AgmService owns a store handle, a clock, and the scheduler config, and exposes
every operation the endpoints need: the worker-pull protocol, resource CRUD,
routing activation, interventions, and the processing-timer pump. The HTTP
layer is a thin translation on top; the simulator can drive the same object
in-process with a simulated clock, which is what makes runs reproducible.

Workstation processing is modeled with a persisted deadline on the instance
(``processing_until``) instead of live timer objects, so a restarted server
picks up exactly where the previous process stopped.
"""

from __future__ import annotations

import threading
import uuid
from typing import Any, Callable

from . import scheduler as sched
from .clock import WallClock
from .domain import (
    AuditEvent,
    EventKind,
    InstancePhase,
    Job,
    JobPhase,
    JOB_PHASE_ORDER,
    Pose3,
    Routing,
    RoutingInstance,
    StateConflictError,
    StationState,
    Worker,
    WorkerStatus,
    Workstation,
    advance_step,
    derive_station_state,
    ts_to_rfc3339,
    validate_routing,
)
from .scheduler import SchedulerConfig, release_station
from .store import DocumentStore, NotFound, VersionConflict


class ValidationFailure(ValueError):
    """A request body failed domain validation; carries the violation list."""

    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = violations


def random_ids(kind: str) -> str:
    prefix = {"worker": "w", "workstation": "s", "routing": "r", "instance": "i", "job": "j"}
    return f"{prefix.get(kind, 'x')}-{uuid.uuid4().hex[:12]}"


class SequentialIds:
    """Deterministic id factory for simulation runs and golden tests."""

    def __init__(self) -> None:
        self._counters: dict[str, int] = {}
        self._lock = threading.Lock()

    def __call__(self, kind: str) -> str:
        prefix = {"worker": "w", "workstation": "s", "routing": "r", "instance": "i", "job": "j"}
        with self._lock:
            n = self._counters.get(kind, 0) + 1
            self._counters[kind] = n
        return f"{prefix.get(kind, 'x')}-{n:04d}"


_MODEL = {
    "workers": Worker,
    "workstations": Workstation,
    "routings": Routing,
    "instances": RoutingInstance,
    "jobs": Job,
}


class AgmService:
    """All fleet-management operations over one store handle."""

    def __init__(
        self,
        store: DocumentStore,
        config: SchedulerConfig | None = None,
        clock: Any | None = None,
        id_factory: Callable[[str], str] | None = None,
        org_id: str = "default",
    ) -> None:
        self.store = store
        self.config = config or SchedulerConfig()
        self.clock = clock or WallClock()
        self.ids = id_factory or random_ids
        self.org_id = org_id

    def now(self) -> float:
        return self.clock.now()

    # -- worker protocol ---------------------------------------------------------

    def worker_get_next_job(self, worker_key: str) -> dict[str, Any]:
        """The poll endpoint body. Always answers; status=0 is a valid 'no work'."""
        now = self.now()
        self._touch_worker(worker_key, now)
        payload = sched.select_next_job(worker_key, self.store, self.config, now, self.ids)
        return payload.to_dict()

    def worker_job_progress(self, body: dict[str, Any]) -> dict[str, Any]:
        """Progress report: update job phase monotonically plus worker telemetry."""
        now = self.now()
        worker_key = body.get("key", "")
        job_id = body.get("job_id", "")
        self._touch_worker(worker_key, now)
        job = self._owned_job(worker_key, job_id)
        if job is None:
            return {"status": 0, "reason": "unknown job or wrong worker"}

        new_phase_raw = body.get("phase")
        try:
            new_phase = JobPhase(new_phase_raw) if new_phase_raw else job.phase
        except ValueError:
            return {"status": 0, "reason": f"unknown phase {new_phase_raw!r}"}
        if JOB_PHASE_ORDER[new_phase] < JOB_PHASE_ORDER[job.phase]:
            return {
                "status": 0,
                "reason": f"phase regression {job.phase.value} -> {new_phase.value}",
            }

        if new_phase is not job.phase:
            sched.cas_update(
                self.store, "jobs", job.id,
                lambda b: {**b, "phase": new_phase.value},
            )
            if new_phase is JobPhase.CARRYING:
                sched.cas_update(
                    self.store, "instances", job.instance_id,
                    lambda b: {**b, "location": job.worker_id}
                    if b["phase"] == InstancePhase.IN_TRANSIT.value else None,
                )

        def update_worker(w: dict[str, Any]) -> dict[str, Any]:
            if "pose" in body and body["pose"] is not None:
                w["pose"] = Pose3.from_dict(body["pose"]).to_dict()
            if "battery" in body and body["battery"] is not None:
                w["battery"] = float(body["battery"])
            if w["status"] == WorkerStatus.ASSIGNED.value:
                w["status"] = WorkerStatus.WORKING.value
            return w

        updated = sched.cas_update(self.store, "workers", worker_key, update_worker)

        event: dict[str, Any] = {
            "worker_id": worker_key,
            "action": "progress",
            "job_id": job.id,
            "instance_id": job.instance_id,
            "phase": new_phase.value,
        }
        if updated is not None:
            event["battery"] = updated["battery"]
            event["pose"] = updated["pose"]
        self.store.append_audit(EventKind.WORKER_ACTIVITY, worker_key, event, now)
        return {"status": 1}

    def worker_job_complete(self, body: dict[str, Any]) -> dict[str, Any]:
        """Close a transport: the part arrives and the station starts processing."""
        now = self.now()
        worker_key = body.get("key", "")
        job_id = body.get("job_id", "")
        self._touch_worker(worker_key, now)
        job = self._owned_job(worker_key, job_id)
        if job is None:
            return {"status": 0, "reason": "unknown job or wrong worker"}

        try:
            inst = RoutingInstance.from_dict(self.store.get("instances", job.instance_id).body)
            routing = Routing.from_dict(self.store.get("routings", inst.routing_id).body)
        except NotFound:
            return {"status": 0, "reason": "instance gone"}

        step = routing.steps[job.step_index]

        def start_processing(b: dict[str, Any]) -> dict[str, Any] | None:
            if b["phase"] != InstancePhase.IN_TRANSIT.value or b["current_step"] != job.step_index:
                return None
            b["phase"] = InstancePhase.PROCESSING.value
            b["location"] = job.destination_station
            b["processing_until"] = ts_to_rfc3339(now + step.process_duration)
            return b

        if sched.cas_update(self.store, "instances", job.instance_id, start_processing) is None:
            return {"status": 0, "reason": "job already completed"}

        sched.cas_update(
            self.store, "jobs", job.id,
            lambda b: {**b, "phase": JobPhase.DELIVERED.value},
        )
        sched.cas_update(
            self.store, "workers", worker_key,
            lambda b: {**b, "status": WorkerStatus.IDLE.value},
        )

        self.store.append_audit(
            EventKind.WORKER_ACTIVITY,
            worker_key,
            {
                "worker_id": worker_key,
                "action": "job_completed",
                "job_id": job.id,
                "instance_id": job.instance_id,
                "step_index": job.step_index,
                "station_id": job.destination_station,
            },
            now,
        )
        try:
            station = self.store.get("workstations", job.destination_station).body
        except NotFound:
            station = {"occupancy": 0, "capacity": 0, "state": "down", "station_type": ""}
        self.store.append_audit(
            EventKind.WORKSTATION_STATE,
            job.destination_station,
            {
                "station_id": job.destination_station,
                "action": "processing_started",
                "occupancy": station["occupancy"],
                "capacity": station["capacity"],
                "state": station["state"],
                "instance_id": job.instance_id,
                "step_index": job.step_index,
                "station_type": station["station_type"],
            },
            now,
        )
        self.pump_timers()  # zero-duration steps finish immediately
        return {"status": 1}

    def _owned_job(self, worker_key: str, job_id: str) -> Job | None:
        try:
            job = Job.from_dict(self.store.get("jobs", job_id).body)
        except NotFound:
            return None
        if job.worker_id != worker_key:
            return None
        return job

    def _touch_worker(self, worker_key: str, now: float) -> None:
        if not worker_key:
            return
        sched.cas_update(
            self.store, "workers", worker_key,
            lambda b: {**b, "last_seen": ts_to_rfc3339(now)},
        )

    # -- processing timers ---------------------------------------------------------

    def pump_timers(self) -> list[str]:
        """Fire every due processing deadline: advance the instance and free the
        station slot. Returns the ids of instances that moved."""
        now = self.now()
        moved: list[str] = []
        for doc in self.store.query(
            "instances", where={"phase": InstancePhase.PROCESSING.value}
        ):
            inst = RoutingInstance.from_dict(doc.body)
            if inst.processing_until is None or inst.processing_until > now:
                continue
            try:
                routing = Routing.from_dict(self.store.get("routings", inst.routing_id).body)
            except NotFound:
                continue
            try:
                advanced = advance_step(inst, routing)
            except StateConflictError:
                continue
            if advanced.phase is InstancePhase.COMPLETED:
                advanced.completed_at = inst.processing_until
            body = advanced.to_dict()
            try:
                self.store.put("instances", inst.id, body, expected_version=doc.version)
            except (VersionConflict, NotFound):
                continue
            station_id = inst.location
            released = release_station(self.store, station_id)
            fired_at = inst.processing_until
            if released is not None:
                self.store.append_audit(
                    EventKind.WORKSTATION_STATE,
                    station_id,
                    {
                        "station_id": station_id,
                        "action": "processing_finished",
                        "occupancy": released["occupancy"],
                        "capacity": released["capacity"],
                        "state": released["state"],
                        "instance_id": inst.id,
                        "step_index": inst.current_step,
                        "next_phase": advanced.phase.value,
                    },
                    fired_at,
                )
            if advanced.phase is InstancePhase.COMPLETED:
                routing_doc = self.store.get("routings", inst.routing_id)
                self.store.append_audit(
                    EventKind.ROUTING_COMPLETED,
                    inst.id,
                    {
                        "instance_id": inst.id,
                        "routing_id": inst.routing_id,
                        "part_number": routing_doc.body.get("part_number", ""),
                        "completed_at": body["completed_at"],
                    },
                    fired_at,
                )
            moved.append(inst.id)
        return moved

    def reclaim_stale(self) -> list[str]:
        return sched.reclaim_stale_jobs(self.store, self.config, self.now())

    # -- resource CRUD --------------------------------------------------------------

    def list_resources(self, collection: str) -> list[dict[str, Any]]:
        return [self._with_version(d.body, d.version) for d in self.store.query(collection)]

    def get_resource(self, collection: str, doc_id: str) -> dict[str, Any]:
        doc = self.store.get(collection, doc_id)
        return self._with_version(doc.body, doc.version)

    def create_worker(self, body: dict[str, Any]) -> dict[str, Any]:
        if not body.get("name"):
            raise ValidationFailure(["worker name is required"])
        worker = Worker(
            id=body.get("id") or self.ids("worker"),
            name=body["name"],
            worker_group=body.get("worker_group", ""),
            status=WorkerStatus(body.get("status", "idle")),
            pose=Pose3.from_dict(body.get("pose", {"x": 0, "y": 0})),
            battery=body.get("battery", 1.0),
            last_seen=self.now(),
            address=body.get("address", ""),
            port=body.get("port", 0),
        )
        self.store.put("workers", worker.id, worker.to_dict(), expected_version=None)
        self._audit_resource("workers", worker.id, "created", worker.to_dict())
        return self._with_version(worker.to_dict(), 0)

    def create_workstation(self, body: dict[str, Any]) -> dict[str, Any]:
        if not body.get("name"):
            raise ValidationFailure(["workstation name is required"])
        if not body.get("station_type"):
            raise ValidationFailure(["workstation station_type is required"])
        station = Workstation(
            id=body.get("id") or self.ids("workstation"),
            name=body["name"],
            station_type=body["station_type"],
            pose=Pose3.from_dict(body.get("pose", {"x": 0, "y": 0})),
            capacity=body.get("capacity", 1),
            state=StationState(body.get("state", "free")),
            occupancy=body.get("occupancy", 0),
        )
        self.store.put("workstations", station.id, station.to_dict(), expected_version=None)
        self._audit_resource("workstations", station.id, "created", station.to_dict())
        return self._with_version(station.to_dict(), 0)

    def create_routing(self, body: dict[str, Any]) -> dict[str, Any]:
        routing = Routing(
            id=body.get("id") or self.ids("routing"),
            part_number=body.get("part_number", ""),
            customer=body.get("customer", ""),
            steps=[self._parse_step(i, s) for i, s in enumerate(body.get("steps", []))],
            active=body.get("active", True),
        )
        violations = validate_routing(routing, self._station_types(), self._worker_groups())
        if violations:
            raise ValidationFailure(violations)
        self.store.put("routings", routing.id, routing.to_dict(), expected_version=None)
        self._audit_resource("routings", routing.id, "created", routing.to_dict())
        return self._with_version(routing.to_dict(), 0)

    def update_resource(self, collection: str, doc_id: str, body: dict[str, Any]) -> dict[str, Any]:
        """Merge-update with CAS: the body must carry the version being replaced."""
        if collection not in ("workers", "workstations", "routings"):
            raise NotFound(collection, doc_id)
        if "version" not in body:
            raise ValidationFailure(["update requires the current document version"])
        expected = body.pop("version")
        current = self.store.get(collection, doc_id)
        merged = {**current.body, **body, "id": doc_id}
        if collection == "workstations" and merged.get("state") != StationState.DOWN.value:
            merged["state"] = derive_station_state(
                merged.get("occupancy", 0), merged.get("capacity", 1), down=False
            ).value
        model = _MODEL[collection]
        value = model.from_dict(merged)
        if collection == "routings":
            violations = validate_routing(value, self._station_types(), self._worker_groups())
            if violations:
                raise ValidationFailure(violations)
        new_version = self.store.put(collection, doc_id, value.to_dict(), expected_version=expected)
        self._audit_resource(collection, doc_id, "updated", value.to_dict())
        return self._with_version(value.to_dict(), new_version)

    def delete_resource(self, collection: str, doc_id: str) -> None:
        if collection not in ("workers", "workstations", "routings"):
            raise NotFound(collection, doc_id)
        self.store.delete(collection, doc_id)
        self._audit_resource(collection, doc_id, "deleted", {})

    def _parse_step(self, index: int, raw: dict[str, Any]) -> Any:
        from .domain import RoutingStep

        return RoutingStep(
            index=raw.get("index", index),
            operation_name=raw.get("operation_name", f"step_{index}"),
            station_type=raw.get("station_type", ""),
            worker_group=raw.get("worker_group", ""),
            process_duration=raw.get("process_duration", 0.0),
            priority=raw.get("priority", 0),
        )

    def _station_types(self) -> set[str]:
        return {d.body["station_type"] for d in self.store.query("workstations")}

    def _worker_groups(self) -> set[str]:
        return {d.body["worker_group"] for d in self.store.query("workers")}

    def _with_version(self, body: dict[str, Any], version: int) -> dict[str, Any]:
        return {**body, "version": version}

    def _audit_resource(self, collection: str, doc_id: str, action: str, body: dict[str, Any]) -> None:
        payload: dict[str, Any] = {"collection": collection, "id": doc_id, "action": action}
        if body.get("name"):
            payload["name"] = body["name"]
        if action != "deleted":
            # Full body so event-stream consumers can build rows without a refetch.
            payload["body"] = body
        self.store.append_audit(EventKind.RESOURCE_CHANGED, doc_id, payload, self.now())

    # -- routing activation ------------------------------------------------------------

    def activate_routing(self, routing_id: str, quantity: int) -> list[str]:
        """Create ``quantity`` fresh instances of a routing at its entry buffer."""
        if not isinstance(quantity, int) or quantity < 1:
            raise ValueError("quantity must be an integer >= 1")
        routing = Routing.from_dict(self.store.get("routings", routing_id).body)
        violations = validate_routing(routing, self._station_types(), self._worker_groups())
        if violations:
            raise ValidationFailure(violations)
        entry_type = routing.steps[0].station_type
        entry_stations = sorted(
            d.id for d in self.store.query("workstations", where={"station_type": entry_type})
        )
        if not entry_stations:
            raise ValidationFailure([f"no workstation of type {entry_type!r} to stage parts at"])
        now = self.now()
        instance_ids: list[str] = []
        for _ in range(quantity):
            inst = RoutingInstance(
                id=self.ids("instance"),
                routing_id=routing_id,
                current_step=0,
                phase=InstancePhase.AWAITING_TRANSPORT,
                location=entry_stations[0],
                created_at=now,
            )
            self.store.put("instances", inst.id, inst.to_dict(), expected_version=None)
            instance_ids.append(inst.id)
        self.store.append_audit(
            EventKind.ROUTING_ACTIVATED,
            routing_id,
            {
                "routing_id": routing_id,
                "quantity": quantity,
                "instance_ids": instance_ids,
                "part_number": routing.part_number,
            },
            now,
        )
        return instance_ids

    # -- interventions ------------------------------------------------------------------

    def cancel_instance(self, instance_id: str) -> dict[str, Any]:
        """Remove an unfinished instance from the floor, releasing whatever it holds."""
        doc = self.store.get("instances", instance_id)
        inst = RoutingInstance.from_dict(doc.body)
        if inst.phase is InstancePhase.COMPLETED:
            raise StateConflictError(f"instance {instance_id} already completed")
        now = self.now()
        cancelled_worker: str | None = None
        if inst.phase is InstancePhase.IN_TRANSIT:
            for job_doc in self.store.query("jobs", where={"instance_id": instance_id}):
                job = Job.from_dict(job_doc.body)
                if job.phase is JobPhase.DELIVERED:
                    continue
                release_station(self.store, job.destination_station)
                self.store.delete("jobs", job.id)
                sched.set_worker_status(self.store, job.worker_id, WorkerStatus.IDLE)
                cancelled_worker = job.worker_id
        elif inst.phase is InstancePhase.PROCESSING:
            release_station(self.store, inst.location)
        self.store.delete("instances", instance_id)
        payload = {
            "action": "instance_cancelled",
            "instance_id": instance_id,
            "phase": inst.phase.value,
        }
        if cancelled_worker is not None:
            payload["worker_id"] = cancelled_worker
            payload["status"] = WorkerStatus.IDLE.value
        self.store.append_audit(EventKind.WORKER_ACTIVITY, instance_id, payload, now)
        return {"status": 1, "instance_id": instance_id}

    def set_workstation_state(self, station_id: str, state: str) -> dict[str, Any]:
        """Operator toggle: mark a station down or bring it back."""
        if state not in (StationState.DOWN.value, StationState.FREE.value):
            raise ValueError("state must be 'down' or 'free'")
        down = state == StationState.DOWN.value

        def mutate(body: dict[str, Any]) -> dict[str, Any]:
            body["state"] = derive_station_state(
                body["occupancy"], body["capacity"], down=down
            ).value
            return body

        updated = sched.cas_update(self.store, "workstations", station_id, mutate)
        if updated is None:
            raise NotFound("workstations", station_id)
        self.store.append_audit(
            EventKind.WORKSTATION_STATE,
            station_id,
            {
                "station_id": station_id,
                "action": "state_changed",
                "occupancy": updated["occupancy"],
                "capacity": updated["capacity"],
                "state": updated["state"],
            },
            self.now(),
        )
        doc = self.store.get("workstations", station_id)
        return self._with_version(doc.body, doc.version)

    # -- events ----------------------------------------------------------------------------

    def read_events(self, since_seq: int = 0) -> list[AuditEvent]:
        return self.store.read_audit(since_seq)
