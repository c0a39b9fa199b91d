"""Core domain model: poses, workers, workstations, routings, jobs, audit events.

Pure values and pure functions only. Everything here is safe to share between
threads; mutation happens by building new values. JSON wire forms use the
field names below verbatim, enums as lowercase snake_case strings, and
timestamps as RFC 3339 UTC strings.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from enum import Enum
from typing import Any

TWO_PI = 2.0 * math.pi


class DomainValidationError(ValueError):
    """A value violates a domain invariant."""


class StateConflictError(RuntimeError):
    """An operation was applied to a value in the wrong lifecycle phase."""


# -- timestamps ---------------------------------------------------------------

def ts_to_rfc3339(ts: float) -> str:
    """Epoch seconds to an RFC 3339 UTC string with microsecond precision."""
    dt = datetime.fromtimestamp(ts, tz=timezone.utc)
    return dt.isoformat(timespec="microseconds").replace("+00:00", "Z")


def rfc3339_to_ts(text: str) -> float:
    """RFC 3339 string back to epoch seconds. Accepts 'Z' or explicit offsets."""
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        raise DomainValidationError(f"timestamp must carry a UTC offset: {text!r}")
    return dt.timestamp()


def quantize_ts(ts: float) -> float:
    """Round epoch seconds to the microsecond grid used on the wire."""
    return rfc3339_to_ts(ts_to_rfc3339(ts))


def _opt_ts_to_str(ts: float | None) -> str | None:
    return None if ts is None else ts_to_rfc3339(ts)


def _opt_str_to_ts(text: str | None) -> float | None:
    return None if text is None else rfc3339_to_ts(text)


# -- enums --------------------------------------------------------------------

class WorkerStatus(str, Enum):
    IDLE = "idle"
    ASSIGNED = "assigned"
    WORKING = "working"
    CHARGING = "charging"
    OFFLINE = "offline"


class StationState(str, Enum):
    FREE = "free"
    OCCUPIED = "occupied"
    DOWN = "down"


class InstancePhase(str, Enum):
    AWAITING_TRANSPORT = "awaiting_transport"
    IN_TRANSIT = "in_transit"
    PROCESSING = "processing"
    COMPLETED = "completed"


class JobPhase(str, Enum):
    ASSIGNED = "assigned"
    EN_ROUTE_TO_SOURCE = "en_route_to_source"
    CARRYING = "carrying"
    DELIVERED = "delivered"


JOB_PHASE_ORDER = {
    JobPhase.ASSIGNED: 0,
    JobPhase.EN_ROUTE_TO_SOURCE: 1,
    JobPhase.CARRYING: 2,
    JobPhase.DELIVERED: 3,
}


class EventKind(str, Enum):
    TASK_ASSIGNED = "task_assigned"
    WORKER_ACTIVITY = "worker_activity"
    WORKSTATION_STATE = "workstation_state"
    ROUTING_ACTIVATED = "routing_activated"
    ROUTING_COMPLETED = "routing_completed"
    # Administrative create/update/delete of workers, workstations and
    # routings; keeps every state-changing endpoint auditable.
    RESOURCE_CHANGED = "resource_changed"


# -- geometry -----------------------------------------------------------------

def normalize_yaw(yaw: float) -> float:
    """Wrap an angle into [-pi, pi)."""
    wrapped = math.fmod(yaw + math.pi, TWO_PI)
    if wrapped < 0:
        wrapped += TWO_PI
    return wrapped - math.pi


@dataclass(frozen=True)
class Pose3:
    """Position in meters plus planar heading in radians, yaw in [-pi, pi)."""

    x: float
    y: float
    z: float = 0.0
    yaw: float = 0.0

    def __post_init__(self) -> None:
        for name in ("x", "y", "z", "yaw"):
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or not math.isfinite(value):
                raise DomainValidationError(f"Pose3.{name} must be finite, got {value!r}")
        object.__setattr__(self, "yaw", normalize_yaw(float(self.yaw)))
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "z", float(self.z))

    def to_dict(self) -> dict[str, float]:
        return {"x": self.x, "y": self.y, "z": self.z, "yaw": self.yaw}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> Pose3:
        return cls(
            x=data["x"],
            y=data["y"],
            z=data.get("z", 0.0),
            yaw=data.get("yaw", 0.0),
        )


def pose_distance(a: Pose3, b: Pose3) -> float:
    """Euclidean distance over (x, y, z); yaw is ignored."""
    return math.sqrt((a.x - b.x) ** 2 + (a.y - b.y) ** 2 + (a.z - b.z) ** 2)


# -- workers ------------------------------------------------------------------

@dataclass
class Worker:
    """An agent (robot, human, equipment) that polls the server for jobs."""

    id: str
    name: str
    worker_group: str
    status: WorkerStatus = WorkerStatus.IDLE
    pose: Pose3 = field(default_factory=lambda: Pose3(0.0, 0.0, 0.0, 0.0))
    battery: float = 1.0
    last_seen: float = 0.0
    address: str = ""
    port: int = 0

    def __post_init__(self) -> None:
        if not self.id:
            raise DomainValidationError("Worker.id must be non-empty")
        if not 0.0 <= self.battery <= 1.0:
            raise DomainValidationError(f"Worker.battery must be in [0,1], got {self.battery}")
        self.status = WorkerStatus(self.status)

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "name": self.name,
            "worker_group": self.worker_group,
            "status": self.status.value,
            "pose": self.pose.to_dict(),
            "battery": self.battery,
            "last_seen": ts_to_rfc3339(self.last_seen),
            "address": self.address,
            "port": self.port,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> Worker:
        return cls(
            id=data["id"],
            name=data["name"],
            worker_group=data["worker_group"],
            status=WorkerStatus(data.get("status", "idle")),
            pose=Pose3.from_dict(data.get("pose", {"x": 0, "y": 0})),
            battery=data.get("battery", 1.0),
            last_seen=rfc3339_to_ts(data["last_seen"]) if "last_seen" in data else 0.0,
            address=data.get("address", ""),
            port=data.get("port", 0),
        )


# -- workstations ---------------------------------------------------------------

def derive_station_state(occupancy: int, capacity: int, down: bool) -> StationState:
    """State implied by occupancy, unless the station is administratively down."""
    if down:
        return StationState.DOWN
    return StationState.OCCUPIED if occupancy >= capacity else StationState.FREE


@dataclass
class Workstation:
    """A named, posed processing location with capacity and operational state."""

    id: str
    name: str
    station_type: str
    pose: Pose3
    capacity: int = 1
    state: StationState = StationState.FREE
    occupancy: int = 0

    def __post_init__(self) -> None:
        if self.capacity < 1:
            raise DomainValidationError(f"Workstation.capacity must be >= 1, got {self.capacity}")
        if not 0 <= self.occupancy <= self.capacity:
            raise DomainValidationError(
                f"Workstation.occupancy must be in [0,{self.capacity}], got {self.occupancy}"
            )
        self.state = StationState(self.state)
        # free/occupied must mirror occupancy; down overrides both.
        if self.state is not StationState.DOWN:
            expected = derive_station_state(self.occupancy, self.capacity, down=False)
            if self.state is not expected:
                raise DomainValidationError(
                    f"Workstation.state {self.state.value} inconsistent with "
                    f"occupancy {self.occupancy}/{self.capacity}"
                )

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "name": self.name,
            "station_type": self.station_type,
            "pose": self.pose.to_dict(),
            "capacity": self.capacity,
            "state": self.state.value,
            "occupancy": self.occupancy,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> Workstation:
        return cls(
            id=data["id"],
            name=data["name"],
            station_type=data["station_type"],
            pose=Pose3.from_dict(data["pose"]),
            capacity=data.get("capacity", 1),
            state=StationState(data.get("state", "free")),
            occupancy=data.get("occupancy", 0),
        )


# -- routings -------------------------------------------------------------------

@dataclass(frozen=True)
class RoutingStep:
    """One step of a recipe: the station type that performs it and the worker
    group required for the transport leg that feeds it."""

    index: int
    operation_name: str
    station_type: str
    worker_group: str
    process_duration: float = 0.0
    priority: int = 0

    def __post_init__(self) -> None:
        if self.process_duration < 0:
            raise DomainValidationError(
                f"RoutingStep.process_duration must be >= 0, got {self.process_duration}"
            )

    def to_dict(self) -> dict[str, Any]:
        return {
            "index": self.index,
            "operation_name": self.operation_name,
            "station_type": self.station_type,
            "worker_group": self.worker_group,
            "process_duration": self.process_duration,
            "priority": self.priority,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> RoutingStep:
        return cls(
            index=data["index"],
            operation_name=data["operation_name"],
            station_type=data["station_type"],
            worker_group=data["worker_group"],
            process_duration=data.get("process_duration", 0.0),
            priority=data.get("priority", 0),
        )


@dataclass
class Routing:
    """A reusable ordered recipe; activating it creates executable instances."""

    id: str
    part_number: str
    customer: str
    steps: list[RoutingStep]
    active: bool = True

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "part_number": self.part_number,
            "customer": self.customer,
            "steps": [s.to_dict() for s in self.steps],
            "active": self.active,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> Routing:
        return cls(
            id=data["id"],
            part_number=data["part_number"],
            customer=data.get("customer", ""),
            steps=[RoutingStep.from_dict(s) for s in data["steps"]],
            active=data.get("active", True),
        )


def validate_routing(
    routing: Routing,
    known_station_types: set[str],
    known_worker_groups: set[str],
) -> list[str]:
    """Return every violated invariant; the routing is valid iff the list is empty.

    Violations are data, not faults: empty steps, non-contiguous indices,
    unknown station types, unknown worker groups, negative durations.
    """
    violations: list[str] = []
    if not routing.steps:
        violations.append("empty steps")
        return violations
    for position, step in enumerate(routing.steps):
        if step.index != position:
            violations.append(
                f"step indices not contiguous: expected {position} at position "
                f"{position}, got {step.index}"
            )
            break
    for step in routing.steps:
        if step.station_type not in known_station_types:
            violations.append(
                f"step {step.index}: unknown station_type {step.station_type!r}"
            )
        if step.worker_group not in known_worker_groups:
            violations.append(
                f"step {step.index}: unknown worker_group {step.worker_group!r}"
            )
        if step.process_duration < 0:
            violations.append(f"step {step.index}: negative process_duration")
    return violations


# -- routing instances ------------------------------------------------------------

@dataclass
class RoutingInstance:
    """One activated execution of a routing (a production order).

    current_step points at the step being fulfilled next: awaiting_transport
    means the part still needs the transport leg to that step's station,
    processing means the station is working on it. processing_until persists
    the timer deadline so a restarted server resumes where it left off.
    """

    id: str
    routing_id: str
    current_step: int = 0
    phase: InstancePhase = InstancePhase.AWAITING_TRANSPORT
    location: str = ""
    created_at: float = 0.0
    completed_at: float | None = None
    processing_until: float | None = None

    def __post_init__(self) -> None:
        if self.current_step < 0:
            raise DomainValidationError("RoutingInstance.current_step must be >= 0")
        self.phase = InstancePhase(self.phase)

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "routing_id": self.routing_id,
            "current_step": self.current_step,
            "phase": self.phase.value,
            "location": self.location,
            "created_at": ts_to_rfc3339(self.created_at),
            "completed_at": _opt_ts_to_str(self.completed_at),
            "processing_until": _opt_ts_to_str(self.processing_until),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> RoutingInstance:
        return cls(
            id=data["id"],
            routing_id=data["routing_id"],
            current_step=data.get("current_step", 0),
            phase=InstancePhase(data.get("phase", "awaiting_transport")),
            location=data.get("location", ""),
            created_at=rfc3339_to_ts(data["created_at"]) if "created_at" in data else 0.0,
            completed_at=_opt_str_to_ts(data.get("completed_at")),
            processing_until=_opt_str_to_ts(data.get("processing_until")),
        )


def advance_step(inst: RoutingInstance, routing: Routing) -> RoutingInstance:
    """Move an instance past its just-finished processing step.

    Precondition: the instance is in the processing phase (the caller decides
    when processing has actually finished, e.g. via a timer). Returns a new
    value; never mutates the input.
    """
    if inst.phase is not InstancePhase.PROCESSING:
        raise StateConflictError(
            f"cannot advance instance {inst.id} in phase {inst.phase.value}"
        )
    last_index = len(routing.steps) - 1
    if inst.current_step < last_index:
        return replace(
            inst,
            current_step=inst.current_step + 1,
            phase=InstancePhase.AWAITING_TRANSPORT,
            processing_until=None,
        )
    return replace(
        inst,
        phase=InstancePhase.COMPLETED,
        processing_until=None,
    )


# -- jobs ---------------------------------------------------------------------

@dataclass
class Job:
    """A single transport assignment binding one worker to one instance step."""

    id: str
    worker_id: str
    instance_id: str
    step_index: int
    source: Pose3
    destination: Pose3
    source_station: str
    destination_station: str
    assigned_at: float = 0.0
    phase: JobPhase = JobPhase.ASSIGNED

    def __post_init__(self) -> None:
        self.phase = JobPhase(self.phase)

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "worker_id": self.worker_id,
            "instance_id": self.instance_id,
            "step_index": self.step_index,
            "source": self.source.to_dict(),
            "destination": self.destination.to_dict(),
            "source_station": self.source_station,
            "destination_station": self.destination_station,
            "assigned_at": ts_to_rfc3339(self.assigned_at),
            "phase": self.phase.value,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> Job:
        return cls(
            id=data["id"],
            worker_id=data["worker_id"],
            instance_id=data["instance_id"],
            step_index=data["step_index"],
            source=Pose3.from_dict(data["source"]),
            destination=Pose3.from_dict(data["destination"]),
            source_station=data["source_station"],
            destination_station=data["destination_station"],
            assigned_at=rfc3339_to_ts(data["assigned_at"]) if "assigned_at" in data else 0.0,
            phase=JobPhase(data.get("phase", "assigned")),
        )


@dataclass
class JobPayload:
    """Wire answer to a worker poll. status=1 carries a job, status=0 does not."""

    status: int
    job_id: str | None = None
    source: Pose3 | None = None
    destination: Pose3 | None = None
    operation_name: str | None = None
    instance_id: str | None = None
    part_number: str | None = None

    def __post_init__(self) -> None:
        if self.status not in (0, 1):
            raise DomainValidationError(f"JobPayload.status must be 0 or 1, got {self.status}")
        if self.status == 1 and (self.job_id is None or self.source is None or self.destination is None):
            raise DomainValidationError("JobPayload with status=1 must carry a job")

    def to_dict(self) -> dict[str, Any]:
        if self.status == 0:
            return {"status": 0}
        return {
            "status": 1,
            "job_id": self.job_id,
            "source": self.source.to_dict(),
            "destination": self.destination.to_dict(),
            "operation_name": self.operation_name,
            "instance_id": self.instance_id,
            "part_number": self.part_number,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> JobPayload:
        if data.get("status") == 0:
            return cls(status=0)
        return cls(
            status=data["status"],
            job_id=data["job_id"],
            source=Pose3.from_dict(data["source"]),
            destination=Pose3.from_dict(data["destination"]),
            operation_name=data.get("operation_name"),
            instance_id=data.get("instance_id"),
            part_number=data.get("part_number"),
        )


NO_JOB = JobPayload(status=0)


# -- audit events -----------------------------------------------------------------

@dataclass(frozen=True)
class AuditEvent:
    """Append-only record of one decision; seq is assigned by the log."""

    seq: int
    timestamp: float
    kind: EventKind
    subject_id: str
    payload: dict[str, Any]

    def to_dict(self) -> dict[str, Any]:
        return {
            "seq": self.seq,
            "timestamp": ts_to_rfc3339(self.timestamp),
            "kind": self.kind.value,
            "subject_id": self.subject_id,
            "payload": self.payload,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> AuditEvent:
        return cls(
            seq=data["seq"],
            timestamp=rfc3339_to_ts(data["timestamp"]),
            kind=EventKind(data["kind"]),
            subject_id=data["subject_id"],
            payload=data.get("payload", {}),
        )
