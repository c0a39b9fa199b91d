"""Adaptive goal management: a worker-pull fleet manager with a deterministic
prioritization scheduler, versioned document persistence with an audit trail,
an HTTP API, and a discrete-event fleet simulator."""

from .clock import SimClock, WallClock, SIM_EPOCH
from .domain import (
    AuditEvent,
    EventKind,
    InstancePhase,
    Job,
    JobPayload,
    JobPhase,
    Pose3,
    Routing,
    RoutingInstance,
    RoutingStep,
    StationState,
    Worker,
    WorkerStatus,
    Workstation,
    advance_step,
    pose_distance,
    validate_routing,
)
from .scheduler import CandidateTask, SchedulerConfig, assign_destination, eligible_tasks, rank
from .service import AgmService, SequentialIds, ValidationFailure
from .store import DocumentStore, Document

__version__ = "0.1.0"
