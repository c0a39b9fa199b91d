"""Replay audit events into derived views.

The audit log is the system's history of record; these folds rebuild instance
phases, per-station occupancy timelines, and per-instance step traces from it.
Used by the run report, by invariant checks in tests, and mirrored by the
dashboard's client-side projection.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

from .domain import AuditEvent, EventKind


@dataclass
class StepTrace:
    """What one instance did at one step, as seen in the log."""

    step_index: int
    worker_id: str
    source_station: str
    destination_station: str
    assigned_at: float
    station_type: str | None = None
    processing_started_at: float | None = None
    processing_finished_at: float | None = None


@dataclass
class Projection:
    instance_phase: dict[str, str] = field(default_factory=dict)
    instance_steps: dict[str, list[StepTrace]] = field(default_factory=dict)
    occupancy: dict[str, int] = field(default_factory=dict)
    capacity: dict[str, int] = field(default_factory=dict)
    max_occupancy: dict[str, int] = field(default_factory=dict)
    busy_seconds: dict[str, float] = field(default_factory=dict)
    first_activation: float | None = None
    last_completion: float | None = None
    completed_instances: int = 0
    worker_status: dict[str, str] = field(default_factory=dict)
    assignments: list[tuple[str, int]] = field(default_factory=list)


def project(events: Iterable[AuditEvent]) -> Projection:
    """Left-fold the event list into a Projection. Pure: same events, same result."""
    view = Projection()
    for event in events:
        p = event.payload
        if event.kind is EventKind.ROUTING_ACTIVATED:
            if view.first_activation is None:
                view.first_activation = event.timestamp
            for instance_id in p.get("instance_ids", []):
                view.instance_phase[instance_id] = "awaiting_transport"
                view.instance_steps.setdefault(instance_id, [])
        elif event.kind is EventKind.TASK_ASSIGNED:
            instance_id = p["instance_id"]
            view.instance_phase[instance_id] = "in_transit"
            view.assignments.append((instance_id, p["step_index"]))
            view.instance_steps.setdefault(instance_id, []).append(
                StepTrace(
                    step_index=p["step_index"],
                    worker_id=p["worker_id"],
                    source_station=p["source_station"],
                    destination_station=p["destination_station"],
                    assigned_at=event.timestamp,
                )
            )
            view.worker_status[p["worker_id"]] = "assigned"
        elif event.kind is EventKind.WORKSTATION_STATE:
            station_id = p["station_id"]
            view.capacity[station_id] = p.get("capacity", view.capacity.get(station_id, 0))
            view.occupancy[station_id] = p.get("occupancy", view.occupancy.get(station_id, 0))
            view.max_occupancy[station_id] = max(
                view.max_occupancy.get(station_id, 0), view.occupancy[station_id]
            )
            action = p.get("action")
            instance_id = p.get("instance_id")
            if action == "processing_started" and instance_id:
                view.instance_phase[instance_id] = "processing"
                steps = view.instance_steps.setdefault(instance_id, [])
                for trace in reversed(steps):
                    if trace.step_index == p.get("step_index"):
                        trace.processing_started_at = event.timestamp
                        trace.station_type = p.get("station_type")
                        break
            elif action == "processing_finished" and instance_id:
                next_phase = p.get("next_phase", "awaiting_transport")
                view.instance_phase[instance_id] = next_phase
                steps = view.instance_steps.setdefault(instance_id, [])
                for trace in reversed(steps):
                    if trace.step_index == p.get("step_index"):
                        trace.processing_finished_at = event.timestamp
                        if trace.processing_started_at is not None:
                            duration = event.timestamp - trace.processing_started_at
                            view.busy_seconds[station_id] = (
                                view.busy_seconds.get(station_id, 0.0) + duration
                            )
                        break
        elif event.kind is EventKind.ROUTING_COMPLETED:
            instance_id = p["instance_id"]
            view.instance_phase[instance_id] = "completed"
            view.completed_instances += 1
            if view.last_completion is None or event.timestamp > view.last_completion:
                view.last_completion = event.timestamp
        elif event.kind is EventKind.RESOURCE_CHANGED:
            if p.get("collection") == "workers":
                if p.get("action") == "deleted":
                    view.worker_status.pop(p.get("id", ""), None)
                elif "body" in p:
                    view.worker_status[p["id"]] = p["body"].get("status", "idle")
        elif event.kind is EventKind.WORKER_ACTIVITY:
            action = p.get("action")
            worker_id = p.get("worker_id", event.subject_id)
            if action == "progress":
                view.worker_status[worker_id] = "working"
            elif action == "job_completed":
                view.worker_status[worker_id] = "idle"
            elif action == "battery_low":
                view.worker_status[worker_id] = "charging"
            elif action == "job_reclaimed":
                view.worker_status[worker_id] = "offline"
                instance_id = p.get("instance_id")
                if instance_id:
                    view.instance_phase[instance_id] = "awaiting_transport"
            elif action == "status_changed":
                view.worker_status[worker_id] = p.get("status", "idle")
            elif action == "instance_cancelled":
                view.instance_phase.pop(p.get("instance_id", ""), None)
                if p.get("worker_id"):
                    view.worker_status[p["worker_id"]] = p.get("status", "idle")
    return view


def duplicate_assignments(events: Iterable[AuditEvent]) -> list[tuple[str, int]]:
    """(instance_id, step_index) pairs assigned more than once. A reclaimed
    step may legitimately be re-assigned, so reclaims reset the count."""
    counts: dict[tuple[str, int], int] = {}
    duplicates: list[tuple[str, int]] = []
    for event in events:
        if event.kind is EventKind.TASK_ASSIGNED:
            key = (event.payload["instance_id"], event.payload["step_index"])
            counts[key] = counts.get(key, 0) + 1
            if counts[key] > 1:
                duplicates.append(key)
        elif (
            event.kind is EventKind.WORKER_ACTIVITY
            and event.payload.get("action") == "job_reclaimed"
        ):
            key = (event.payload.get("instance_id"), event.payload.get("step_index"))
            if key in counts:
                counts[key] -= 1
    return duplicates


def capacity_violations(events: Iterable[AuditEvent]) -> list[str]:
    """Stations whose audited occupancy ever exceeded capacity or went negative."""
    problems: list[str] = []
    for event in events:
        if event.kind is not EventKind.WORKSTATION_STATE:
            continue
        p = event.payload
        occupancy = p.get("occupancy")
        capacity = p.get("capacity")
        if occupancy is None or capacity is None:
            continue
        if occupancy > capacity or occupancy < 0:
            problems.append(
                f"seq {event.seq}: station {p.get('station_id')} occupancy "
                f"{occupancy}/{capacity}"
            )
    return problems
