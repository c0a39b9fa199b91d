"""Scenario files: the floor layout, recipes, fleet, and activation schedule.

A scenario is a JSON document naming workstations (with poses and capacities),
routings, workers (with motion and battery parameters), and timed activations.
Bundled scenarios live in ``agm/scenarios``; ``load_scenario`` accepts either a
file path or a bare bundled name like ``single_mir``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

from .domain import Pose3, Routing, RoutingStep, validate_routing


class ScenarioError(ValueError):
    """The scenario file is unreadable or internally inconsistent."""


@dataclass(frozen=True)
class ScenarioStation:
    id: str
    name: str
    station_type: str
    pose: Pose3
    capacity: int = 1


@dataclass(frozen=True)
class ScenarioWorker:
    name: str
    worker_group: str
    start_pose: Pose3
    speed: float = 1.0
    battery_start: float = 1.0
    battery_drain_per_meter: float = 0.0


@dataclass(frozen=True)
class Activation:
    routing_id: str
    quantity: int
    at_time: float = 0.0


@dataclass
class Scenario:
    name: str
    stations: list[ScenarioStation]
    routings: list[Routing]
    workers: list[ScenarioWorker]
    activations: list[Activation] = field(default_factory=list)

    def station_types(self) -> set[str]:
        return {s.station_type for s in self.stations}

    def worker_groups(self) -> set[str]:
        return {w.worker_group for w in self.workers}

    def with_workers(self, workers: list[ScenarioWorker]) -> Scenario:
        """Same floor and workload, different fleet (for fleet-size comparisons)."""
        return Scenario(
            name=self.name,
            stations=self.stations,
            routings=self.routings,
            workers=list(workers),
            activations=self.activations,
        )


def bundled_scenario_path(name: str) -> Path:
    """Filesystem path of a scenario shipped inside the package."""
    ref = resources.files("agm").joinpath("scenarios", f"{name}.json")
    with resources.as_file(ref) as path:
        return Path(path)


def load_scenario(path: str | Path) -> Scenario:
    """Parse and validate a scenario file (or a bundled scenario name)."""
    candidate = Path(path)
    if not candidate.exists() and not candidate.suffix:
        candidate = bundled_scenario_path(str(path))
    if not candidate.exists():
        raise ScenarioError(f"scenario file not found: {path}")
    try:
        raw = json.loads(candidate.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{candidate}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    return parse_scenario(raw, source=str(candidate))


def parse_scenario(raw: dict[str, Any], source: str = "<memory>") -> Scenario:
    problems: list[str] = []
    stations: list[ScenarioStation] = []
    seen_ids: set[str] = set()
    for i, entry in enumerate(raw.get("stations", [])):
        station_id = entry.get("id", "")
        if not station_id:
            problems.append(f"stations[{i}]: missing id")
            continue
        if station_id in seen_ids:
            problems.append(f"stations[{i}]: duplicate id {station_id!r}")
            continue
        seen_ids.add(station_id)
        stations.append(
            ScenarioStation(
                id=station_id,
                name=entry.get("name", station_id),
                station_type=entry["station_type"],
                pose=Pose3.from_dict(entry["pose"]),
                capacity=entry.get("capacity", 1),
            )
        )

    workers = [
        ScenarioWorker(
            name=entry["name"],
            worker_group=entry["worker_group"],
            start_pose=Pose3.from_dict(entry.get("start_pose", {"x": 0, "y": 0})),
            speed=entry.get("speed", 1.0),
            battery_start=entry.get("battery_start", 1.0),
            battery_drain_per_meter=entry.get("battery_drain_per_meter", 0.0),
        )
        for entry in raw.get("workers", [])
    ]

    routings: list[Routing] = []
    for entry in raw.get("routings", []):
        steps = [
            RoutingStep(
                index=step.get("index", j),
                operation_name=step.get("operation_name", f"step_{j}"),
                station_type=step.get("station_type", ""),
                worker_group=step.get("worker_group", ""),
                process_duration=step.get("process_duration", 0.0),
                priority=step.get("priority", 0),
            )
            for j, step in enumerate(entry.get("steps", []))
        ]
        routings.append(
            Routing(
                id=entry["id"],
                part_number=entry.get("part_number", ""),
                customer=entry.get("customer", ""),
                steps=steps,
                active=entry.get("active", True),
            )
        )

    scenario = Scenario(
        name=raw.get("name", source),
        stations=stations,
        routings=routings,
        workers=workers,
        activations=[
            Activation(
                routing_id=entry["routing_id"],
                quantity=entry.get("quantity", 1),
                at_time=entry.get("at_time", 0.0),
            )
            for entry in raw.get("activations", [])
        ],
    )

    station_types = scenario.station_types()
    worker_groups = scenario.worker_groups()
    routing_ids = {r.id for r in scenario.routings}
    for routing in scenario.routings:
        for violation in validate_routing(routing, station_types, worker_groups):
            problems.append(f"routing {routing.id}: {violation}")
        if routing.steps:
            first = routing.steps[0].station_type
            last = routing.steps[-1].station_type
            if "infeed" not in first:
                problems.append(f"routing {routing.id}: first step must start at an infeed buffer")
            if "outfeed" not in last:
                problems.append(f"routing {routing.id}: last step must end at an outfeed buffer")
    for i, activation in enumerate(scenario.activations):
        if activation.routing_id not in routing_ids:
            problems.append(f"activations[{i}]: unknown routing {activation.routing_id!r}")
        if activation.quantity < 1:
            problems.append(f"activations[{i}]: quantity must be >= 1")

    if problems:
        raise ScenarioError(f"{source}: " + "; ".join(problems))
    return scenario


def load_world(service: Any, scenario: Scenario) -> dict[str, str]:
    """Materialize a scenario into a service's store, skipping documents that
    already exist (restart-safe). Returns worker name -> worker id."""
    from .store import NotFound

    for station in scenario.stations:
        try:
            service.store.get("workstations", station.id)
        except NotFound:
            service.create_workstation(
                {
                    "id": station.id,
                    "name": station.name,
                    "station_type": station.station_type,
                    "pose": station.pose.to_dict(),
                    "capacity": station.capacity,
                }
            )
    # Workers register before routings so validation sees their groups.
    worker_ids: dict[str, str] = {}
    existing = {doc.body["name"]: doc.body["id"] for doc in service.store.query("workers")}
    for worker in scenario.workers:
        if worker.name in existing:
            worker_ids[worker.name] = existing[worker.name]
            continue
        created = service.create_worker(
            {
                "name": worker.name,
                "worker_group": worker.worker_group,
                "pose": worker.start_pose.to_dict(),
                "battery": worker.battery_start,
            }
        )
        worker_ids[worker.name] = created["id"]
    for routing in scenario.routings:
        try:
            service.store.get("routings", routing.id)
        except NotFound:
            service.create_routing(routing.to_dict())
    return worker_ids
