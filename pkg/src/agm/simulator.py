"""Deterministic fleet simulator: virtual robots drive the real service.

Robots poll for work, travel straight lines at configured speed, drain
battery per meter, report progress, and complete jobs, exactly like a real
agent would over the wire. Two ways to run:

- embedded (default): the service runs in-process on a simulated clock and
  robots are ticked in fixed id order, so a run is a pure function of
  (scenario, seed, tick, scheduler config) and the report is byte-identical
  across repeats.
- endpoint: robots talk HTTP to a live server on wall-clock time; with
  ``--stress`` each robot runs in its own thread with seed-jittered poll
  phases to hammer the claim path concurrently.
"""

from __future__ import annotations

import argparse
import json
import random
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .clock import SIM_EPOCH, SimClock
from .domain import AuditEvent, InstancePhase, Pose3, pose_distance
from .projection import project
from .scenario import Scenario, load_scenario, load_world
from .scheduler import SchedulerConfig
from .service import AgmService, SequentialIds
from .store import DocumentStore

DEFAULT_TICK = 0.5
DEFAULT_POLL_INTERVAL = 1.0


class SimulationError(RuntimeError):
    pass


# -- transports -----------------------------------------------------------------


class ServiceTransport:
    """Direct in-process calls against an AgmService."""

    def __init__(self, service: AgmService):
        self.service = service

    def get_next_job(self, key: str) -> dict[str, Any]:
        return self.service.worker_get_next_job(key)

    def job_progress(self, body: dict[str, Any]) -> dict[str, Any]:
        return self.service.worker_job_progress(body)

    def job_complete(self, body: dict[str, Any]) -> dict[str, Any]:
        return self.service.worker_job_complete(body)

    def list_instances(self) -> list[dict[str, Any]]:
        return self.service.list_resources("instances")

    def list_workers(self) -> list[dict[str, Any]]:
        return self.service.list_resources("workers")

    def create_worker(self, body: dict[str, Any]) -> dict[str, Any]:
        return self.service.create_worker(body)

    def activate(self, routing_id: str, quantity: int) -> list[str]:
        return self.service.activate_routing(routing_id, quantity)

    def events(self) -> list[AuditEvent]:
        return self.service.read_events(0)


class HttpTransport:
    """The same operations over HTTP, retrying through connection failures so
    a simulated fleet rides out a server restart."""

    def __init__(self, endpoint: str, timeout: float = 5.0, retry_for: float = 30.0):
        self.endpoint = endpoint.rstrip("/")
        self.timeout = timeout
        self.retry_for = retry_for

    def _request(self, method: str, path: str, body: dict[str, Any] | None = None) -> Any:
        url = f"{self.endpoint}{path}"
        data = json.dumps(body).encode("utf-8") if body is not None else None
        deadline = time.monotonic() + self.retry_for
        while True:
            request = urllib.request.Request(url, data=data, method=method)
            if data is not None:
                request.add_header("Content-Type", "application/json")
            try:
                with urllib.request.urlopen(request, timeout=self.timeout) as response:
                    return json.loads(response.read().decode("utf-8"))
            except (urllib.error.URLError, ConnectionError, TimeoutError) as exc:
                if isinstance(exc, urllib.error.HTTPError):
                    raise SimulationError(f"{method} {path} -> HTTP {exc.code}: {exc.read()!r}")
                if time.monotonic() >= deadline:
                    raise SimulationError(f"{method} {path} unreachable: {exc}") from exc
                time.sleep(0.05)

    def get_next_job(self, key: str) -> dict[str, Any]:
        return self._request("GET", f"/workerGetNextJob?key={key}")

    def job_progress(self, body: dict[str, Any]) -> dict[str, Any]:
        return self._request("POST", "/workerJobProgress", body)

    def job_complete(self, body: dict[str, Any]) -> dict[str, Any]:
        return self._request("POST", "/workerJobComplete", body)

    def list_instances(self) -> list[dict[str, Any]]:
        return self._request("GET", "/api/instances")

    def list_workers(self) -> list[dict[str, Any]]:
        return self._request("GET", "/api/workers")

    def create_worker(self, body: dict[str, Any]) -> dict[str, Any]:
        return self._request("POST", "/api/workers", body)

    def activate(self, routing_id: str, quantity: int) -> list[str]:
        result = self._request("POST", f"/api/routings/{routing_id}/activate", {"quantity": quantity})
        return result["instance_ids"]

    def events(self) -> list[AuditEvent]:
        result = self._request("GET", "/api/events?since=0&format=json")
        return [AuditEvent.from_dict(e) for e in result["events"]]


# -- robots -------------------------------------------------------------------------


@dataclass
class RobotState:
    """Motion and protocol state of one simulated robot."""

    worker_id: str
    name: str
    pose: Pose3
    speed: float
    battery: float
    drain_per_meter: float
    poll_interval: float = DEFAULT_POLL_INTERVAL
    job: dict[str, Any] | None = None
    leg: str = "idle"  # idle | to_source | to_destination
    target: Pose3 | None = None
    next_poll_at: float = 0.0
    next_progress_at: float = 0.0
    distance_traveled: float = 0.0
    jobs_completed: int = 0
    idle_time: float = 0.0


def step_robot(robot: RobotState, dt: float) -> tuple[RobotState, bool]:
    """Advance the robot along its current leg by at most speed*dt meters.

    Returns the mutated robot and whether it reached its target this step.
    Battery drains linearly with distance moved.
    """
    if dt < 0:
        raise ValueError("dt must be >= 0")
    if robot.target is None:
        return robot, False
    remaining = pose_distance(robot.pose, robot.target)
    if remaining == 0.0:
        return robot, True
    travel = min(robot.speed * dt, remaining)
    if travel <= 0.0:
        return robot, False
    fraction = travel / remaining
    robot.pose = Pose3(
        x=robot.pose.x + (robot.target.x - robot.pose.x) * fraction,
        y=robot.pose.y + (robot.target.y - robot.pose.y) * fraction,
        z=robot.pose.z + (robot.target.z - robot.pose.z) * fraction,
        yaw=robot.target.yaw,
    )
    robot.distance_traveled += travel
    robot.battery = max(0.0, robot.battery - robot.drain_per_meter * travel)
    arrived = travel >= remaining - 1e-12
    if arrived:
        robot.pose = Pose3(robot.target.x, robot.target.y, robot.target.z, robot.target.yaw)
    return robot, arrived


class RobotDriver:
    """Runs one robot's poll/move/report loop against a transport."""

    def __init__(self, robot: RobotState, transport: Any, progress_interval: float | None = None):
        self.robot = robot
        self.transport = transport
        self.progress_interval = progress_interval or robot.poll_interval

    def tick(self, dt: float, now: float) -> None:
        robot = self.robot
        if robot.job is None:
            robot.idle_time += dt
            if now >= robot.next_poll_at:
                self._poll(now)
            return

        robot, arrived = step_robot(robot, dt)
        if arrived:
            if robot.leg == "to_source":
                robot.leg = "to_destination"
                robot.target = Pose3.from_dict(robot.job["destination"])
                self._progress("carrying", now)
            elif robot.leg == "to_destination":
                self._complete(now)
        elif now >= robot.next_progress_at:
            phase = "en_route_to_source" if robot.leg == "to_source" else "carrying"
            self._progress(phase, now)

    def _poll(self, now: float) -> None:
        robot = self.robot
        payload = self.transport.get_next_job(robot.worker_id)
        robot.next_poll_at = now + robot.poll_interval
        if payload.get("status") != 1:
            return
        robot.job = payload
        robot.leg = "to_source"
        robot.target = Pose3.from_dict(payload["source"])
        self._progress("en_route_to_source", now)

    def _progress(self, phase: str, now: float) -> None:
        robot = self.robot
        robot.next_progress_at = now + self.progress_interval
        self.transport.job_progress(
            {
                "key": robot.worker_id,
                "job_id": robot.job["job_id"],
                "phase": phase,
                "pose": robot.pose.to_dict(),
                "battery": robot.battery,
            }
        )

    def _complete(self, now: float) -> None:
        robot = self.robot
        self.transport.job_complete({"key": robot.worker_id, "job_id": robot.job["job_id"]})
        robot.jobs_completed += 1
        robot.job = None
        robot.leg = "idle"
        robot.target = None
        robot.next_poll_at = now + robot.poll_interval


# -- reports ----------------------------------------------------------------------------


@dataclass
class RunReport:
    """What a run did, aggregated from the audit trail and robot odometry."""

    scenario: str
    seed: int
    tick: float
    completed: bool
    makespan: float
    completed_instances: int
    event_count: int
    per_worker: dict[str, dict[str, float]]
    per_station: dict[str, dict[str, float]]
    stuck: list[dict[str, Any]] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "scenario": self.scenario,
            "seed": self.seed,
            "tick": self.tick,
            "completed": self.completed,
            "makespan": self.makespan,
            "completed_instances": self.completed_instances,
            "event_count": self.event_count,
            "per_worker": self.per_worker,
            "per_station": self.per_station,
            "stuck": self.stuck,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def to_table(self) -> str:
        lines = [
            f"scenario: {self.scenario}  seed={self.seed} tick={self.tick}",
            f"completed: {self.completed}  instances={self.completed_instances}  "
            f"makespan={self.makespan:.1f}s  events={self.event_count}",
            "",
            f"{'worker':<16}{'distance (m)':>14}{'jobs':>7}{'idle (s)':>11}",
        ]
        for name in sorted(self.per_worker):
            w = self.per_worker[name]
            lines.append(
                f"{name:<16}{w['distance_traveled']:>14.1f}{w['jobs_completed']:>7.0f}"
                f"{w['idle_time']:>11.1f}"
            )
        lines.append("")
        lines.append(f"{'station':<16}{'utilization':>12}")
        for name in sorted(self.per_station):
            lines.append(f"{name:<16}{self.per_station[name]['utilization']:>12.3f}")
        if self.stuck:
            lines.append("")
            lines.append("stuck instances:")
            for item in self.stuck:
                lines.append(f"  {item}")
        return "\n".join(lines)


def _build_report(
    scenario: Scenario,
    seed: int,
    tick: float,
    completed: bool,
    events: list[AuditEvent],
    drivers: list[RobotDriver],
    stuck: list[dict[str, Any]],
) -> RunReport:
    view = project(events)
    if view.first_activation is not None and view.last_completion is not None:
        makespan = view.last_completion - view.first_activation
    else:
        makespan = 0.0
    per_worker = {
        d.robot.name: {
            "distance_traveled": round(d.robot.distance_traveled, 6),
            "jobs_completed": d.robot.jobs_completed,
            "idle_time": round(d.robot.idle_time, 6),
        }
        for d in drivers
    }
    per_station: dict[str, dict[str, float]] = {}
    for station in scenario.stations:
        busy = view.busy_seconds.get(station.id, 0.0)
        if makespan > 0:
            utilization = min(1.0, busy / (station.capacity * makespan))
        else:
            utilization = 0.0
        per_station[station.name] = {"utilization": round(utilization, 6)}
    return RunReport(
        scenario=scenario.name,
        seed=seed,
        tick=tick,
        completed=completed,
        makespan=round(makespan, 6),
        completed_instances=view.completed_instances,
        event_count=len(events),
        per_worker=per_worker,
        per_station=per_station,
        stuck=stuck,
    )


def _stuck_diagnostics(transport: Any, pending: set[str]) -> list[dict[str, Any]]:
    diagnostics = []
    for inst in transport.list_instances():
        if inst["id"] in pending and inst["phase"] != InstancePhase.COMPLETED.value:
            diagnostics.append(
                {
                    "instance_id": inst["id"],
                    "phase": inst["phase"],
                    "current_step": inst["current_step"],
                    "location": inst["location"],
                }
            )
    return diagnostics


def _register_fleet(transport: Any, scenario: Scenario) -> dict[str, str]:
    """CRUD-register scenario workers, reusing any that already exist by name."""
    existing = {w["name"]: w["id"] for w in transport.list_workers()}
    ids: dict[str, str] = {}
    for worker in scenario.workers:
        if worker.name in existing:
            ids[worker.name] = existing[worker.name]
        else:
            created = transport.create_worker(
                {
                    "name": worker.name,
                    "worker_group": worker.worker_group,
                    "pose": worker.start_pose.to_dict(),
                    "battery": worker.battery_start,
                }
            )
            ids[worker.name] = created["id"]
    return ids


def _make_drivers(
    transport: Any,
    scenario: Scenario,
    worker_ids: dict[str, str],
    poll_interval: float,
) -> list[RobotDriver]:
    drivers = []
    for worker in scenario.workers:
        robot = RobotState(
            worker_id=worker_ids[worker.name],
            name=worker.name,
            pose=worker.start_pose,
            speed=worker.speed,
            battery=worker.battery_start,
            drain_per_meter=worker.battery_drain_per_meter,
            poll_interval=poll_interval,
        )
        drivers.append(RobotDriver(robot, transport))
    drivers.sort(key=lambda d: d.robot.worker_id)  # fixed tick order
    return drivers


# -- run loops ------------------------------------------------------------------------------


def run(
    scenario: Scenario,
    *,
    seed: int = 0,
    tick: float = DEFAULT_TICK,
    max_sim_time: float = 3600.0,
    endpoint: str | None = None,
    stress: bool = False,
    poll_interval: float = DEFAULT_POLL_INTERVAL,
    scheduler_config: SchedulerConfig | None = None,
    data_dir: str | Path | None = None,
) -> RunReport:
    """Execute a scenario and return its report.

    With no endpoint the server is embedded in-process on a simulated clock
    (deterministic); with an endpoint the robots drive a live server over
    HTTP in wall-clock time.
    """
    if endpoint is None and stress:
        raise SimulationError("--stress needs a live endpoint to hammer")
    if endpoint is None:
        return _run_embedded(
            scenario,
            seed=seed,
            tick=tick,
            max_sim_time=max_sim_time,
            poll_interval=poll_interval,
            scheduler_config=scheduler_config,
            data_dir=data_dir,
        )
    transport = HttpTransport(endpoint)
    if stress:
        return _run_stress(
            scenario, transport, seed=seed, max_wall_time=max_sim_time, poll_interval=poll_interval
        )
    return _run_endpoint(
        scenario, transport, seed=seed, tick=tick, max_wall_time=max_sim_time,
        poll_interval=poll_interval,
    )


def _run_embedded(
    scenario: Scenario,
    *,
    seed: int,
    tick: float,
    max_sim_time: float,
    poll_interval: float,
    scheduler_config: SchedulerConfig | None,
    data_dir: str | Path | None,
) -> RunReport:
    if tick <= 0:
        raise SimulationError("tick must be > 0")
    clock = SimClock(SIM_EPOCH)
    store = DocumentStore(data_dir)
    service = AgmService(
        store,
        scheduler_config or SchedulerConfig(),
        clock,
        id_factory=SequentialIds(),
    )
    load_world(service, scenario)
    transport = ServiceTransport(service)
    worker_ids = {w["name"]: w["id"] for w in transport.list_workers()}
    drivers = _make_drivers(transport, scenario, worker_ids, poll_interval)

    pending_activations = sorted(
        scenario.activations, key=lambda a: (a.at_time, a.routing_id)
    )
    activated: set[str] = set()
    step_count = max(1, int(max_sim_time / tick) + 1)
    completed = False

    for i in range(step_count + 1):
        t = i * tick
        clock.set_time(SIM_EPOCH + t)
        while pending_activations and pending_activations[0].at_time <= t:
            activation = pending_activations.pop(0)
            activated.update(transport.activate(activation.routing_id, activation.quantity))
        service.pump_timers()
        dt = tick if i > 0 else 0.0
        for driver in drivers:
            driver.tick(dt, t)
        if not pending_activations and _all_completed(transport, activated):
            completed = True
            break

    stuck = [] if completed else _stuck_diagnostics(transport, activated)
    report = _build_report(scenario, seed, tick, completed, transport.events(), drivers, stuck)
    store.close()
    return report


def _all_completed(transport: Any, activated: set[str]) -> bool:
    if not activated:
        return True
    done = {
        inst["id"]
        for inst in transport.list_instances()
        if inst["phase"] == InstancePhase.COMPLETED.value
    }
    return activated <= done


def _run_endpoint(
    scenario: Scenario,
    transport: HttpTransport,
    *,
    seed: int,
    tick: float,
    max_wall_time: float,
    poll_interval: float,
) -> RunReport:
    worker_ids = _register_fleet(transport, scenario)
    drivers = _make_drivers(transport, scenario, worker_ids, poll_interval)
    pending_activations = sorted(scenario.activations, key=lambda a: (a.at_time, a.routing_id))
    activated: set[str] = set()
    start = time.monotonic()
    last = start
    completed = False
    last_done_check = 0.0

    while time.monotonic() - start <= max_wall_time:
        now_wall = time.monotonic()
        t = now_wall - start
        dt = now_wall - last
        last = now_wall
        while pending_activations and pending_activations[0].at_time <= t:
            activation = pending_activations.pop(0)
            activated.update(transport.activate(activation.routing_id, activation.quantity))
        for driver in drivers:
            driver.tick(dt, t)
        if t - last_done_check >= 0.2:
            last_done_check = t
            if not pending_activations and _all_completed(transport, activated):
                completed = True
                break
        time.sleep(min(tick, 0.02))

    if not completed and not pending_activations and _all_completed(transport, activated):
        completed = True
    stuck = [] if completed else _stuck_diagnostics(transport, activated)
    return _build_report(scenario, seed, tick, completed, transport.events(), drivers, stuck)


def _run_stress(
    scenario: Scenario,
    transport: HttpTransport,
    *,
    seed: int,
    max_wall_time: float,
    poll_interval: float,
) -> RunReport:
    """Concurrent robots over real HTTP with seed-jittered poll phases."""
    worker_ids = _register_fleet(transport, scenario)
    drivers = _make_drivers(transport, scenario, worker_ids, poll_interval)
    rng = random.Random(seed)
    for driver in drivers:
        driver.robot.next_poll_at = rng.uniform(0.0, poll_interval)

    activated: set[str] = set()
    for activation in sorted(scenario.activations, key=lambda a: (a.at_time, a.routing_id)):
        activated.update(transport.activate(activation.routing_id, activation.quantity))

    stop = threading.Event()

    def drive(driver: RobotDriver) -> None:
        last = time.monotonic()
        while not stop.is_set():
            now = time.monotonic()
            driver.tick(now - last, now)
            last = now
            time.sleep(0.005)

    threads = [threading.Thread(target=drive, args=(d,), daemon=True) for d in drivers]
    for thread in threads:
        thread.start()
    deadline = time.monotonic() + max_wall_time
    completed = False
    while time.monotonic() < deadline:
        if _all_completed(transport, activated):
            completed = True
            break
        time.sleep(0.1)
    stop.set()
    for thread in threads:
        thread.join(timeout=2.0)

    stuck = [] if completed else _stuck_diagnostics(transport, activated)
    return _build_report(scenario, seed, 0.0, completed, transport.events(), drivers, stuck)


# -- CLI ---------------------------------------------------------------------------------------


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="agm-sim", description="Fleet simulator")
    parser.add_argument("--scenario", required=True, help="scenario file or bundled name")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--tick", type=float, default=DEFAULT_TICK, help="simulated seconds per step")
    parser.add_argument("--max-sim-time", type=float, default=3600.0)
    parser.add_argument("--poll-interval", type=float, default=DEFAULT_POLL_INTERVAL)
    group = parser.add_mutually_exclusive_group()
    group.add_argument("--embed-server", action="store_true", help="run the server in-process (default)")
    group.add_argument("--endpoint", default=None, help="drive a live server at this URL")
    parser.add_argument("--stress", action="store_true", help="concurrent HTTP robots (needs --endpoint)")
    parser.add_argument("--report", default=None, help="write the JSON report here")
    args = parser.parse_args(argv)

    scenario = load_scenario(args.scenario)
    report = run(
        scenario,
        seed=args.seed,
        tick=args.tick,
        max_sim_time=args.max_sim_time,
        endpoint=args.endpoint,
        stress=args.stress,
        poll_interval=args.poll_interval,
    )
    print(report.to_table())
    if args.report:
        Path(args.report).write_text(report.to_json() + "\n", encoding="utf-8")
        print(f"\nreport written to {args.report}")
    return 0 if report.completed else 1


if __name__ == "__main__":
    raise SystemExit(main())
