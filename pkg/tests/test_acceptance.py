"""Acceptance suite: every release criterion, one pass/fail line each.

Run with ``pytest tests/test_acceptance.py -s`` to see the per-criterion
lines; each criterion is a single test so the suite's pass/fail mirrors the
checklist exactly.
"""

from __future__ import annotations

import json
import random
import signal
import subprocess
import sys
import threading
import time
from contextlib import contextmanager
from pathlib import Path

import pytest
import requests

from agm.domain import AuditEvent, EventKind
from agm.projection import capacity_violations, duplicate_assignments, project
from agm.scenario import load_scenario, parse_scenario
from agm.scheduler import SchedulerConfig, select_next_job
from agm.service import SequentialIds
from agm.simulator import run

from helpers import brute_force_best, build_random_world, contention_world


@contextmanager
def criterion(name: str):
    try:
        yield
    except BaseException as exc:
        print(f"[FAIL] {name}: {exc}", flush=True)
        raise
    print(f"[PASS] {name}", flush=True)


def _audit_events(data_dir: Path) -> list[AuditEvent]:
    path = data_dir / "audit.jsonl"
    events = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.strip():
            events.append(AuditEvent.from_dict(json.loads(line)))
    return events


# -- 1. mutual exclusion under contention -----------------------------------------------


def test_mutual_exclusion_under_contention():
    with criterion("mutual exclusion: 1000 contended trials, exactly one winner each"):
        start = time.monotonic()
        cfg = SchedulerConfig()
        for trial in range(1000):
            n_workers = 2 + trial % 7  # cycles 2..8
            store, worker_ids = contention_world(n_workers)
            barrier = threading.Barrier(n_workers)
            statuses = []
            lock = threading.Lock()

            def poll(worker_id, store=store, barrier=barrier, statuses=statuses, lock=lock):
                ids = SequentialIds()
                barrier.wait()
                payload = select_next_job(worker_id, store, cfg, 0.0, ids)
                with lock:
                    statuses.append(payload.status)

            threads = [threading.Thread(target=poll, args=(w,)) for w in worker_ids]
            for t in threads:
                t.start()
            for t in threads:
                t.join()

            assert statuses.count(1) == 1, (
                f"trial {trial} with {n_workers} workers: statuses {statuses}"
            )
            assert duplicate_assignments(store.read_audit(0)) == []
        elapsed = time.monotonic() - start
        assert elapsed < 60.0, f"took {elapsed:.1f}s, target < 60s"


# -- 2. scheduler oracle equivalence ----------------------------------------------------


def test_scheduler_oracle_equivalence():
    with criterion("scheduler oracle equivalence: 600 randomized worlds, zero mismatches"):
        rng = random.Random(741003)
        cfg = SchedulerConfig()
        mismatches = []
        for trial in range(600):
            store, worker_ids = build_random_world(rng)
            worker_id = rng.choice(worker_ids)
            expected = brute_force_best(store, worker_id)
            payload = select_next_job(worker_id, store, cfg, 0.0, SequentialIds())
            if expected is None:
                if payload.status != 0:
                    mismatches.append((trial, "oracle says no work", payload.to_dict()))
            elif payload.status != 1:
                mismatches.append((trial, "oracle says work exists", expected))
            elif payload.instance_id != expected["instance_id"]:
                mismatches.append((trial, expected, payload.to_dict()))
            else:
                job = store.query("jobs")[0].body
                if job["destination_station"] != expected["destination"]:
                    mismatches.append((trial, "wrong destination", expected, job))
        assert mismatches == [], mismatches[:5]


# -- 3. single-robot manufacturing scenario -----------------------------------------------


def test_single_robot_scenario(tmp_path):
    with criterion(
        "single-robot scenario: 4 activations complete in routing order, "
        "deterministic report, < 30s"
    ):
        scenario = load_scenario("single_mir")
        assert scenario.activations[0].quantity >= 3

        start = time.monotonic()
        report = run(scenario, seed=11, tick=0.5, data_dir=tmp_path / "run1")
        elapsed = time.monotonic() - start
        assert elapsed < 30.0, f"run took {elapsed:.1f}s"
        assert report.completed
        assert report.completed_instances == scenario.activations[0].quantity

        events = _audit_events(tmp_path / "run1")
        routing = scenario.routings[0]
        expected_types = [s.station_type for s in routing.steps]
        view = project(events)
        assert len(view.instance_steps) == report.completed_instances
        for instance_id, traces in view.instance_steps.items():
            visited = [t.station_type for t in traces]
            assert visited == expected_types, f"{instance_id} visited {visited}"

        again = run(scenario, seed=11, tick=0.5, data_dir=tmp_path / "run2")
        assert report.to_json() == again.to_json(), "same seed must reproduce the report"


# -- 4. two-robot scenario beats one robot -------------------------------------------------


def test_two_robot_scenario_beats_single_robot(tmp_path):
    with criterion("two-robot scenario: dual fleet makespan < single robot on identical workload"):
        dual = load_scenario("dual_turtlebot")
        assert dual.activations[0].quantity >= 4
        dual_report = run(dual, seed=0, tick=0.5, data_dir=tmp_path / "dual")
        solo = dual.with_workers(dual.workers[:1])
        solo_report = run(solo, seed=0, tick=0.5, data_dir=tmp_path / "solo")
        assert dual_report.completed and solo_report.completed
        assert dual_report.makespan < solo_report.makespan, (
            f"dual {dual_report.makespan}s vs solo {solo_report.makespan}s"
        )


# -- 5. capacity safety across scenario runs --------------------------------------------------


def test_capacity_safety_over_scenario_runs(tmp_path):
    with criterion("capacity safety: audited occupancy never exceeds capacity in any prefix"):
        for name, directory in (("single_mir", "a"), ("dual_turtlebot", "b")):
            scenario = load_scenario(name)
            report = run(scenario, seed=0, tick=0.5, data_dir=tmp_path / directory)
            assert report.completed
            events = _audit_events(tmp_path / directory)
            assert capacity_violations(events) == [], name
            assert duplicate_assignments(events) == [], name


# -- 6. battery gate ------------------------------------------------------------------------------


def test_battery_gate_blocks_low_worker(tmp_path):
    with criterion("battery gate: below-threshold worker never assigned, parked charging"):
        from agm.scenario import bundled_scenario_path

        raw = json.loads(bundled_scenario_path("single_mir").read_text(encoding="utf-8"))
        raw["workers"].append(
            {
                "name": "weak_robot",
                "worker_group": "PO Movement",
                "start_pose": {"x": 0.0, "y": 2.0},
                "speed": 1.5,
                "battery_start": 0.10,
                "battery_drain_per_meter": 0.0,
            }
        )
        scenario = parse_scenario(raw, source="single_mir+weak")
        report = run(scenario, seed=0, tick=0.5, data_dir=tmp_path / "battery")
        assert report.completed
        assert report.per_worker["weak_robot"]["jobs_completed"] == 0

        events = _audit_events(tmp_path / "battery")
        weak_ids = set()
        for event in events:
            if (
                event.kind is EventKind.RESOURCE_CHANGED
                and event.payload.get("name") == "weak_robot"
            ):
                weak_ids.add(event.payload["id"])
        assert weak_ids, "weak robot never registered"
        assigned_to_weak = [
            e for e in events
            if e.kind is EventKind.TASK_ASSIGNED and e.payload["worker_id"] in weak_ids
        ]
        assert assigned_to_weak == []
        charging_records = [
            e for e in events
            if e.kind is EventKind.WORKER_ACTIVITY
            and e.payload.get("action") == "battery_low"
            and e.payload.get("worker_id") in weak_ids
            and e.payload.get("status") == "charging"
        ]
        assert charging_records, "low-battery worker was never recorded as charging"


# -- 7. crash recovery -------------------------------------------------------------------------------


CRASH_SCENARIO = {
    "name": "crash_recovery",
    "stations": [
        {"id": "IN", "name": "IN", "station_type": "infeed", "pose": {"x": 0.0, "y": 0.0}, "capacity": 4},
        {"id": "M1", "name": "M1", "station_type": "milling", "pose": {"x": 2.0, "y": 0.0}, "capacity": 1},
        {"id": "M2", "name": "M2", "station_type": "milling", "pose": {"x": 2.0, "y": 1.0}, "capacity": 1},
        {"id": "OUT", "name": "OUT", "station_type": "outfeed", "pose": {"x": 4.0, "y": 0.0}, "capacity": 4},
    ],
    "routings": [
        {
            "id": "r-crash",
            "part_number": "PN-C",
            "customer": "Crash Co.",
            "steps": [
                {"index": 0, "operation_name": "stage", "station_type": "infeed", "worker_group": "PO Movement", "process_duration": 0.0},
                {"index": 1, "operation_name": "mill", "station_type": "milling", "worker_group": "PO Movement", "process_duration": 0.3},
                {"index": 2, "operation_name": "store", "station_type": "outfeed", "worker_group": "PO Movement", "process_duration": 0.0},
            ],
        }
    ],
    "workers": [
        {"name": "crash_bot_1", "worker_group": "PO Movement", "start_pose": {"x": 0.0, "y": -1.0}, "speed": 8.0, "battery_start": 1.0, "battery_drain_per_meter": 0.0001},
        {"name": "crash_bot_2", "worker_group": "PO Movement", "start_pose": {"x": 0.0, "y": 1.0}, "speed": 8.0, "battery_start": 1.0, "battery_drain_per_meter": 0.0001},
    ],
    "activations": [{"routing_id": "r-crash", "quantity": 3, "at_time": 0.0}],
}


def _spawn_server(data_dir: Path, scenario_file: Path, port: int = 0) -> tuple[subprocess.Popen, int]:
    command = [
        sys.executable, "-m", "agm.server",
        "--listen", f"127.0.0.1:{port}",
        "--data-dir", str(data_dir),
        "--scenario", str(scenario_file),
    ]
    proc = subprocess.Popen(
        command, stdout=subprocess.PIPE, stderr=subprocess.STDOUT, text=True
    )
    line = proc.stdout.readline()
    assert "listening on" in line, f"server failed to start: {line!r}"
    bound_port = int(line.rsplit(":", 1)[1])
    return proc, bound_port


def test_crash_recovery(tmp_path):
    with criterion("crash recovery: kill -9 mid-scenario, restart, run completes cleanly"):
        data_dir = tmp_path / "data"
        scenario_file = tmp_path / "crash_scenario.json"
        scenario_file.write_text(json.dumps(CRASH_SCENARIO), encoding="utf-8")
        scenario = parse_scenario(CRASH_SCENARIO)

        proc, port = _spawn_server(data_dir, scenario_file)
        base = f"http://127.0.0.1:{port}"
        report_holder = {}

        def drive():
            report_holder["report"] = run(
                scenario,
                endpoint=base,
                poll_interval=0.05,
                tick=0.02,
                max_sim_time=40.0,
            )

        sim = threading.Thread(target=drive)
        sim.start()
        try:
            # wait until real work is in flight, then pull the plug
            deadline = time.monotonic() + 10.0
            while time.monotonic() < deadline:
                audit = data_dir / "audit.jsonl"
                if audit.exists() and '"task_assigned"' in audit.read_text(encoding="utf-8"):
                    break
                time.sleep(0.05)
            else:
                pytest.fail("no assignment happened before the crash point")

            proc.send_signal(signal.SIGKILL)
            proc.wait(timeout=5)
            time.sleep(0.3)

            proc, port2 = _spawn_server(data_dir, scenario_file, port=port)
            assert port2 == port
            sim.join(timeout=60.0)
            assert not sim.is_alive(), "simulation never finished after restart"
        finally:
            proc.kill()
            proc.wait(timeout=5)

        report = report_holder["report"]
        assert report.completed, f"stuck: {report.stuck}"
        events = _audit_events(data_dir)
        assert duplicate_assignments(events) == []
        assert capacity_violations(events) == []
        view = project(events)
        assert view.completed_instances == 3


# -- 8. protocol conformance ---------------------------------------------------------------------------


GOLDEN = Path(__file__).parent / "golden"


def test_protocol_conformance_golden_payloads(live_server):
    with criterion("protocol conformance: golden payloads for all four poll cases"):
        _, base = live_server
        requests.post(
            f"{base}/api/workers",
            json={"name": "MIR_robot", "worker_group": "PO Movement"},
            timeout=5,
        ).raise_for_status()
        for sid, stype in (("IN", "infeed"), ("MA", "milling"), ("OUT", "outfeed")):
            requests.post(
                f"{base}/api/workstations",
                json={"id": sid, "name": sid, "station_type": stype,
                      "pose": {"x": 0.0, "y": 0.0}, "capacity": 8},
                timeout=5,
            ).raise_for_status()
        requests.post(
            f"{base}/api/routings",
            json={
                "id": "r-basic",
                "part_number": "PN-1",
                "customer": "Fixture Co.",
                "steps": [
                    {"operation_name": "stage", "station_type": "infeed", "worker_group": "PO Movement"},
                    {"operation_name": "mill", "station_type": "milling", "worker_group": "PO Movement"},
                    {"operation_name": "store", "station_type": "outfeed", "worker_group": "PO Movement"},
                ],
            },
            timeout=5,
        ).raise_for_status()

        def poll(key):
            response = requests.get(f"{base}/workerGetNextJob", params={"key": key}, timeout=5)
            assert response.status_code == 200
            return response.text

        def golden(name):
            return (GOLDEN / name).read_text(encoding="utf-8").strip()

        assert poll("ghost") == golden("next_job_unknown_key.json")
        assert poll("w-0001") == golden("next_job_no_work.json")
        requests.post(f"{base}/api/routings/r-basic/activate", json={"quantity": 1}, timeout=5)
        assert poll("w-0001") == golden("next_job_available.json")
        assert poll("w-0001") == golden("next_job_repoll.json")
