"""Scheduler: eligibility, ranking, claiming, reclaim, and oracle equivalence.

The brute-force oracle here re-states the selection rules directly from their
definition (filter literally, sort by the stated keys) without sharing any
code with the scheduler, so the two sides can disagree if either is wrong.
"""

from __future__ import annotations

import itertools
import json
import math
import random
import threading

from agm.domain import EventKind, Pose3, RoutingStep, Worker
from agm.scheduler import (
    CandidateTask,
    SchedulerConfig,
    assign_destination,
    eligible_tasks,
    rank,
    reclaim_stale_jobs,
    select_next_job,
)
from agm.service import SequentialIds
from agm.store import DocumentStore

from helpers import brute_force_best, build_random_world


# -- assign_destination ------------------------------------------------------------


def test_least_occupied_station_wins(world, store):
    world.station("M1", "milling", capacity=1)
    world.station("M3", "milling", capacity=1)
    # fill M3
    doc = store.get("workstations", "M3")
    store.put("workstations", "M3", {**doc.body, "occupancy": 1, "state": "occupied"}, expected_version=doc.version)
    step = RoutingStep(0, "mill", "milling", "PO Movement")
    assert assign_destination(step, store) == "M1"


def test_all_stations_down_yields_none(world, store):
    world.station("G1", "grinding")
    world.station("G2", "grinding")
    for sid in ("G1", "G2"):
        world.service.set_workstation_state(sid, "down")
    step = RoutingStep(0, "grind", "grinding", "PO Movement")
    assert assign_destination(step, store) is None


def test_equal_occupancy_breaks_tie_lexicographically(world, store):
    world.station("M3", "milling", capacity=2)
    world.station("M1", "milling", capacity=2)
    step = RoutingStep(0, "mill", "milling", "PO Movement")
    assert assign_destination(step, store) == "M1"


# -- eligible_tasks -------------------------------------------------------------------


def _worker(world, name="bot", group="PO Movement", pose=(0, 0), battery=1.0):
    created = world.worker(name, group, pose, battery)
    return Worker.from_dict(created)


def test_no_instances_means_no_candidates(world, store):
    world.basic_floor()
    worker = _worker(world)
    world.transport_routing()
    assert eligible_tasks(worker, store) == []


def test_single_awaiting_instance_is_candidate(world, store):
    world.basic_floor()
    worker = _worker(world)
    world.transport_routing()
    world.instance("i-1", "r-basic", step=1, location="IN")
    candidates = eligible_tasks(worker, store)
    assert len(candidates) == 1
    cand = candidates[0]
    assert cand.instance_id == "i-1"
    assert cand.step_index == 1
    assert cand.source_station == "IN"
    assert cand.destination_station == "MA"


def test_full_destination_pool_excludes_instance(world, store):
    world.basic_floor()
    worker = _worker(world)
    world.transport_routing()
    world.instance("i-1", "r-basic", step=1, location="IN")
    world.instance("i-2", "r-basic", step=1, location="IN")
    # brute-force fill of the whole milling pool
    for sid in ("MA", "MB"):
        doc = store.get("workstations", sid)
        store.put(
            "workstations", sid,
            {**doc.body, "occupancy": doc.body["capacity"], "state": "occupied"},
            expected_version=doc.version,
        )
    assert eligible_tasks(worker, store) == []
    # free one slot: both instances become eligible again (pool has room)
    doc = store.get("workstations", "MA")
    store.put("workstations", "MA", {**doc.body, "occupancy": 0, "state": "free"}, expected_version=doc.version)
    assert {c.instance_id for c in eligible_tasks(worker, store)} == {"i-1", "i-2"}


def test_group_mismatch_excludes_instance(world, store):
    world.basic_floor()
    worker = _worker(world, group="Forklift")
    world.worker("po-seed")
    world.transport_routing()
    world.instance("i-1", "r-basic", step=1, location="IN")
    assert eligible_tasks(worker, store) == []


# -- rank ------------------------------------------------------------------------------------


def _candidate(instance_id, priority=0, source=(0.0, 0.0), created_at=0.0):
    pose = Pose3(source[0], source[1])
    return CandidateTask(
        instance_id=instance_id,
        step_index=0,
        priority=priority,
        source_station="S",
        destination_station="D",
        source_pose=pose,
        destination_pose=Pose3(9, 9),
        created_at=created_at,
    )


WORKER_AT_ORIGIN = Worker(id="w", name="w", worker_group="PO Movement", pose=Pose3(0, 0))


def test_higher_priority_first():
    low = _candidate("a", priority=1)
    high = _candidate("b", priority=5)
    assert [c.instance_id for c in rank([low, high], WORKER_AT_ORIGIN)] == ["b", "a"]


def test_distance_breaks_priority_ties():
    near = _candidate("far-id", priority=2, source=(2, 0))
    far = _candidate("aaa-id", priority=2, source=(7, 0))
    assert [c.instance_id for c in rank([far, near], WORKER_AT_ORIGIN)] == ["far-id", "aaa-id"]


def test_age_then_id_break_remaining_ties():
    older = _candidate("z", created_at=1.0)
    newer = _candidate("a", created_at=2.0)
    assert [c.instance_id for c in rank([newer, older], WORKER_AT_ORIGIN)] == ["z", "a"]
    twin_a = _candidate("a", created_at=1.0)
    twin_b = _candidate("b", created_at=1.0)
    assert [c.instance_id for c in rank([twin_b, twin_a], WORKER_AT_ORIGIN)] == ["a", "b"]


def test_single_candidate_ranks_as_itself():
    only = _candidate("solo")
    assert rank([only], WORKER_AT_ORIGIN) == [only]


def _oracle_sort(candidates, worker):
    """Independent restatement of the ranking definition."""

    def distance(c):
        dx = worker.pose.x - c.source_pose.x
        dy = worker.pose.y - c.source_pose.y
        dz = worker.pose.z - c.source_pose.z
        return math.sqrt(dx * dx + dy * dy + dz * dz)

    return sorted(
        candidates,
        key=lambda c: (-c.priority, distance(c), c.created_at, c.instance_id),
    )


def test_rank_matches_brute_force_over_all_permutations():
    candidates = [
        _candidate("a", priority=3, source=(1, 0), created_at=5.0),
        _candidate("b", priority=3, source=(1, 0), created_at=2.0),
        _candidate("c", priority=1, source=(0.5, 0), created_at=1.0),
        _candidate("d", priority=3, source=(4, 0), created_at=0.0),
        _candidate("e", priority=0, source=(0, 0), created_at=0.0),
    ]
    expected = _oracle_sort(candidates, WORKER_AT_ORIGIN)
    for permutation in itertools.permutations(candidates):
        assert rank(list(permutation), WORKER_AT_ORIGIN) == expected


def test_rank_is_deterministic():
    candidates = [_candidate(f"c{i}", priority=i % 3) for i in range(6)]
    first = rank(candidates, WORKER_AT_ORIGIN)
    assert rank(list(candidates), WORKER_AT_ORIGIN) == first


# -- select_next_job ------------------------------------------------------------------------------


def _payload(world, worker_id):
    return select_next_job(
        worker_id, world.store, world.service.config, world.service.now(), world.service.ids
    )


def test_unknown_worker_key(world):
    assert _payload(world, "nobody").to_dict() == {"status": 0}


def test_single_eligible_task_claimed(world, store):
    world.basic_floor()
    worker = world.worker("bot")
    world.transport_routing()
    world.instance("i-1", "r-basic", step=1, location="IN")
    payload = _payload(world, worker["id"])
    assert payload.status == 1
    assert payload.source.to_dict() == store.get("workstations", "IN").body["pose"]
    assert payload.destination.to_dict() == store.get("workstations", "MA").body["pose"]
    assert payload.operation_name == "mill"
    assert payload.part_number == "PN-1"
    # claimed: instance in transit, slot reserved, worker assigned
    assert store.get("instances", "i-1").body["phase"] == "in_transit"
    assert store.get("workstations", "MA").body["occupancy"] == 1
    assert store.get("workers", worker["id"]).body["status"] == "assigned"


def test_battery_below_threshold_parks_worker_charging(world, store):
    world.basic_floor()
    worker = world.worker("lowbot", battery=0.10)
    world.transport_routing()
    world.instance("i-1", "r-basic", step=1, location="IN")
    payload = _payload(world, worker["id"])
    assert payload.to_dict() == {"status": 0}
    assert store.get("workers", worker["id"]).body["status"] == "charging"
    kinds = [(e.kind, e.payload.get("action")) for e in store.read_audit(0)]
    assert (EventKind.WORKER_ACTIVITY, "battery_low") in kinds
    # the instance stays available for healthy workers
    assert store.get("instances", "i-1").body["phase"] == "awaiting_transport"


def test_battery_at_threshold_still_works(world, store):
    world.basic_floor()
    worker = world.worker("edge", battery=0.20)
    world.transport_routing()
    world.instance("i-1", "r-basic", step=1, location="IN")
    assert _payload(world, worker["id"]).status == 1


def test_repoll_returns_identical_payload(world):
    world.basic_floor()
    worker = world.worker("bot")
    world.transport_routing()
    world.instance("i-1", "r-basic", step=1, location="IN")
    first = _payload(world, worker["id"]).to_dict()
    second = _payload(world, worker["id"]).to_dict()
    assert first == second
    assert json.dumps(first, sort_keys=True) == json.dumps(second, sort_keys=True)


def test_no_claimable_work_returns_status_zero_without_assignment(world, store):
    world.basic_floor()
    worker = world.worker("bot")
    world.transport_routing()
    payload = _payload(world, worker["id"])
    assert payload.to_dict() == {"status": 0}
    assert all(e.kind is not EventKind.TASK_ASSIGNED for e in store.read_audit(0))
    assert store.get("workers", worker["id"]).body["status"] == "idle"


def test_charging_worker_recovers_when_battery_reported_healthy(world, store):
    world.basic_floor()
    worker = world.worker("bot", battery=0.05)
    world.transport_routing()
    world.instance("i-1", "r-basic", step=1, location="IN")
    assert _payload(world, worker["id"]).status == 0
    doc = store.get("workers", worker["id"])
    store.put("workers", worker["id"], {**doc.body, "battery": 0.9}, expected_version=doc.version)
    assert _payload(world, worker["id"]).status == 1


def test_concurrent_polls_one_winner(world, store):
    world.basic_floor()
    workers = [world.worker(f"bot{i}") for i in range(4)]
    world.transport_routing()
    world.instance("i-1", "r-basic", step=1, location="IN")
    barrier = threading.Barrier(len(workers))
    results = []
    lock = threading.Lock()

    def poll(worker_id):
        barrier.wait()
        payload = _payload(world, worker_id)
        with lock:
            results.append(payload.status)

    threads = [threading.Thread(target=poll, args=(w["id"],)) for w in workers]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert sorted(results) == [0, 0, 0, 1]
    assigned = [e for e in store.read_audit(0) if e.kind is EventKind.TASK_ASSIGNED]
    assert len(assigned) == 1


def test_status_one_iff_task_assigned_event(world, store):
    world.basic_floor()
    worker = world.worker("bot")
    world.transport_routing()
    world.instance("i-1", "r-basic", step=1, location="IN")
    before = len([e for e in store.read_audit(0) if e.kind is EventKind.TASK_ASSIGNED])
    payload = _payload(world, worker["id"])
    after = [e for e in store.read_audit(0) if e.kind is EventKind.TASK_ASSIGNED]
    assert payload.status == 1
    assert len(after) == before + 1
    assert after[-1].payload["job_id"] == payload.job_id


def test_priority_dominance_under_repeated_claims(world, store):
    """While a higher-priority task remains unclaimed, no lower one is handed out."""
    world.basic_floor()
    world.station("OUT2", "outfeed", (11, 0), capacity=8)
    worker = world.worker("bot")
    world.transport_routing("r-low", priority=1)
    world.transport_routing("r-high", priority=7)
    world.instance("low-1", "r-low", step=1, location="IN", created_at=0.0)
    world.instance("high-1", "r-high", step=1, location="IN", created_at=50.0)
    payload = _payload(world, worker["id"])
    assert payload.instance_id == "high-1"


# -- reclaim -----------------------------------------------------------------------------------------


def test_reclaim_with_no_stale_jobs(world, store, clock):
    assert reclaim_stale_jobs(store, world.service.config, clock.now()) == []


def _claim_one(world, worker_id):
    payload = _payload(world, worker_id)
    assert payload.status == 1
    return payload


def test_silent_worker_job_reclaimed_and_reselectable(world, store, clock):
    world.basic_floor()
    worker = world.worker("bot")
    world.transport_routing()
    world.instance("i-1", "r-basic", step=1, location="IN")
    _claim_one(world, worker["id"])

    clock.advance(world.service.config.stale_job_timeout + 1.0)
    reclaimed = reclaim_stale_jobs(store, world.service.config, clock.now())
    assert len(reclaimed) == 1
    inst = store.get("instances", "i-1").body
    assert inst["phase"] == "awaiting_transport"
    assert inst["location"] == "IN"
    assert store.get("workstations", "MA").body["occupancy"] == 0
    assert store.get("workers", worker["id"]).body["status"] == "offline"

    fresh = world.worker("bot2")
    assert _payload(world, fresh["id"]).status == 1


def test_worker_reporting_just_under_timeout_keeps_job(world, store, clock):
    world.basic_floor()
    worker = world.worker("bot")
    world.transport_routing()
    world.instance("i-1", "r-basic", step=1, location="IN")
    payload = _claim_one(world, worker["id"])

    clock.advance(world.service.config.stale_job_timeout - 1.0)
    world.service.worker_job_progress(
        {"key": worker["id"], "job_id": payload.job_id, "phase": "en_route_to_source"}
    )
    assert reclaim_stale_jobs(store, world.service.config, clock.now()) == []
    assert store.get("instances", "i-1").body["phase"] == "in_transit"


# -- determinism and oracle equivalence ------------------------------------------------------------------


def _clone_store(store):
    clone = DocumentStore()
    for collection in ("workers", "workstations", "routings", "instances", "jobs"):
        for doc in store.query(collection):
            clone.put(collection, doc.id, json.loads(json.dumps(doc.body)), expected_version=None)
    return clone


def test_select_is_deterministic_on_frozen_state(world, store):
    world.basic_floor()
    worker = world.worker("bot")
    world.transport_routing()
    for i in range(5):
        world.instance(f"i-{i}", "r-basic", step=1, location="IN", created_at=float(i % 2))
    cfg = world.service.config
    ids_a = SequentialIds()
    ids_b = SequentialIds()
    a = select_next_job(worker["id"], _clone_store(store), cfg, 0.0, ids_a)
    b = select_next_job(worker["id"], _clone_store(store), cfg, 0.0, ids_b)
    assert a.to_dict() == b.to_dict()


def test_oracle_equivalence_randomized_worlds():
    rng = random.Random(20240817)
    cfg = SchedulerConfig()
    mismatches = []
    for trial in range(150):
        store, worker_ids = build_random_world(rng)
        worker_id = rng.choice(worker_ids)
        expected = brute_force_best(store, worker_id)
        payload = select_next_job(worker_id, store, cfg, 0.0, SequentialIds())
        if expected is None:
            if payload.status != 0:
                mismatches.append((trial, "expected no work", payload.to_dict()))
        else:
            if payload.status != 1:
                mismatches.append((trial, "expected work", expected))
            elif payload.instance_id != expected["instance_id"]:
                mismatches.append((trial, expected, payload.to_dict()))
            else:
                job = store.query("jobs")[0].body
                if job["destination_station"] != expected["destination"]:
                    mismatches.append((trial, "destination", expected, job))
    assert mismatches == []
