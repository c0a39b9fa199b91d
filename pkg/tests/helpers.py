"""Shared test machinery: randomized worlds and the brute-force selection oracle.

The oracle restates the scheduler's selection rules literally from their
definition (filter, then sort by the stated keys) and shares no code with the
implementation it checks.
"""

from __future__ import annotations

import math

from agm.domain import (
    InstancePhase,
    Pose3,
    Routing,
    RoutingInstance,
    RoutingStep,
    Worker,
    Workstation,
)
from agm.store import DocumentStore


def build_random_world(rng):
    """A random small floor with awaiting instances; returns (store, worker_ids)."""
    store = DocumentStore()
    types = ["infeed", "milling", "grinding", "outfeed"]
    station_ids = []
    for type_name in types:
        for k in range(rng.randint(1, 3)):
            sid = f"{type_name[:2].upper()}{k}"
            capacity = rng.randint(1, 2)
            occupancy = rng.randint(0, capacity)
            down = rng.random() < 0.15
            station = Workstation(
                id=sid,
                name=sid,
                station_type=type_name,
                pose=Pose3(rng.uniform(-20, 20), rng.uniform(-20, 20)),
                capacity=capacity,
                state=("down" if down else ("occupied" if occupancy >= capacity else "free")),
                occupancy=occupancy,
            )
            store.put("workstations", sid, station.to_dict(), expected_version=None)
            station_ids.append(sid)

    routing = Routing(
        id="r-0",
        part_number="PN-X",
        customer="c",
        steps=[
            RoutingStep(0, "stage", "infeed", "PO Movement"),
            RoutingStep(1, "mill", "milling", "PO Movement", priority=rng.randint(0, 3)),
            RoutingStep(2, "grind", "grinding", "PO Movement", priority=rng.randint(0, 3)),
            RoutingStep(3, "store", "outfeed", "PO Movement"),
        ],
    )
    store.put("routings", "r-0", routing.to_dict(), expected_version=None)

    worker_ids = []
    for i in range(rng.randint(1, 5)):
        wid = f"w-{i}"
        worker = Worker(
            id=wid, name=wid, worker_group="PO Movement",
            pose=Pose3(rng.uniform(-20, 20), rng.uniform(-20, 20)),
            battery=1.0,
        )
        store.put("workers", wid, worker.to_dict(), expected_version=None)
        worker_ids.append(wid)

    for i in range(rng.randint(0, 10)):
        iid = f"i-{i:02d}"
        inst = RoutingInstance(
            id=iid,
            routing_id="r-0",
            current_step=rng.randint(1, 2),
            phase=InstancePhase.AWAITING_TRANSPORT,
            location=rng.choice(station_ids),
            created_at=float(rng.randint(0, 3)),
        )
        store.put("instances", iid, inst.to_dict(), expected_version=None)
    return store, worker_ids


def brute_force_best(store: DocumentStore, worker_id: str):
    """Literal restatement of the whole selection definition, open-coded.

    Returns {"instance_id", "destination"} for the single best claimable task,
    or None when nothing qualifies.
    """
    worker = Worker.from_dict(store.get("workers", worker_id).body)
    stations = {d.id: d.body for d in store.query("workstations")}
    routing = Routing.from_dict(store.get("routings", "r-0").body)
    options = []
    for doc in store.query("instances"):
        inst = doc.body
        if inst["phase"] != "awaiting_transport":
            continue
        step = routing.steps[inst["current_step"]]
        if step.worker_group != worker.worker_group:
            continue
        pool = [
            s for s in stations.values()
            if s["station_type"] == step.station_type
            and s["state"] != "down"
            and s["occupancy"] < s["capacity"]
        ]
        if not pool:
            continue
        destination = min(pool, key=lambda s: (s["occupancy"], s["id"]))
        source = stations.get(inst["location"])
        if source is None:
            continue
        dx = worker.pose.x - source["pose"]["x"]
        dy = worker.pose.y - source["pose"]["y"]
        dz = worker.pose.z - source["pose"]["z"]
        options.append(
            {
                "instance_id": inst["id"],
                "destination": destination["id"],
                "key": (
                    -step.priority,
                    math.sqrt(dx * dx + dy * dy + dz * dz),
                    RoutingInstance.from_dict(inst).created_at,
                    inst["id"],
                ),
            }
        )
    if not options:
        return None
    return min(options, key=lambda o: o["key"])


def contention_world(n_workers: int) -> tuple[DocumentStore, list[str]]:
    """N idle workers and exactly one claimable task."""
    store = DocumentStore()
    for sid, stype in (("IN", "infeed"), ("MA", "milling"), ("OUT", "outfeed")):
        station = Workstation(
            id=sid, name=sid, station_type=stype, pose=Pose3(0, 0), capacity=1
        )
        store.put("workstations", sid, station.to_dict(), expected_version=None)
    routing = Routing(
        id="r-0", part_number="PN-X", customer="c",
        steps=[
            RoutingStep(0, "stage", "infeed", "PO Movement"),
            RoutingStep(1, "mill", "milling", "PO Movement"),
            RoutingStep(2, "store", "outfeed", "PO Movement"),
        ],
    )
    store.put("routings", "r-0", routing.to_dict(), expected_version=None)
    inst = RoutingInstance(
        id="i-0", routing_id="r-0", current_step=1,
        phase=InstancePhase.AWAITING_TRANSPORT, location="IN", created_at=0.0,
    )
    store.put("instances", "i-0", inst.to_dict(), expected_version=None)
    worker_ids = []
    for i in range(n_workers):
        wid = f"w-{i}"
        worker = Worker(id=wid, name=wid, worker_group="PO Movement", pose=Pose3(1, 1))
        store.put("workers", wid, worker.to_dict(), expected_version=None)
        worker_ids.append(wid)
    return store, worker_ids
