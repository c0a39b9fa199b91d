"""Regenerate the recorded event fixture and its matching end-state snapshot.

Drives a small in-memory world through registrations, a full production run,
a station outage, a late activation, and a cancellation, then dumps every
audit event plus the final CRUD state. The dashboard projection test replays
events.json and must land on exactly the model snapshot.json describes.

Usage: python3 generate.py
"""

from __future__ import annotations

import json
from pathlib import Path

from agm.clock import SIM_EPOCH, SimClock
from agm.scheduler import SchedulerConfig
from agm.service import AgmService, SequentialIds
from agm.store import DocumentStore

HERE = Path(__file__).parent


def drive(service: AgmService, clock: SimClock, worker_id: str) -> None:
    """Poll/progress/complete until this worker runs out of work."""
    while True:
        payload = service.worker_get_next_job(worker_id)
        if payload["status"] == 0:
            clock.advance(10.0)
            if not service.pump_timers():
                if service.worker_get_next_job(worker_id)["status"] == 0:
                    break
            continue
        service.worker_job_progress(
            {"key": worker_id, "job_id": payload["job_id"], "phase": "en_route_to_source",
             "pose": payload["source"], "battery": 0.9}
        )
        clock.advance(2.0)
        service.worker_job_progress(
            {"key": worker_id, "job_id": payload["job_id"], "phase": "carrying",
             "pose": payload["destination"], "battery": 0.88}
        )
        clock.advance(2.0)
        service.worker_job_complete({"key": worker_id, "job_id": payload["job_id"]})


def main() -> None:
    clock = SimClock(SIM_EPOCH)
    store = DocumentStore()
    service = AgmService(store, SchedulerConfig(), clock, id_factory=SequentialIds())

    for sid, stype, x in (("IN", "infeed", 0.0), ("M1", "milling", 4.0), ("OUT", "outfeed", 8.0)):
        service.create_workstation(
            {"id": sid, "name": sid, "station_type": stype,
             "pose": {"x": x, "y": 0.0}, "capacity": 4}
        )
    worker = service.create_worker(
        {"name": "fix_bot", "worker_group": "PO Movement", "battery": 1.0}
    )
    service.create_routing(
        {
            "id": "r-fixture",
            "part_number": "PN-FIX",
            "customer": "Fixture Co.",
            "steps": [
                {"operation_name": "stage", "station_type": "infeed",
                 "worker_group": "PO Movement", "process_duration": 0.0},
                {"operation_name": "mill", "station_type": "milling",
                 "worker_group": "PO Movement", "process_duration": 3.0},
                {"operation_name": "store", "station_type": "outfeed",
                 "worker_group": "PO Movement", "process_duration": 0.0},
            ],
        }
    )

    service.activate_routing("r-fixture", 2)
    drive(service, clock, worker["id"])

    # operator interventions and late work left in flight
    service.set_workstation_state("M1", "down")
    service.create_worker({"name": "spare_bot", "worker_group": "PO Movement", "battery": 0.6})
    late = service.activate_routing("r-fixture", 2)
    service.cancel_instance(late[0])

    events = [e.to_dict() for e in store.read_audit(0)]
    snapshot = {
        "workers": service.list_resources("workers"),
        "workstations": service.list_resources("workstations"),
        "routings": service.list_resources("routings"),
        "instances": service.list_resources("instances"),
        "jobs": service.list_resources("jobs"),
    }
    (HERE / "events.json").write_text(json.dumps(events, indent=1) + "\n", encoding="utf-8")
    (HERE / "snapshot.json").write_text(json.dumps(snapshot, indent=1) + "\n", encoding="utf-8")
    print(f"wrote {len(events)} events and a snapshot with "
          f"{len(snapshot['instances'])} instances")


if __name__ == "__main__":
    main()
