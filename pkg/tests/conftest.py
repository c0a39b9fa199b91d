"""Shared fixtures: in-memory worlds, a simulated clock, and a live HTTP server."""

from __future__ import annotations

import threading

import pytest

from agm.clock import SIM_EPOCH, SimClock
from agm.domain import InstancePhase, RoutingInstance
from agm.scheduler import SchedulerConfig
from agm.server import ServerConfig, _pump_loop, build_server
from agm.service import AgmService, SequentialIds
from agm.store import DocumentStore


@pytest.fixture
def store() -> DocumentStore:
    return DocumentStore()


@pytest.fixture
def clock() -> SimClock:
    return SimClock(SIM_EPOCH)


@pytest.fixture
def service(store: DocumentStore, clock: SimClock) -> AgmService:
    return AgmService(store, SchedulerConfig(), clock, id_factory=SequentialIds())


class World:
    """Builder for small fixture worlds against a service."""

    def __init__(self, service: AgmService):
        self.service = service
        self.store = service.store

    def station(self, station_id: str, station_type: str, pose=(0.0, 0.0), capacity: int = 1):
        return self.service.create_workstation(
            {
                "id": station_id,
                "name": station_id,
                "station_type": station_type,
                "pose": {"x": pose[0], "y": pose[1]},
                "capacity": capacity,
            }
        )

    def worker(self, name: str, group: str = "PO Movement", pose=(0.0, 0.0), battery: float = 1.0):
        return self.service.create_worker(
            {
                "name": name,
                "worker_group": group,
                "pose": {"x": pose[0], "y": pose[1]},
                "battery": battery,
            }
        )

    def routing(self, routing_id: str, steps, part_number: str = "PN-1"):
        return self.service.create_routing(
            {
                "id": routing_id,
                "part_number": part_number,
                "customer": "Fixture Co.",
                "steps": steps,
            }
        )

    def instance(
        self,
        instance_id: str,
        routing_id: str,
        step: int = 0,
        phase: str = "awaiting_transport",
        location: str = "",
        created_at: float | None = None,
    ):
        inst = RoutingInstance(
            id=instance_id,
            routing_id=routing_id,
            current_step=step,
            phase=InstancePhase(phase),
            location=location,
            created_at=created_at if created_at is not None else self.service.now(),
        )
        self.store.put("instances", instance_id, inst.to_dict(), expected_version=None)
        return inst

    def transport_routing(self, routing_id: str = "r-basic", priority: int = 0, duration: float = 0.0):
        """Infeed -> milling -> outfeed recipe over the default fixture floor."""
        return self.routing(
            routing_id,
            [
                {"operation_name": "stage", "station_type": "infeed",
                 "worker_group": "PO Movement", "process_duration": 0.0, "priority": priority},
                {"operation_name": "mill", "station_type": "milling",
                 "worker_group": "PO Movement", "process_duration": duration, "priority": priority},
                {"operation_name": "store", "station_type": "outfeed",
                 "worker_group": "PO Movement", "process_duration": 0.0, "priority": priority},
            ],
        )

    def basic_floor(self):
        self.station("IN", "infeed", (0, 0), capacity=8)
        self.station("MA", "milling", (5, 0), capacity=1)
        self.station("MB", "milling", (5, 4), capacity=1)
        self.station("OUT", "outfeed", (10, 0), capacity=8)


@pytest.fixture
def world(service: AgmService) -> World:
    return World(service)


@pytest.fixture
def live_server(tmp_path):
    """A real HTTP server on a random port with an in-memory store and the
    background timer pump running, torn down after the test."""
    config = ServerConfig(listen_address="127.0.0.1:0", data_dir=None)
    httpd = build_server(config)
    httpd.service.ids = SequentialIds()
    threads = [
        threading.Thread(target=httpd.serve_forever, kwargs={"poll_interval": 0.02}, daemon=True),
        threading.Thread(target=_pump_loop, args=(httpd.service, httpd.stopping), daemon=True),
    ]
    for thread in threads:
        thread.start()
    base = f"http://127.0.0.1:{httpd.server_address[1]}"
    yield httpd, base
    httpd.stopping.set()
    httpd.shutdown()
    httpd.server_close()
