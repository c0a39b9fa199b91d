"""HTTP surface: the worker-pull protocol, resource CRUD, activation, and a
resumable event stream.

The server is a threading stdlib HTTP server around one AgmService. Protocol
verdicts ride in the body ("status" 1 or 0) with HTTP 200; HTTP error codes
are reserved for transport and validation faults (400 malformed, 404 unknown,
409 version conflict, 422 validation, 500 storage).

The event stream at /api/events is server-sent events: it replays the audit
log from ``since`` and then pushes new events as they commit, each frame
carrying its seq as the SSE id so clients resume where they left off.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import re
import ssl
import threading
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Any
from urllib.parse import parse_qs, urlparse

from .clock import WallClock
from .domain import DomainValidationError, StateConflictError
from .scenario import load_scenario, load_world
from .scheduler import SchedulerConfig
from .service import AgmService, ValidationFailure
from .store import AlreadyExists, DocumentStore, NotFound, StoreError, VersionConflict

log = logging.getLogger(__name__)

# Background pump cadence in wall-clock mode.
_PUMP_INTERVAL = 0.05
_RECLAIM_EVERY = 20  # pumps between stale-job sweeps
_SSE_HEARTBEAT = 10.0

_CRUD_COLLECTIONS = ("workers", "workstations", "routings")
_READONLY_COLLECTIONS = ("instances", "jobs")


@dataclass
class ServerConfig:
    """Runtime configuration, loadable from a JSON file and CLI flags."""

    listen_address: str = "127.0.0.1:8421"
    data_dir: str | None = None
    scheduler: SchedulerConfig = field(default_factory=SchedulerConfig)
    org_id: str = "default"
    tls_cert: str | None = None
    tls_key: str | None = None

    @classmethod
    def from_file(cls, path: str | Path) -> ServerConfig:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(
            listen_address=raw.get("listen_address", "127.0.0.1:8421"),
            data_dir=raw.get("data_dir"),
            scheduler=SchedulerConfig.from_dict(raw.get("scheduler", {})),
            org_id=raw.get("org_id", "default"),
            tls_cert=(raw.get("tls") or {}).get("cert"),
            tls_key=(raw.get("tls") or {}).get("key"),
        )

    def host_port(self) -> tuple[str, int]:
        host, _, port = self.listen_address.rpartition(":")
        if not host:
            raise ValueError(f"listen_address must be host:port, got {self.listen_address!r}")
        return host, int(port)


class ApiError(Exception):
    def __init__(self, status: int, body: dict[str, Any]):
        super().__init__(body.get("error", "error"))
        self.status = status
        self.body = body


class AgmHTTPServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, addr: tuple[str, int], service: AgmService, ui_dir: Path | None = None):
        super().__init__(addr, ApiHandler)
        self.service = service
        self.ui_dir = ui_dir
        self.stopping = threading.Event()


class ApiHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server: AgmHTTPServer

    # -- plumbing -----------------------------------------------------------------

    def log_message(self, fmt: str, *args: Any) -> None:
        log.debug("%s %s", self.address_string(), fmt % args)

    @property
    def service(self) -> AgmService:
        return self.server.service

    def _json_body(self) -> dict[str, Any]:
        length = int(self.headers.get("Content-Length") or 0)
        raw = self.rfile.read(length) if length else b""
        if not raw:
            return {}
        try:
            body = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ApiError(400, {"error": f"invalid JSON body: {exc}"}) from exc
        if not isinstance(body, dict):
            raise ApiError(400, {"error": "JSON body must be an object"})
        return body

    def _send_json(self, status: int, body: Any) -> None:
        data = json.dumps(body).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(data)

    def _dispatch(self, method: str) -> None:
        parsed = urlparse(self.path)
        query = {k: v[-1] for k, v in parse_qs(parsed.query).items()}
        try:
            self._route(method, parsed.path, query)
        except ApiError as exc:
            self._send_json(exc.status, exc.body)
        except NotFound as exc:
            self._send_json(404, {"error": str(exc)})
        except (VersionConflict, AlreadyExists, StateConflictError) as exc:
            self._send_json(409, {"error": str(exc)})
        except ValidationFailure as exc:
            self._send_json(422, {"error": "validation failed", "violations": exc.violations})
        except (DomainValidationError, ValueError) as exc:
            self._send_json(422, {"error": str(exc)})
        except StoreError as exc:
            self._send_json(500, {"error": str(exc)})
        except (BrokenPipeError, ConnectionResetError):
            pass
        except Exception as exc:  # noqa: BLE001 - last-resort 500 with log
            log.exception("unhandled error for %s %s", method, self.path)
            try:
                self._send_json(500, {"error": f"internal error: {exc}"})
            except (BrokenPipeError, ConnectionResetError):
                pass

    def do_GET(self) -> None:
        self._dispatch("GET")

    def do_POST(self) -> None:
        self._dispatch("POST")

    def do_PUT(self) -> None:
        self._dispatch("PUT")

    def do_DELETE(self) -> None:
        self._dispatch("DELETE")

    # -- routing ---------------------------------------------------------------------

    def _route(self, method: str, path: str, query: dict[str, str]) -> None:
        if path == "/workerGetNextJob" and method == "GET":
            key = query.get("key")
            if not key:
                raise ApiError(400, {"error": "missing key parameter"})
            self._send_json(200, self.service.worker_get_next_job(key))
            return
        if path == "/workerJobProgress" and method == "POST":
            self._send_json(200, self.service.worker_job_progress(self._json_body()))
            return
        if path == "/workerJobComplete" and method == "POST":
            self._send_json(200, self.service.worker_job_complete(self._json_body()))
            return
        if path == "/healthz" and method == "GET":
            self._send_json(200, {"ok": True, "events": self.service.store.audit_length()})
            return
        if path == "/api/events" and method == "GET":
            self._stream_events(query)
            return

        match = re.fullmatch(r"/api/routings/([^/]+)/activate", path)
        if match and method == "POST":
            body = self._json_body()
            quantity = body.get("quantity", 1)
            if not isinstance(quantity, int) or quantity < 1:
                raise ApiError(400, {"error": "quantity must be an integer >= 1"})
            ids = self.service.activate_routing(match.group(1), quantity)
            self._send_json(200, {"instance_ids": ids})
            return

        match = re.fullmatch(r"/api/instances/([^/]+)/cancel", path)
        if match and method == "POST":
            self._send_json(200, self.service.cancel_instance(match.group(1)))
            return

        match = re.fullmatch(r"/api/workstations/([^/]+)/state", path)
        if match and method == "POST":
            body = self._json_body()
            state = body.get("state")
            if state not in ("down", "free"):
                raise ApiError(400, {"error": "state must be 'down' or 'free'"})
            self._send_json(200, self.service.set_workstation_state(match.group(1), state))
            return

        match = re.fullmatch(r"/api/([a-z]+)(?:/([^/]+))?", path)
        if match:
            self._crud(method, match.group(1), match.group(2))
            return

        if path == "/" or path.startswith("/ui"):
            self._serve_ui(path)
            return

        raise ApiError(404, {"error": f"no route for {method} {path}"})

    def _crud(self, method: str, collection: str, doc_id: str | None) -> None:
        if collection in _READONLY_COLLECTIONS:
            if method != "GET":
                raise ApiError(405, {"error": f"{collection} is read-only"})
        elif collection not in _CRUD_COLLECTIONS:
            raise ApiError(404, {"error": f"unknown collection {collection!r}"})

        svc = self.service
        if method == "GET" and doc_id is None:
            self._send_json(200, svc.list_resources(collection))
        elif method == "GET":
            self._send_json(200, svc.get_resource(collection, doc_id))
        elif method == "POST" and doc_id is None:
            body = self._json_body()
            if collection == "workers":
                created = svc.create_worker(body)
            elif collection == "workstations":
                created = svc.create_workstation(body)
            else:
                created = svc.create_routing(body)
            self._send_json(201, created)
        elif method == "PUT" and doc_id is not None:
            self._send_json(200, svc.update_resource(collection, doc_id, self._json_body()))
        elif method == "DELETE" and doc_id is not None:
            svc.delete_resource(collection, doc_id)
            self._send_json(200, {"deleted": doc_id})
        else:
            raise ApiError(405, {"error": f"unsupported {method} on /api/{collection}"})

    # -- event stream -------------------------------------------------------------------

    def _stream_events(self, query: dict[str, str]) -> None:
        try:
            since = int(query.get("since", "0"))
        except ValueError:
            raise ApiError(400, {"error": "since must be an integer"})
        if since < 0:
            raise ApiError(400, {"error": "since must be >= 0"})

        if query.get("format") == "json":
            # One-shot replay for non-streaming clients.
            events = [e.to_dict() for e in self.service.read_events(since)]
            self._send_json(200, {"events": events})
            return

        self.send_response(200)
        self.send_header("Content-Type", "text/event-stream")
        self.send_header("Cache-Control", "no-store")
        self.send_header("Access-Control-Allow-Origin", "*")
        # Chunked framing so each event flushes through to streaming clients.
        self.send_header("Transfer-Encoding", "chunked")
        self.end_headers()

        def write_chunk(data: bytes) -> None:
            self.wfile.write(f"{len(data):X}\r\n".encode("ascii") + data + b"\r\n")
            self.wfile.flush()

        next_seq = since
        store = self.service.store
        try:
            while not self.server.stopping.is_set():
                events = store.wait_audit(next_seq, timeout=_SSE_HEARTBEAT)
                if not events:
                    write_chunk(b": heartbeat\n\n")
                    continue
                frames = b"".join(
                    f"id: {event.seq}\ndata: {json.dumps(event.to_dict())}\n\n".encode("utf-8")
                    for event in events
                )
                write_chunk(frames)
                next_seq = events[-1].seq + 1
            write_chunk(b"")  # terminating chunk on clean shutdown
        except (BrokenPipeError, ConnectionResetError, TimeoutError):
            self.close_connection = True

    # -- static UI ---------------------------------------------------------------------------

    def _serve_ui(self, path: str) -> None:
        ui_dir = self.server.ui_dir
        if ui_dir is None or not ui_dir.exists():
            raise ApiError(404, {"error": "no UI bundle configured"})
        rel = path[len("/ui"):] if path.startswith("/ui") else path
        rel = rel.lstrip("/") or "index.html"
        target = (ui_dir / rel).resolve()
        if not str(target).startswith(str(ui_dir.resolve())) or not target.is_file():
            raise ApiError(404, {"error": f"no such asset {rel!r}"})
        content_types = {
            ".html": "text/html",
            ".js": "text/javascript",
            ".css": "text/css",
            ".json": "application/json",
            ".map": "application/json",
        }
        data = target.read_bytes()
        self.send_response(200)
        self.send_header("Content-Type", content_types.get(target.suffix, "application/octet-stream"))
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)


def _pump_loop(service: AgmService, stopping: threading.Event) -> None:
    """Fire processing timers and sweep stale jobs until shutdown."""
    counter = 0
    while not stopping.wait(_PUMP_INTERVAL):
        try:
            service.pump_timers()
            counter += 1
            if counter % _RECLAIM_EVERY == 0:
                service.reclaim_stale()
        except Exception:  # noqa: BLE001 - the pump must survive anything
            log.exception("timer pump iteration failed")


def build_server(
    config: ServerConfig,
    service: AgmService | None = None,
    ui_dir: Path | None = None,
) -> AgmHTTPServer:
    if service is None:
        store = DocumentStore(config.data_dir)
        service = AgmService(store, config.scheduler, WallClock(), org_id=config.org_id)
    host, port = config.host_port()
    httpd = AgmHTTPServer((host, port), service, ui_dir=ui_dir)
    if config.tls_cert and config.tls_key:
        context = ssl.SSLContext(ssl.PROTOCOL_TLS_SERVER)
        context.load_cert_chain(config.tls_cert, config.tls_key)
        httpd.socket = context.wrap_socket(httpd.socket, server_side=True)
    return httpd


def serve(config: ServerConfig, scenario_path: str | None = None, ui_dir: Path | None = None) -> None:
    httpd = build_server(config, ui_dir=ui_dir)
    service = httpd.service
    if scenario_path:
        # Preloads the floor (stations, routings, workers); activations stay
        # with whoever drives the run.
        scenario = load_scenario(scenario_path)
        load_world(service, scenario)
    stopping = httpd.stopping
    pump = threading.Thread(target=_pump_loop, args=(service, stopping), daemon=True)
    pump.start()
    host, port = httpd.server_address[:2]
    print(f"agm-server listening on http://{host}:{port}", flush=True)
    try:
        httpd.serve_forever(poll_interval=0.1)
    except KeyboardInterrupt:
        pass
    finally:
        stopping.set()
        httpd.server_close()
        service.store.close()


def main(argv: list[str] | None = None) -> None:
    parser = argparse.ArgumentParser(prog="agm-server", description="Fleet management server")
    parser.add_argument("--listen", default=None, help="host:port to bind (default 127.0.0.1:8421)")
    parser.add_argument("--data-dir", default=None, help="journal directory (env AGM_DATA_DIR)")
    parser.add_argument("--config", default=None, help="JSON config file")
    parser.add_argument("--scenario", default=None, help="scenario file to preload")
    parser.add_argument("--ui-dir", default=None, help="directory of dashboard static files")
    args = parser.parse_args(argv)

    config = ServerConfig.from_file(args.config) if args.config else ServerConfig()
    if args.listen:
        config.listen_address = args.listen
    if args.data_dir:
        config.data_dir = args.data_dir
    elif config.data_dir is None:
        config.data_dir = os.environ.get("AGM_DATA_DIR")

    ui_dir = Path(args.ui_dir) if args.ui_dir else _default_ui_dir()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s")
    serve(config, scenario_path=args.scenario, ui_dir=ui_dir)


def _default_ui_dir() -> Path | None:
    # Serve the dashboard when a built bundle sits next to the repo checkout.
    here = Path(__file__).resolve()
    for base in [Path.cwd(), *here.parents]:
        candidate = base / "frontend" / "dist"
        if (candidate / "index.html").exists():
            return candidate
    return None


if __name__ == "__main__":
    main()
