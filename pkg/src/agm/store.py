"""Document store with optimistic versioning plus an append-only audit log.

One store handle is shared by all request handlers. Every write is a
compare-and-swap on the document version, serialized by a single lock, so
committed versions of a document are always 0,1,2,... with no duplicates.

The file backend journals each collection to ``<data_dir>/<collection>.jsonl``
and the audit log to ``<data_dir>/audit.jsonl``, one JSON object per line.
A torn final line (crash mid-write) is discarded on reopen, then the file is
truncated back to the valid prefix so later appends stay parseable.
Compaction rewrites ``<collection>.jsonl.tmp`` and atomically renames it.
Passing ``data_dir=None`` keeps everything in memory; both modes behave
identically apart from durability.
"""

from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from .domain import AuditEvent, EventKind

COLLECTIONS = ("workers", "workstations", "routings", "instances", "jobs")

# Compact a journal once it carries this many lines beyond the live document count.
_COMPACT_SLACK = 2000


class StoreError(Exception):
    """Base class for store failures."""


class NotFound(StoreError):
    def __init__(self, collection: str, doc_id: str):
        super().__init__(f"{collection}/{doc_id} not found")
        self.collection = collection
        self.doc_id = doc_id


class AlreadyExists(StoreError):
    def __init__(self, collection: str, doc_id: str):
        super().__init__(f"{collection}/{doc_id} already exists")
        self.collection = collection
        self.doc_id = doc_id


class VersionConflict(StoreError):
    def __init__(self, collection: str, doc_id: str, expected: int, actual: int):
        super().__init__(
            f"{collection}/{doc_id}: expected version {expected}, stored version {actual}"
        )
        self.collection = collection
        self.doc_id = doc_id
        self.expected = expected
        self.actual = actual


class UnknownCollection(StoreError):
    def __init__(self, collection: str):
        super().__init__(f"unknown collection {collection!r}")
        self.collection = collection


@dataclass(frozen=True)
class Document:
    collection: str
    id: str
    version: int
    body: dict[str, Any]


def _load_journal_lines(path: Path) -> list[dict[str, Any]]:
    """Parse a JSONL file up to the first torn or invalid line, then truncate
    the file back to that valid prefix."""
    if not path.exists():
        return []
    records: list[dict[str, Any]] = []
    valid_bytes = 0
    with path.open("rb") as fh:
        for raw in fh:
            if not raw.endswith(b"\n"):
                break  # torn final line
            try:
                record = json.loads(raw.decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError):
                break
            if not isinstance(record, dict):
                break
            records.append(record)
            valid_bytes += len(raw)
    if valid_bytes != path.stat().st_size:
        with path.open("r+b") as fh:
            fh.truncate(valid_bytes)
    return records


class DocumentStore:
    """Versioned documents in fixed collections plus a gap-free audit log."""

    def __init__(self, data_dir: str | Path | None = None, fsync: bool = False):
        self._lock = threading.RLock()
        self._audit_cond = threading.Condition(self._lock)
        self._fsync = fsync
        self._docs: dict[str, dict[str, tuple[int, dict[str, Any]]]] = {
            name: {} for name in COLLECTIONS
        }
        self._audit: list[AuditEvent] = []
        self._journal_lines: dict[str, int] = {name: 0 for name in COLLECTIONS}
        self._data_dir: Path | None = None
        self._files: dict[str, Any] = {}
        if data_dir is not None:
            self._data_dir = Path(data_dir)
            self._data_dir.mkdir(parents=True, exist_ok=True)
            self._recover()

    # -- documents -------------------------------------------------------------

    def put(
        self,
        collection: str,
        doc_id: str,
        body: dict[str, Any],
        expected_version: int | None = None,
    ) -> int:
        """Create (expected_version=None) or CAS-update a document.

        Returns the committed version: 0 on create, old+1 on update.
        """
        self._check_collection(collection)
        with self._lock:
            current = self._docs[collection].get(doc_id)
            if expected_version is None:
                if current is not None:
                    raise AlreadyExists(collection, doc_id)
                new_version = 0
            else:
                if current is None:
                    raise NotFound(collection, doc_id)
                if current[0] != expected_version:
                    raise VersionConflict(collection, doc_id, expected_version, current[0])
                new_version = current[0] + 1
            self._docs[collection][doc_id] = (new_version, body)
            self._journal(collection, {"id": doc_id, "version": new_version, "body": body})
            return new_version

    def get(self, collection: str, doc_id: str) -> Document:
        self._check_collection(collection)
        with self._lock:
            current = self._docs[collection].get(doc_id)
            if current is None:
                raise NotFound(collection, doc_id)
            return Document(collection, doc_id, current[0], current[1])

    def query(
        self,
        collection: str,
        where: dict[str, Any] | None = None,
        predicate: Callable[[dict[str, Any]], bool] | None = None,
    ) -> list[Document]:
        """All documents matching the field-equality filter ``where`` and the
        optional extra predicate. Order is by document id for determinism."""
        self._check_collection(collection)
        with self._lock:
            items = sorted(self._docs[collection].items())
        out = []
        for doc_id, (version, body) in items:
            if where and any(body.get(k) != v for k, v in where.items()):
                continue
            if predicate is not None and not predicate(body):
                continue
            out.append(Document(collection, doc_id, version, body))
        return out

    def delete(self, collection: str, doc_id: str, expected_version: int | None = None) -> None:
        self._check_collection(collection)
        with self._lock:
            current = self._docs[collection].get(doc_id)
            if current is None:
                raise NotFound(collection, doc_id)
            if expected_version is not None and current[0] != expected_version:
                raise VersionConflict(collection, doc_id, expected_version, current[0])
            del self._docs[collection][doc_id]
            self._journal(collection, {"id": doc_id, "version": current[0] + 1, "deleted": True})

    # -- audit log ---------------------------------------------------------------

    def append_audit(
        self,
        kind: EventKind | str,
        subject_id: str,
        payload: dict[str, Any],
        timestamp: float,
    ) -> int:
        """Durably append one event; returns its seq (strictly increasing, gap-free)."""
        event_kind = EventKind(kind)
        with self._lock:
            seq = len(self._audit)
            event = AuditEvent(seq, timestamp, event_kind, subject_id, payload)
            self._audit.append(event)
            if self._data_dir is not None:
                self._write_line("audit", event.to_dict())
            self._audit_cond.notify_all()
            return seq

    def read_audit(self, since_seq: int = 0) -> list[AuditEvent]:
        if since_seq < 0:
            raise ValueError("since_seq must be >= 0")
        with self._lock:
            return self._audit[since_seq:]

    def audit_length(self) -> int:
        with self._lock:
            return len(self._audit)

    def wait_audit(self, since_seq: int, timeout: float | None = None) -> list[AuditEvent]:
        """Events with seq >= since_seq, blocking up to timeout for new ones."""
        with self._audit_cond:
            if len(self._audit) <= since_seq:
                self._audit_cond.wait(timeout)
            return self._audit[since_seq:]

    # -- file backend ------------------------------------------------------------

    def _check_collection(self, collection: str) -> None:
        if collection not in self._docs:
            raise UnknownCollection(collection)

    def _path(self, name: str) -> Path:
        assert self._data_dir is not None
        return self._data_dir / f"{name}.jsonl"

    def _file(self, name: str):
        handle = self._files.get(name)
        if handle is None:
            handle = self._path(name).open("ab")
            self._files[name] = handle
        return handle

    def _write_line(self, name: str, record: dict[str, Any]) -> None:
        line = json.dumps(record, separators=(",", ":"), ensure_ascii=False) + "\n"
        handle = self._file(name)
        handle.write(line.encode("utf-8"))
        handle.flush()
        if self._fsync:
            os.fsync(handle.fileno())

    def _journal(self, collection: str, record: dict[str, Any]) -> None:
        if self._data_dir is None:
            return
        self._write_line(collection, record)
        self._journal_lines[collection] += 1
        live = len(self._docs[collection])
        if self._journal_lines[collection] > live + _COMPACT_SLACK:
            self._compact(collection)

    def _compact(self, collection: str) -> None:
        """Rewrite a journal with one record per live document, atomically."""
        path = self._path(collection)
        tmp = path.with_suffix(".jsonl.tmp")
        handle = self._files.pop(collection, None)
        if handle is not None:
            handle.close()
        with tmp.open("wb") as fh:
            for doc_id, (version, body) in sorted(self._docs[collection].items()):
                record = {"id": doc_id, "version": version, "body": body}
                fh.write(json.dumps(record, separators=(",", ":"), ensure_ascii=False).encode("utf-8"))
                fh.write(b"\n")
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
        self._journal_lines[collection] = len(self._docs[collection])

    def _recover(self) -> None:
        assert self._data_dir is not None
        for collection in COLLECTIONS:
            records = _load_journal_lines(self._path(collection))
            table: dict[str, tuple[int, dict[str, Any]]] = {}
            for record in records:
                doc_id = record.get("id")
                if not isinstance(doc_id, str):
                    continue
                if record.get("deleted"):
                    table.pop(doc_id, None)
                else:
                    table[doc_id] = (record["version"], record["body"])
            self._docs[collection] = table
            self._journal_lines[collection] = len(records)
        events: list[AuditEvent] = []
        for record in _load_journal_lines(self._data_dir / "audit.jsonl"):
            try:
                event = AuditEvent.from_dict(record)
            except (KeyError, ValueError):
                break
            if event.seq != len(events):
                break  # keep only the gap-free prefix
            events.append(event)
        self._audit = events
        if len(events) != self._count_audit_lines():
            self._rewrite_audit()

    def _count_audit_lines(self) -> int:
        path = self._data_dir / "audit.jsonl" if self._data_dir else None
        if path is None or not path.exists():
            return 0
        with path.open("rb") as fh:
            return sum(1 for _ in fh)

    def _rewrite_audit(self) -> None:
        """Drop any non-prefix audit lines found during recovery."""
        assert self._data_dir is not None
        path = self._data_dir / "audit.jsonl"
        tmp = path.with_suffix(".jsonl.tmp")
        with tmp.open("wb") as fh:
            for event in self._audit:
                fh.write(json.dumps(event.to_dict(), separators=(",", ":"), ensure_ascii=False).encode("utf-8"))
                fh.write(b"\n")
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)

    def close(self) -> None:
        with self._lock:
            for handle in self._files.values():
                handle.close()
            self._files.clear()

    def __enter__(self) -> DocumentStore:
        return self

    def __exit__(self, *exc: Any) -> None:
        self.close()
