"""Append-only event log shared by the manager, backends and agents.

Records carry a process-wide sequence number and a monotonic timestamp, so
ordering assertions never depend on wall-clock resolution. One record per
state transition (or bookkeeping action), formatted as
``timestamp entity old->new reason``.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field


@dataclass(frozen=True)
class EventRecord:
    seq: int
    ts_ns: int
    kind: str
    entity: str
    old: str
    new: str
    reason: str
    detail: dict = field(default_factory=dict, compare=False)

    def format_line(self) -> str:
        return f"{self.ts_ns} {self.entity} {self.old}->{self.new} {self.reason}"


class EventLog:
    """Thread-safe ordered record of everything that happened."""

    def __init__(self):
        self._lock = threading.Lock()
        self._records: list[EventRecord] = []

    def emit(self, kind, entity, old, new, reason, **detail) -> EventRecord:
        with self._lock:
            rec = EventRecord(
                seq=len(self._records),
                ts_ns=time.monotonic_ns(),
                kind=kind,
                entity=entity,
                old=str(old),
                new=str(new),
                reason=reason,
                detail=detail,
            )
            self._records.append(rec)
            return rec

    def records(self, kind=None, entity=None) -> list[EventRecord]:
        """Snapshot of records, optionally filtered by kind and/or entity."""
        with self._lock:
            snap = list(self._records)
        if kind is not None:
            snap = [r for r in snap if r.kind == kind]
        if entity is not None:
            snap = [r for r in snap if r.entity == entity]
        return snap

    def lines(self) -> list[str]:
        return [r.format_line() for r in self.records()]

    def write_to(self, path):
        with open(path, "w", encoding="ascii") as fh:
            for line in self.lines():
                fh.write(line + "\n")
