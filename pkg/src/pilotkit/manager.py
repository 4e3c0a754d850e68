"""Central coordinator: pilot registry, unit queues, and placement.

The manager binds work to pilots late: a unit submitted before any pilot
is up waits in the global queue and is placed the moment a pilot can take
it. All bookkeeping happens under one lock, so observers always see a
consistent registry; agents block on a condition instead of busy-waiting
for completions.
"""

from __future__ import annotations

import threading
import time
from collections import deque
from dataclasses import dataclass, field
from enum import Enum

from .descriptions import (
    ComputeUnitDescription,
    PilotComputeDescription,
    PilotDataDescription,
    validate,
)
from .errors import (
    DuplicateIdError,
    NoPilotsError,
    PilotError,
    TaskFailedError,
    UnknownDataUnitError,
    UnknownPilotError,
    UnknownUnitError,
)
from .events import EventLog
from .states import LifecycleEvent, PilotState, UnitState, transition

DEFAULT_MAX_REQUEUES = 3


class ScheduleMode(str, Enum):
    SOFT_AFFINITY = "soft"
    HARD_AFFINITY = "hard"


class PlacementReason(str, Enum):
    AFFINITY_MATCH = "AFFINITY_MATCH"
    LEAST_UTILIZED = "LEAST_UTILIZED"
    ONLY_CANDIDATE = "ONLY_CANDIDATE"


def locality_score(unit_dc, unit_machine, pilot_dc, pilot_machine) -> int:
    """2 for a machine-label match, 1 for datacenter-only, 0 otherwise.

    A label the unit does not set cannot score; a machine match only
    counts when both sides carry the label and agree.
    """
    if unit_machine is not None and unit_machine == pilot_machine:
        return 2
    if unit_dc is not None and unit_dc == pilot_dc:
        return 1
    return 0


@dataclass(frozen=True)
class PlacementDecision:
    unit_id: str
    pilot_id: str
    locality_score: int
    utilization_at_decision: float
    reason: PlacementReason


@dataclass
class PilotEntry:
    pilot_id: str
    description: PilotComputeDescription
    handle: object
    state: PilotState = PilotState.NEW
    capacity_cores: int = 0
    in_use_cores: int = 0
    queue: deque = field(default_factory=deque)
    local_space: object = None
    cluster: object = None

    @property
    def labels(self):
        return {
            "datacenter": self.description.affinity_datacenter_label,
            "machine": self.description.affinity_machine_label,
        }

    @property
    def utilization(self) -> float:
        return self.in_use_cores / self.capacity_cores if self.capacity_cores else 1.0


@dataclass
class UnitEntry:
    unit_id: str
    description: ComputeUnitDescription
    state: UnitState = UnitState.NEW
    pilot_id: str | None = None
    attempts: int = 0
    submit_seq: int = 0
    exit_code: int | None = None
    failure_reason: str | None = None
    decision: PlacementDecision | None = None


@dataclass
class DataPilotEntry:
    data_pilot_id: str
    description: PilotDataDescription
    space: object


@dataclass(frozen=True)
class UnitAssignment:
    """What an agent receives from one pull: enough to run the unit."""

    unit_id: str
    description: ComputeUnitDescription
    pilot_id: str
    attempt: int


class PilotManager:
    """Linearizable coordination point for pilots, units and data units."""

    def __init__(self, event_log=None, du_manager=None,
                 mode=ScheduleMode.SOFT_AFFINITY, max_requeues=DEFAULT_MAX_REQUEUES):
        self.event_log = event_log if event_log is not None else EventLog()
        self.du_manager = du_manager
        self.mode = ScheduleMode(mode)
        self.max_requeues = max_requeues
        self._lock = threading.RLock()
        self._changed = threading.Condition(self._lock)
        self._pilots: dict[str, PilotEntry] = {}
        self._data_pilots: dict[str, DataPilotEntry] = {}
        self._units: dict[str, UnitEntry] = {}
        self._global_queue: deque[str] = deque()
        self._pilot_counter = 0
        self._unit_counter = 0
        self._dp_counter = 0
        self._submit_counter = 0

    # -- event helpers -------------------------------------------------

    def _pilot_event(self, entry, event, reason):
        old = entry.state
        entry.state = transition(old, event)
        self.event_log.emit(
            "pilot-state", f"pilot:{entry.pilot_id}", old.value, entry.state.value, reason
        )
        self._changed.notify_all()
        return entry.state

    def _unit_event(self, entry, event, reason):
        old = entry.state
        entry.state = transition(old, event)
        self.event_log.emit(
            "unit-state", f"unit:{entry.unit_id}", old.value, entry.state.value, reason,
            pilot=str(entry.pilot_id), attempt=str(entry.attempts),
        )
        self._changed.notify_all()
        return entry.state

    # -- pilot registry ------------------------------------------------

    def register_pilot(self, handle, description, pilot_id=None,
                       capacity_cores=0, local_space=None) -> str:
        """Admit a pilot whose backend allocation is underway.

        The pilot enters PENDING immediately; capacity may start at 0 and
        grow as the backend grants resources.
        """
        description = validate(description)
        with self._lock:
            if pilot_id is None:
                self._pilot_counter += 1
                pilot_id = f"pilot-{self._pilot_counter:06d}"
            if pilot_id in self._pilots:
                raise DuplicateIdError(f"pilot id {pilot_id!r} already registered")
            entry = PilotEntry(
                pilot_id=pilot_id, description=description, handle=handle,
                capacity_cores=capacity_cores, local_space=local_space,
            )
            self._pilots[pilot_id] = entry
            self._pilot_event(entry, LifecycleEvent.SUBMIT, "registered")
            return pilot_id

    def _get_pilot(self, pilot_id) -> PilotEntry:
        if pilot_id not in self._pilots:
            raise UnknownPilotError(f"no pilot {pilot_id!r}")
        return self._pilots[pilot_id]

    def get_pilot(self, pilot_id) -> PilotEntry:
        with self._lock:
            return self._get_pilot(pilot_id)

    def pilots(self) -> list[PilotEntry]:
        with self._lock:
            return list(self._pilots.values())

    def notify_agent_up(self, pilot_id):
        """First agent heartbeat moves the pilot PENDING -> RUNNING."""
        with self._lock:
            entry = self._get_pilot(pilot_id)
            if entry.state is PilotState.PENDING:
                self._pilot_event(entry, LifecycleEvent.AGENT_UP, "agent up")
                self._schedule_pending_locked()

    def update_capacity(self, pilot_id, delta_cores, reason):
        """Grow or shrink a pilot's usable cores (grants, preemptions)."""
        with self._lock:
            entry = self._get_pilot(pilot_id)
            entry.capacity_cores += delta_cores
            self.event_log.emit(
                "capacity", f"pilot:{pilot_id}",
                str(entry.capacity_cores - delta_cores), str(entry.capacity_cores), reason,
            )
            if delta_cores > 0:
                self._schedule_pending_locked()

    def deregister_pilot(self, pilot_id, reason="deregistered"):
        """Graceful removal: queued-but-unstarted units return to the global
        queue, in-flight units drain; the pilot ends CANCELED."""
        with self._lock:
            entry = self._get_pilot(pilot_id)
            self._requeue_pilot_units(entry, reason)
            if not entry.state.is_terminal():
                self._pilot_event(entry, LifecycleEvent.CANCEL, reason)
            self._schedule_pending_locked()

    def fail_pilot(self, pilot_id, reason):
        """Abrupt removal (agent crash, allocation lost): in-flight units are
        requeued too, subject to the attempt cap."""
        with self._lock:
            entry = self._get_pilot(pilot_id)
            self._requeue_pilot_units(entry, reason, include_inflight=True)
            if not entry.state.is_terminal():
                self._pilot_event(entry, LifecycleEvent.ERROR, reason)
            self._schedule_pending_locked()

    def complete_pilot(self, pilot_id, reason="walltime reached"):
        with self._lock:
            entry = self._get_pilot(pilot_id)
            self._requeue_pilot_units(entry, reason)
            if entry.state is PilotState.RUNNING:
                self._pilot_event(entry, LifecycleEvent.EXEC_DONE, reason)
            elif not entry.state.is_terminal():
                self._pilot_event(entry, LifecycleEvent.CANCEL, reason)
            self._schedule_pending_locked()

    def _requeue_pilot_units(self, entry, reason, include_inflight=False):
        queued = [self._units[uid] for uid in entry.queue]
        entry.queue.clear()
        inflight = []
        if include_inflight:
            inflight = [
                u for u in self._units.values()
                if u.pilot_id == entry.pilot_id and not u.state.is_terminal()
                and u.state not in (UnitState.NEW, UnitState.SCHEDULED)
            ]
        for unit in queued + inflight:
            self._requeue_unit_locked(unit, reason)

    # -- data pilots and data units -------------------------------------

    def register_data_pilot(self, description, data_pilot_id=None) -> str:
        """Reserve space per the description and admit it for placement."""
        if self.du_manager is None:
            raise PilotError("manager has no storage attached")
        description = validate(description)
        with self._lock:
            if data_pilot_id is None:
                self._dp_counter += 1
                data_pilot_id = f"dpilot-{self._dp_counter:06d}"
            if data_pilot_id in self._data_pilots:
                raise DuplicateIdError(f"data pilot id {data_pilot_id!r} already registered")
            space = self.du_manager.storage.create_pilot_data(
                description, owner_pilot_id=data_pilot_id
            )
            self._data_pilots[data_pilot_id] = DataPilotEntry(
                data_pilot_id, description, space
            )
            return data_pilot_id

    def data_pilots(self) -> list[DataPilotEntry]:
        with self._lock:
            return list(self._data_pilots.values())

    def submit_data_unit(self, description, du_id=None) -> str:
        """Import a data unit into the best-matching registered data pilot."""
        if self.du_manager is None:
            raise PilotError("manager has no storage attached")
        description = validate(description)
        with self._lock:
            candidates = list(self._data_pilots.values())
        if not candidates:
            raise NoPilotsError("no data pilots registered")

        def rank(dp):
            score = locality_score(
                description.affinity_datacenter_label,
                description.affinity_machine_label,
                dp.space.labels.get("datacenter"),
                dp.space.labels.get("machine"),
            )
            return (-score, -dp.space.free_mb, dp.data_pilot_id)

        chosen = min(candidates, key=rank)
        du = self.du_manager.import_data_unit(description, chosen.space, du_id=du_id)
        return du.du_id

    def get_data_unit(self, du_id):
        if self.du_manager is None:
            raise UnknownDataUnitError(f"no data unit {du_id!r}")
        return self.du_manager.get(du_id)

    # -- unit submission and scheduling ---------------------------------

    def submit_compute_unit(self, description, unit_id=None) -> str:
        """Validate, queue globally, and try to place immediately."""
        description = validate(description)
        with self._lock:
            for du_id in description.input_du_ids + description.output_du_ids:
                try:
                    self.get_data_unit(du_id)
                except Exception:
                    raise UnknownDataUnitError(f"no data unit {du_id!r}") from None
            if unit_id is None:
                self._unit_counter += 1
                unit_id = f"unit-{self._unit_counter:06d}"
            if unit_id in self._units:
                raise DuplicateIdError(f"unit id {unit_id!r} already submitted")
            self._submit_counter += 1
            entry = UnitEntry(
                unit_id=unit_id, description=description, submit_seq=self._submit_counter
            )
            self._units[unit_id] = entry
            self.event_log.emit(
                "unit-state", f"unit:{unit_id}", "-", UnitState.NEW.value, "submitted",
                unit_kind=description.kind.value,
            )
            self._global_queue.append(unit_id)
            self._schedule_pending_locked()
            return unit_id

    def _get_unit(self, unit_id) -> UnitEntry:
        if unit_id not in self._units:
            raise UnknownUnitError(f"no unit {unit_id!r}")
        return self._units[unit_id]

    def get_unit(self, unit_id) -> UnitEntry:
        with self._lock:
            return self._get_unit(unit_id)

    def units(self) -> list[UnitEntry]:
        with self._lock:
            return list(self._units.values())

    def _eligible(self, pilot: PilotEntry, unit: UnitEntry) -> bool:
        if pilot.state is not PilotState.RUNNING:
            return False
        if pilot.in_use_cores + unit.description.cores > pilot.capacity_cores:
            return False
        if self.mode is ScheduleMode.HARD_AFFINITY:
            labels = pilot.labels
            for want, have in (
                (unit.description.affinity_datacenter_label, labels["datacenter"]),
                (unit.description.affinity_machine_label, labels["machine"]),
            ):
                if want is not None and want != have:
                    return False
        return True

    def schedule(self, unit_id) -> PlacementDecision | None:
        """Pick the pilot for one NEW unit, or None if nothing can take it.

        Ranking: locality score desc, utilization asc, pilot id asc. The
        decision reason distinguishes an affinity match from a pure
        load-balancing pick and from a single-candidate fallthrough.
        """
        with self._lock:
            unit = self._get_unit(unit_id)
            if unit.state is not UnitState.NEW:
                return None
            candidates = [
                p for p in self._pilots.values() if self._eligible(p, unit)
            ]
            if not candidates:
                return None
            scored = [
                (
                    -locality_score(
                        unit.description.affinity_datacenter_label,
                        unit.description.affinity_machine_label,
                        p.labels["datacenter"],
                        p.labels["machine"],
                    ),
                    p.utilization,
                    p.pilot_id,
                    p,
                )
                for p in candidates
            ]
            scored.sort(key=lambda t: t[:3])
            neg_score, util, _, pilot = scored[0]
            if -neg_score > 0:
                reason = PlacementReason.AFFINITY_MATCH
            elif len(candidates) > 1:
                reason = PlacementReason.LEAST_UTILIZED
            else:
                reason = PlacementReason.ONLY_CANDIDATE
            decision = PlacementDecision(
                unit_id=unit_id, pilot_id=pilot.pilot_id,
                locality_score=-neg_score, utilization_at_decision=util,
                reason=reason,
            )
            self._place(unit, pilot, decision)
            return decision

    def _place(self, unit, pilot, decision):
        unit.pilot_id = pilot.pilot_id
        unit.decision = decision
        pilot.in_use_cores += unit.description.cores
        pilot.queue.append(unit.unit_id)
        try:
            self._global_queue.remove(unit.unit_id)
        except ValueError:
            pass
        self._unit_event(unit, LifecycleEvent.ALLOCATED, decision.reason.value)
        self.event_log.emit(
            "placement", f"unit:{unit.unit_id}", "-", pilot.pilot_id,
            decision.reason.value,
            score=str(decision.locality_score),
            utilization=f"{decision.utilization_at_decision:.6f}",
        )

    def _schedule_pending_locked(self):
        # Units are considered in submit order; one pass per wake-up.
        for unit_id in list(self._global_queue):
            self.schedule(unit_id)

    def schedule_pending(self):
        with self._lock:
            self._schedule_pending_locked()

    # -- agent-facing operations ----------------------------------------

    def pull_next(self, pilot_id) -> UnitAssignment | None:
        """Hand the oldest queued unit of this pilot to an agent.

        Each queued unit is handed out exactly once per attempt; the unit
        moves to STAGING_IN as it leaves the queue.
        """
        with self._lock:
            entry = self._get_pilot(pilot_id)
            while entry.queue:
                unit = self._units[entry.queue.popleft()]
                if unit.state is not UnitState.SCHEDULED:
                    continue  # canceled or requeued while queued
                self._unit_event(unit, LifecycleEvent.AGENT_UP, "pulled by agent")
                return UnitAssignment(
                    unit_id=unit.unit_id, description=unit.description,
                    pilot_id=pilot_id, attempt=unit.attempts,
                )
            return None

    def _stale(self, unit, attempt) -> bool:
        # Reports from an attempt that was requeued away must not touch
        # the unit's current incarnation.
        return attempt is not None and attempt != unit.attempts

    def report_stage_done(self, unit_id, attempt=None):
        with self._lock:
            unit = self._get_unit(unit_id)
            if self._stale(unit, attempt):
                return
            if unit.state is UnitState.STAGING_IN:
                self._unit_event(unit, LifecycleEvent.STAGE_DONE, "inputs resident")

    def report_exec_done(self, unit_id, exit_code=0, attempt=None):
        with self._lock:
            unit = self._get_unit(unit_id)
            if self._stale(unit, attempt):
                return
            if unit.state is UnitState.RUNNING:
                unit.exit_code = exit_code
                self._unit_event(unit, LifecycleEvent.EXEC_DONE, "execution finished")

    def complete_unit(self, unit_id, ok=True, reason="", attempt=None):
        """Final agent report. ``ok`` drives OUT_DONE, otherwise ERROR; the
        pilot's cores come back either way."""
        with self._lock:
            unit = self._get_unit(unit_id)
            if self._stale(unit, attempt) or unit.state.is_terminal():
                return
            if ok:
                if unit.state is UnitState.RUNNING:
                    self._unit_event(unit, LifecycleEvent.EXEC_DONE, "execution finished")
                self._unit_event(unit, LifecycleEvent.OUT_DONE, reason or "outputs placed")
            else:
                unit.failure_reason = reason or "execution failed"
                self._unit_event(unit, LifecycleEvent.ERROR, unit.failure_reason)
            self._release_cores(unit)
            self._schedule_pending_locked()

    def _release_cores(self, unit):
        if unit.pilot_id is not None:
            pilot = self._pilots.get(unit.pilot_id)
            if pilot is not None:
                pilot.in_use_cores -= unit.description.cores
            unit.pilot_id = None

    def requeue_unit(self, unit_id, reason):
        with self._lock:
            self._requeue_unit_locked(self._get_unit(unit_id), reason)
            self._schedule_pending_locked()

    def _requeue_unit_locked(self, unit, reason):
        """Start a new attempt for a unit whose pilot went away.

        Not a state-machine edge: the attempt counter advances and the
        unit re-enters NEW, or FAILED once the cap is exhausted.
        """
        if unit.state.is_terminal():
            return
        old = unit.state
        self._release_cores(unit)
        unit.attempts += 1
        if unit.attempts > self.max_requeues:
            unit.failure_reason = f"retry budget exhausted: {reason}"
            self._unit_event(unit, LifecycleEvent.ERROR, unit.failure_reason)
            return
        unit.state = UnitState.NEW
        unit.decision = None
        self.event_log.emit(
            "requeue", f"unit:{unit.unit_id}", old.value, UnitState.NEW.value, reason,
            attempt=str(unit.attempts),
        )
        self._changed.notify_all()
        if unit.unit_id not in self._global_queue:
            self._global_queue.append(unit.unit_id)

    def cancel_unit(self, unit_id, reason="canceled"):
        with self._lock:
            unit = self._get_unit(unit_id)
            if unit.state.is_terminal():
                return
            if unit.state is not UnitState.NEW:
                self._release_cores(unit)
            try:
                self._global_queue.remove(unit_id)
            except ValueError:
                pass
            self._unit_event(unit, LifecycleEvent.CANCEL, reason)

    # -- waiting ---------------------------------------------------------

    def wait_for_units(self, unit_ids, timeout=None) -> bool:
        """Block until every listed unit is terminal; False on timeout."""
        unit_ids = list(unit_ids)
        end = None if timeout is None else time.monotonic() + timeout
        with self._lock:
            while True:
                if all(self._get_unit(u).state.is_terminal() for u in unit_ids):
                    return True
                remaining = None if end is None else end - time.monotonic()
                if remaining is not None and remaining <= 0:
                    return False
                self._changed.wait(remaining)

    def wait_for_pilot_state(self, pilot_id, states, timeout=None) -> bool:
        states = set(states)
        end = None if timeout is None else time.monotonic() + timeout
        with self._lock:
            while self._get_pilot(pilot_id).state not in states:
                remaining = None if end is None else end - time.monotonic()
                if remaining is not None and remaining <= 0:
                    return False
                self._changed.wait(remaining)
            return True

    def raise_if_failed(self, unit_ids):
        """After a wait: surface the first failed unit as TASK_FAILED."""
        with self._lock:
            for uid in unit_ids:
                unit = self._get_unit(uid)
                if unit.state is UnitState.FAILED:
                    raise TaskFailedError(
                        uid, unit.attempts,
                        f"{uid} failed: {unit.failure_reason}",
                    )
