"""Lifecycle state machines for pilots and compute units.

States and events are string enums so they read cleanly in logs and event
records. ``transition`` is a pure function over frozen tables; anything not
listed in a table raises ``IllegalTransitionError`` rather than guessing.
"""

from __future__ import annotations

from enum import Enum

from .errors import IllegalTransitionError


class PilotState(str, Enum):
    """Pilot lifecycle.

    NEW --SUBMIT--> PENDING --AGENT_UP--> RUNNING --EXEC_DONE--> DONE

    PENDING and RUNNING fail on ERROR; CANCEL is accepted from any
    non-terminal state. DONE, FAILED and CANCELED are terminal.
    """

    NEW = "NEW"
    PENDING = "PENDING"
    RUNNING = "RUNNING"
    DONE = "DONE"
    FAILED = "FAILED"
    CANCELED = "CANCELED"

    def is_terminal(self) -> bool:
        return self in PILOT_TERMINAL


class UnitState(str, Enum):
    """Compute-unit lifecycle.

    NEW --ALLOCATED--> SCHEDULED --AGENT_UP--> STAGING_IN --STAGE_DONE-->
    RUNNING --EXEC_DONE--> STAGING_OUT --OUT_DONE--> DONE

    ERROR moves any non-terminal state to FAILED, CANCEL to CANCELED.
    """

    NEW = "NEW"
    SCHEDULED = "SCHEDULED"
    STAGING_IN = "STAGING_IN"
    RUNNING = "RUNNING"
    STAGING_OUT = "STAGING_OUT"
    DONE = "DONE"
    FAILED = "FAILED"
    CANCELED = "CANCELED"

    def is_terminal(self) -> bool:
        return self in UNIT_TERMINAL


class LifecycleEvent(str, Enum):
    SUBMIT = "SUBMIT"
    ALLOCATED = "ALLOCATED"
    AGENT_UP = "AGENT_UP"
    STAGE_DONE = "STAGE_DONE"
    EXEC_DONE = "EXEC_DONE"
    OUT_DONE = "OUT_DONE"
    ERROR = "ERROR"
    CANCEL = "CANCEL"


PILOT_TERMINAL = frozenset({PilotState.DONE, PilotState.FAILED, PilotState.CANCELED})
UNIT_TERMINAL = frozenset({UnitState.DONE, UnitState.FAILED, UnitState.CANCELED})

_E = LifecycleEvent

_PILOT_TABLE = {
    (PilotState.NEW, _E.SUBMIT): PilotState.PENDING,
    (PilotState.NEW, _E.CANCEL): PilotState.CANCELED,
    (PilotState.PENDING, _E.AGENT_UP): PilotState.RUNNING,
    (PilotState.PENDING, _E.ERROR): PilotState.FAILED,
    (PilotState.PENDING, _E.CANCEL): PilotState.CANCELED,
    (PilotState.RUNNING, _E.EXEC_DONE): PilotState.DONE,
    (PilotState.RUNNING, _E.ERROR): PilotState.FAILED,
    (PilotState.RUNNING, _E.CANCEL): PilotState.CANCELED,
}

_UNIT_TABLE = {
    (UnitState.NEW, _E.ALLOCATED): UnitState.SCHEDULED,
    (UnitState.SCHEDULED, _E.AGENT_UP): UnitState.STAGING_IN,
    (UnitState.STAGING_IN, _E.STAGE_DONE): UnitState.RUNNING,
    (UnitState.RUNNING, _E.EXEC_DONE): UnitState.STAGING_OUT,
    (UnitState.STAGING_OUT, _E.OUT_DONE): UnitState.DONE,
}
# ERROR and CANCEL are accepted from every non-terminal unit state.
for _s in UnitState:
    if not _s.is_terminal():
        _UNIT_TABLE[(_s, _E.ERROR)] = UnitState.FAILED
        _UNIT_TABLE[(_s, _E.CANCEL)] = UnitState.CANCELED


def transition(state, event):
    """Return the successor state, or raise ``IllegalTransitionError``.

    Pure: no side effects, total over the frozen tables only. Terminal
    states accept no events at all.
    """
    if isinstance(state, PilotState):
        table = _PILOT_TABLE
    elif isinstance(state, UnitState):
        table = _UNIT_TABLE
    else:
        raise TypeError(f"not a lifecycle state: {state!r}")
    try:
        return table[(state, event)]
    except KeyError:
        raise IllegalTransitionError(state.value, getattr(event, "value", event)) from None
