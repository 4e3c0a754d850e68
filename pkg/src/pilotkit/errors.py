"""Error types raised across the toolkit.

Every error carries a stable ``code`` string so callers (and the CLI) can
branch on failure class without matching message text.
"""


class PilotError(Exception):
    """Base class for all toolkit errors."""

    code = "ERROR"

    def __init__(self, message: str = "", **detail):
        super().__init__(message or self.code)
        self.detail = detail


class ValidationError(PilotError):
    """A description or workload document violates its schema.

    ``errors`` lists every violated field, not just the first one found.
    """

    code = "VALIDATION_ERROR"

    def __init__(self, errors, **detail):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors), **detail)


class UnknownBackendError(PilotError):
    code = "UNKNOWN_BACKEND"


class CapacityUnsatisfiableError(PilotError):
    code = "CAPACITY_UNSATISFIABLE"


class IllegalTransitionError(PilotError):
    code = "ILLEGAL_TRANSITION"

    def __init__(self, state, event):
        self.state = state
        self.event = event
        super().__init__(f"no transition from {state} on {event}")


class DuplicateIdError(PilotError):
    code = "DUPLICATE_ID"


class UnknownPilotError(PilotError):
    code = "UNKNOWN_PILOT"


class UnknownDataUnitError(PilotError):
    code = "UNKNOWN_DATA_UNIT"


class UnknownUnitError(PilotError):
    code = "UNKNOWN_UNIT"


class NoPilotsError(PilotError):
    code = "NO_PILOTS"


class AllocationTimeoutError(PilotError):
    code = "ALLOCATION_TIMEOUT"


class AgentSpawnError(PilotError):
    code = "AGENT_SPAWN_FAILED"


class PreemptOnMasterError(PilotError):
    """Preempting the application master is never allowed."""

    code = "PREEMPT_ON_MASTER"


class UnknownContainerError(PilotError):
    code = "UNKNOWN_CONTAINER"


class BootstrapError(PilotError):
    """Cluster bootstrap failed; ``phase`` names the step that broke."""

    code = "BOOTSTRAP_FAILED"

    def __init__(self, phase, message=""):
        self.phase = phase
        super().__init__(message or f"bootstrap failed in phase {phase}", phase=phase)


class InsufficientSpaceError(PilotError):
    code = "INSUFFICIENT_SPACE"


class SpaceExhaustedError(PilotError):
    code = "SPACE_EXHAUSTED"


class SourceNotFoundError(PilotError):
    code = "SOURCE_NOT_FOUND"


class ChecksumMismatchError(PilotError):
    code = "CHECKSUM_MISMATCH"


class DestNotWritableError(PilotError):
    code = "DEST_NOT_WRITABLE"


class DataUnitNotAvailableError(PilotError):
    code = "DU_NOT_AVAILABLE"


class AllocFailedError(PilotError):
    code = "ALLOC_FAILED"


class TaskFailedError(PilotError):
    """A compute unit exhausted its retry budget."""

    code = "TASK_FAILED"

    def __init__(self, unit_id, attempts, message=""):
        self.unit_id = unit_id
        self.attempts = attempts
        super().__init__(message or f"{unit_id} failed after {attempts} attempts")


class PartitionLostError(PilotError):
    code = "PARTITION_LOST"


class BroadcastTooLargeError(PilotError):
    code = "BROADCAST_TOO_LARGE"


class DimensionMismatchError(PilotError):
    code = "DIMENSION_MISMATCH"
