"""pilotkit: pilot-style resource placeholders, late-binding unit
scheduling, affinity-aware data staging and a deterministic in-memory
map-reduce engine, all runnable on emulated local, batch and
container-granting backends.
"""

from .descriptions import (
    ComputeUnitDescription,
    DataUnitDescription,
    ItemRef,
    PilotComputeDescription,
    PilotDataDescription,
    UnitKind,
    parse_backend_url,
    validate,
)
from .errors import (
    AllocFailedError,
    CapacityUnsatisfiableError,
    IllegalTransitionError,
    PilotError,
    TaskFailedError,
    ValidationError,
)
from .events import EventLog, EventRecord
from .manager import PilotManager, PlacementReason, ScheduleMode, locality_score
from .memory import (
    BatchMapFunction,
    FileStoreBackend,
    InProcessStoreBackend,
    MemoryEngine,
)
from .runtime import PilotRuntime, RuntimeConfig
from .states import LifecycleEvent, PilotState, UnitState, transition
from .storage import DataUnitManager, StorageService, Tier
from .translation import (
    BackendCapacity,
    BatchRequest,
    ContainerRequest,
    LocalRequest,
    translate_description,
)

__version__ = "0.1.0"

__all__ = [
    "ComputeUnitDescription",
    "DataUnitDescription",
    "ItemRef",
    "PilotComputeDescription",
    "PilotDataDescription",
    "UnitKind",
    "parse_backend_url",
    "validate",
    "AllocFailedError",
    "CapacityUnsatisfiableError",
    "IllegalTransitionError",
    "PilotError",
    "TaskFailedError",
    "ValidationError",
    "EventLog",
    "EventRecord",
    "PilotManager",
    "PlacementReason",
    "ScheduleMode",
    "locality_score",
    "BatchMapFunction",
    "FileStoreBackend",
    "InProcessStoreBackend",
    "MemoryEngine",
    "PilotRuntime",
    "RuntimeConfig",
    "LifecycleEvent",
    "PilotState",
    "UnitState",
    "transition",
    "DataUnitManager",
    "StorageService",
    "Tier",
    "BackendCapacity",
    "BatchRequest",
    "ContainerRequest",
    "LocalRequest",
    "translate_description",
    "__version__",
]
