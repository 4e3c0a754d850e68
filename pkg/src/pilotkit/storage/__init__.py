from .base import MB, Space, StorageService, Tier, TierConfig
from .dataunits import DataUnit, DataUnitManager, DataUnitState

__all__ = [
    "MB",
    "Space",
    "StorageService",
    "Tier",
    "TierConfig",
    "DataUnit",
    "DataUnitManager",
    "DataUnitState",
]
