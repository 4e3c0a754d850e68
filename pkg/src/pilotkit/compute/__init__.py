from .agent import Agent, AgentContext, TaskContext
from .base import (
    AllocationHandle,
    ComputeBackend,
    Container,
    ContainerRole,
    EmulatedClusterConfig,
)
from .batch import BatchQueueBackend
from .cluster import ClusterRuntime, bootstrap_cluster
from .containers import ContainerGrantBackend
from .local import LocalProcessBackend

__all__ = [
    "Agent",
    "AgentContext",
    "TaskContext",
    "AllocationHandle",
    "ComputeBackend",
    "Container",
    "ContainerRole",
    "EmulatedClusterConfig",
    "BatchQueueBackend",
    "ClusterRuntime",
    "bootstrap_cluster",
    "ContainerGrantBackend",
    "LocalProcessBackend",
]
