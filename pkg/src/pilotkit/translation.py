"""Translate a compute description into a backend-specific request.

Each backend speaks a different allocation currency: the local backend
takes cores directly, batch schedulers take whole nodes, and container
allocators take a container count plus a per-container memory size. The
translation must conserve the request: granted cores and memory are never
less than what the description asked for.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .descriptions import parse_backend_url
from .errors import CapacityUnsatisfiableError

# The coordinating master container always gets this much, independent of
# the per-worker memory derived from the description.
APP_MASTER_MEMORY_MB = 256


@dataclass(frozen=True)
class BackendCapacity:
    """Static size of an emulated resource: what could ever be granted."""

    n_nodes: int
    cores_per_node: int
    memory_per_node_mb: int

    @property
    def total_cores(self) -> int:
        return self.n_nodes * self.cores_per_node

    @property
    def total_memory_mb(self) -> int:
        return self.n_nodes * self.memory_per_node_mb


@dataclass(frozen=True)
class LocalRequest:
    cores: int
    memory_mb: int


@dataclass(frozen=True)
class BatchRequest:
    """Whole-node allocation: nodes = ceil(cores / cores_per_node)."""

    nodes: int
    cores_per_node: int
    memory_mb: int
    walltime_min: int
    queue_name: str


@dataclass(frozen=True)
class ContainerRequest:
    """Two-stage allocation: one master container, then single-core workers.

    ``n_workers`` equals the requested cores; each worker carries
    ``memory_per_container_mb`` = ceil(memory_mb / cores) so that worker
    memory alone already covers the request.
    """

    n_workers: int
    memory_per_container_mb: int
    master_memory_mb: int
    walltime_min: int


def translate_description(description, capacity: BackendCapacity):
    """Map a validated compute description onto one backend's request type.

    Raises ``CapacityUnsatisfiableError`` when the backend's static
    capacity could never satisfy the description, regardless of current
    load.
    """
    kind, _ = parse_backend_url(description.resource_url)
    cores = description.cores
    memory_mb = description.memory_mb

    if kind == "local":
        if cores > capacity.total_cores or memory_mb > capacity.total_memory_mb:
            raise CapacityUnsatisfiableError(
                f"need {cores} cores / {memory_mb} MB, "
                f"have {capacity.total_cores} / {capacity.total_memory_mb}"
            )
        return LocalRequest(cores=cores, memory_mb=memory_mb)

    if kind == "batch-emu":
        nodes = math.ceil(cores / capacity.cores_per_node)
        if nodes > capacity.n_nodes:
            raise CapacityUnsatisfiableError(
                f"need {nodes} nodes, have {capacity.n_nodes}"
            )
        if memory_mb > nodes * capacity.memory_per_node_mb:
            raise CapacityUnsatisfiableError(
                f"need {memory_mb} MB on {nodes} nodes, "
                f"have {nodes * capacity.memory_per_node_mb}"
            )
        return BatchRequest(
            nodes=nodes,
            cores_per_node=capacity.cores_per_node,
            memory_mb=memory_mb,
            walltime_min=description.walltime_min,
            queue_name=description.queue_name,
        )

    if kind == "yarn-emu":
        if cores > capacity.total_cores:
            raise CapacityUnsatisfiableError(
                f"need {cores} cores, have {capacity.total_cores}"
            )
        per_container = math.ceil(memory_mb / cores)
        total_mb = cores * per_container + APP_MASTER_MEMORY_MB
        if total_mb > capacity.total_memory_mb:
            raise CapacityUnsatisfiableError(
                f"need {total_mb} MB, have {capacity.total_memory_mb}"
            )
        return ContainerRequest(
            n_workers=cores,
            memory_per_container_mb=per_container,
            master_memory_mb=APP_MASTER_MEMORY_MB,
            walltime_min=description.walltime_min,
        )

    raise CapacityUnsatisfiableError(f"no translation for backend kind {kind!r}")
