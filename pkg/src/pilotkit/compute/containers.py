"""Container backend: two-stage allocation with incremental worker grants.

The allocation protocol mirrors container managers: first a master
container comes up to coordinate, then single-core worker containers are
granted one per scheduler tick as room permits. An allocation is usable
from its first worker onward — callers must cope with a subset of what
they asked for — and workers (never the master) can be preempted later,
shrinking the allocation while it keeps running.
"""

from __future__ import annotations

import threading
import time

from ..errors import (
    CapacityUnsatisfiableError,
    PilotError,
    PreemptOnMasterError,
    UnknownContainerError,
)
from ..states import PilotState
from ..translation import ContainerRequest
from .base import AllocationHandle, ComputeBackend, Container, ContainerRole


class ContainerGrantBackend(ComputeBackend):
    kind = "yarn-emu"

    def __init__(self, config=None, event_log=None):
        super().__init__(config, event_log)
        # node -> [free_cores, free_memory_mb]
        self._node_free = {
            n: [self.config.cores_per_node, self.config.memory_per_node_mb]
            for n in self.node_names
        }
        self._active: list[AllocationHandle] = []
        self._deadlines: dict[str, float] = {}
        self._container_seq = 0
        self._thread = threading.Thread(
            target=self._tick_loop, name=f"{self.kind}-ticks", daemon=True
        )
        self._thread.start()

    def allocate(self, request: ContainerRequest) -> AllocationHandle:
        if not isinstance(request, ContainerRequest):
            raise TypeError(
                f"{self.kind} backend takes ContainerRequest, got {type(request).__name__}"
            )
        cap = self.capacity_info()
        if request.n_workers > cap.total_cores:
            raise CapacityUnsatisfiableError(
                f"need {request.n_workers} workers, have {cap.total_cores} cores"
            )
        with self._lock:
            handle = AllocationHandle(self, request)
            handle.master_container = None
            handle.workers_granted = 0
            self._handles.append(handle)
            self._active.append(handle)
            if self.config.pending_timeout_ms is not None:
                self._deadlines[handle.handle_id] = (
                    time.monotonic() + self.config.pending_timeout_ms / 1000.0
                )
            handle._set_state(PilotState.PENDING)
            self._emit(
                handle, "NEW", "PENDING", "queued",
                workers=str(request.n_workers),
                memory_per_container=str(request.memory_per_container_mb),
            )
        return handle

    # -- scheduler ticks -------------------------------------------------

    def _tick_loop(self):
        while not self._closed:
            time.sleep(self.config.tick_ms / 1000.0)
            fired = []
            with self._lock:
                for handle in list(self._active):
                    event = self._advance_one_locked(handle)
                    if event is not None:
                        fired.append(event)
                self._expire_locked(fired)
            for fn, args, kwargs in fired:
                fn(*args, **kwargs)

    def _next_container_id(self):
        self._container_seq += 1
        return f"container-{self._container_seq:06d}"

    def _pick_node(self, cores, memory_mb):
        # Deterministic: most free cores, then most free memory, then name.
        best = None
        for node, (fc, fm) in sorted(self._node_free.items()):
            if fc >= cores and fm >= memory_mb:
                key = (-fc, -fm, node)
                if best is None or key < best[0]:
                    best = (key, node)
        return None if best is None else best[1]

    def _advance_one_locked(self, handle):
        """Grant at most one container to this allocation; returns a
        deferred listener call or None."""
        request = handle.request
        if handle.master_container is None:
            node = self._pick_node(0, request.master_memory_mb)
            if node is None:
                return None
            self._node_free[node][1] -= request.master_memory_mb
            container = Container(
                self._next_container_id(), ContainerRole.APP_MASTER,
                node, 0, request.master_memory_mb,
            )
            handle.master_container = container
            handle.containers[container.container_id] = container
            handle.nodes.append(node)
            self._emit(
                handle, "-", container.container_id, "master-granted",
                role=ContainerRole.APP_MASTER.value, node=node,
                memory=str(request.master_memory_mb),
            )
            return (handle._fire, ("master-granted",), {"container": container})

        if handle.workers_granted >= request.n_workers:
            self._active.remove(handle)
            self._deadlines.pop(handle.handle_id, None)
            return None

        node = self._pick_node(1, request.memory_per_container_mb)
        if node is None:
            return None
        self._node_free[node][0] -= 1
        self._node_free[node][1] -= request.memory_per_container_mb
        container = Container(
            self._next_container_id(), ContainerRole.WORKER,
            node, 1, request.memory_per_container_mb,
        )
        handle.containers[container.container_id] = container
        handle.workers_granted += 1
        handle.granted_cores += 1
        if node not in handle.nodes:
            handle.nodes.append(node)
        self._emit(
            handle, "-", container.container_id, "worker-granted",
            role=ContainerRole.WORKER.value, node=node,
            workers=str(handle.workers_granted),
        )
        first = handle.workers_granted == 1
        if first:
            handle._set_state(PilotState.RUNNING)
            self._emit(handle, "PENDING", "RUNNING", "first worker up")

        def fire():
            handle._fire("worker-granted", container=container)
            if first:
                handle._fire("running")

        return (fire, (), {})

    def _expire_locked(self, fired):
        now = time.monotonic()
        for handle in list(self._active):
            deadline = self._deadlines.get(handle.handle_id)
            if deadline is None or now <= deadline or handle.state is not PilotState.PENDING:
                continue
            self._active.remove(handle)
            self._deadlines.pop(handle.handle_id, None)
            self._release_all_locked(handle)
            handle.failure_reason = "ALLOCATION_TIMEOUT"
            handle._set_state(PilotState.FAILED)
            self._emit(handle, "PENDING", "FAILED", "ALLOCATION_TIMEOUT")
            fired.append((handle._fire, ("failed",), {"reason": "ALLOCATION_TIMEOUT"}))

    # -- shrink and teardown ----------------------------------------------

    def preempt(self, handle, container_id):
        """Take one worker container back. Masters are untouchable;
        preempting an already-preempted container is a no-op."""
        self._require_handle(handle)
        if not self.config.preemption_enabled:
            raise PilotError("preemption is disabled on this backend")
        fire = False
        with self._lock:
            container = handle.containers.get(container_id)
            if container is None:
                raise UnknownContainerError(f"no container {container_id!r}")
            if container.role is ContainerRole.APP_MASTER:
                raise PreemptOnMasterError(container_id)
            if not container.released:
                container.released = True
                self._node_free[container.node][0] += container.cores
                self._node_free[container.node][1] += container.memory_mb
                handle.granted_cores -= 1
                self._emit(
                    handle, container.container_id, "-", "preempted",
                    node=container.node,
                )
                fire = True
        if fire:
            handle._fire("preempted", container=container)

    def _release_all_locked(self, handle):
        for container in handle.containers.values():
            if not container.released:
                container.released = True
                self._node_free[container.node][0] += container.cores
                self._node_free[container.node][1] += container.memory_mb
        handle.granted_cores = 0

    def cancel(self, handle):
        self._require_handle(handle)
        with self._lock:
            if handle.state in (PilotState.DONE, PilotState.FAILED, PilotState.CANCELED):
                return
            if handle in self._active:
                self._active.remove(handle)
            self._deadlines.pop(handle.handle_id, None)
            self._release_all_locked(handle)
            old = handle.state
            handle._set_state(PilotState.CANCELED)
            self._emit(handle, old.value, "CANCELED", "canceled")
        handle._fire("canceled")

    def _stop_workers(self):
        self._thread.join(timeout=2)

    def agent_plan(self, handle):
        return [
            {
                "agent_id": f"{handle.handle_id}-{c.container_id}",
                "slots": 1,
                "node": c.node,
                "container_id": c.container_id,
            }
            for c in handle.containers.values()
            if c.role is ContainerRole.WORKER and not c.released
        ]
